"""Schedule compressible image flows over a time-expanded satellite network.

Exit codes: 0 success, 2 usage or input error, 3 validation failure,
4 exact search out of budget.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

from . import harness
from .exact import DEFAULT_BUDGET
from .graph import GraphError
from .milp import build_milp, export_lp
from .model import Assignment, StructuralError, load_flows, validate, write_flows
from .topology import TopologyError, load_adjacency, write_adjacency

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_BUDGET = 0, 2, 3, 4


def _config(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else harness.load_config({})
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "algorithms", None):
        cfg.algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
        bad = [a for a in cfg.algorithms if a not in harness.ALGORITHMS]
        if bad:
            raise harness.ConfigError(f"unknown algorithms {bad}")
    if getattr(args, "no_timing", False):
        cfg.timing = False
    return cfg


def cmd_topology_gen(args) -> int:
    cfg = _config(args)
    slots = harness.topology_slots(cfg)
    text = write_adjacency(slots)
    _emit(text, args.out)
    return EXIT_OK


def cmd_topology_import(args) -> int:
    slots = load_adjacency(args.csv)
    nodes = sorted(set().union(*(st.nodes for st in slots))) if slots else []
    summary = {"slots": len(slots), "nodes": len(nodes), "links": sum(len(st.rate) for st in slots),
               "observation": [n for n in nodes if n.startswith("O")],
               "ground": [n for n in nodes if n.startswith("G")]}
    _emit(json.dumps(summary, indent=1) + "\n", args.out)
    return EXIT_OK


def _scenario(cfg, args):
    slots = harness.topology_slots(cfg)
    n = args.flows if args.flows is not None else cfg.flow_counts[0]
    theta = Fraction(args.theta) if args.theta is not None else cfg.thetas[0]
    return slots, n, theta


def cmd_run(args) -> int:
    cfg = _config(args)
    slots, n, theta = _scenario(cfg, args)
    out = Path(args.out) if args.out else None
    metrics, code = [], EXIT_OK
    flows_written = False
    for algorithm in cfg.algorithms:
        try:
            res = harness.run_cell(cfg, algorithm, n, theta, args.rep, slots)
        except harness.CellFailure as e:
            print(f"{algorithm}: {e}", file=sys.stderr)
            if e.report is not None:
                print(e.report.to_json(), file=sys.stderr)
            code = max(code, e.code)
            continue
        metrics.append(res.metrics)
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / f"assignment_{algorithm}.json").write_text(res.assignment.to_json() + "\n")
            if res.metrics.trace_csv:
                (out / f"trace_{algorithm}.csv").write_text(res.metrics.trace_csv)
            if not flows_written:
                write_flows(res.flows, out / "flows.csv")
                write_adjacency(slots, out / "topology.csv")
                flows_written = True
    text = harness.metrics_text(metrics, args.format)
    if out is not None:
        (out / f"metrics.{args.format}").write_text(text)
        (out / "config.resolved.json").write_text(json.dumps(cfg.resolved(), indent=1) + "\n")
    else:
        sys.stdout.write(text)
    return code


def cmd_sweep(args) -> int:
    cfg = _config(args)
    outcome = harness.run_sweep(cfg, Path(args.out), args.format)
    for cell, code, msg in outcome.failures:
        print(f"cell {cell}: {msg}", file=sys.stderr)
    return outcome.exit_code


def _graph_and_flows(args):
    cfg = _config(args)
    slots = load_adjacency(args.topology) if args.topology else harness.topology_slots(cfg)
    flows = load_flows(args.flows_csv)
    graph = harness.build_graph(cfg, slots, with_compute=not args.no_compute)
    return graph, flows


def cmd_validate(args) -> int:
    graph, flows = _graph_and_flows(args)
    a = Assignment.from_json(Path(args.assignment).read_text())
    try:
        report = validate(graph, flows, a)
    except StructuralError as e:
        print(json.dumps({"feasible": False, "structural_error": str(e)}, indent=1))
        return EXIT_INVALID
    print(report.to_json())
    return EXIT_OK if report.feasible else EXIT_INVALID


def cmd_export_lp(args) -> int:
    graph, flows = _graph_and_flows(args)
    model = build_milp(graph, flows)
    _emit(export_lp(model), args.out)
    return EXIT_OK


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tdisched", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output path (default: stdout)"):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help=out_help)

    topo = sub.add_parser("topology", help="produce or ingest topology CSV")
    tsub = topo.add_subparsers(dest="topology_command", required=True)
    gen = tsub.add_parser("gen", help="generate slot snapshots from the configured constellation")
    common(gen)
    gen.set_defaults(func=cmd_topology_gen)
    imp = tsub.add_parser("import", help="check a topology CSV and summarise it")
    imp.add_argument("csv")
    imp.add_argument("--out")
    imp.set_defaults(func=cmd_topology_import)

    run = sub.add_parser("run", help="run one cell")
    common(run, "directory for metrics, assignments and the scenario (default: metrics to stdout)")
    run.add_argument("--algorithms", help="comma-separated subset of " + ",".join(harness.ALGORITHMS))
    run.add_argument("--flows", type=int, help="flow count (default: first configured)")
    run.add_argument("--theta", help="compression ratio such as 1/2 (default: first configured)")
    run.add_argument("--rep", type=int, default=0)
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.add_argument("--no-timing", action="store_true", help="write 0 wall time for byte-stable output")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="run the configured grid")
    common(sw, "output directory")
    sw.add_argument("--algorithms")
    sw.add_argument("--format", choices=("csv", "json"), default="csv")
    sw.add_argument("--no-timing", action="store_true")
    sw.set_defaults(func=cmd_sweep)

    for name, func, helptext in (("validate", cmd_validate, "check an assignment against a scenario"),
                                 ("export-lp", cmd_export_lp, "write the MILP in LP format")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--topology", help="topology CSV (default: generate from config)")
        sp.add_argument("--flows", dest="flows_csv", required=True, help="flow CSV")
        sp.add_argument("--no-compute", action="store_true", help="graph without compute arcs")
        if name == "validate":
            sp.add_argument("--assignment", required=True, help="assignment JSON")
        sp.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "sweep" and not args.out:
        parser.error("sweep needs --out")
    try:
        return args.func(args)
    except (harness.ConfigError, TopologyError, GraphError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
