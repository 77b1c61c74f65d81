"""Experiment configuration, execution and persistence."""
from __future__ import annotations

import csv
import io
import json
import logging
import random
import time
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from . import baselines
from .exact import DEFAULT_BUDGET, UNSOLVED
from .graph import MBIT, OBS, MdrTeg, build
from .model import ANY_GROUND, Assignment, Flow, objective, validate
from .solver import EXACT, HEURISTIC, SrccConfig, srcc
from .topology import (DEFAULT_STATIONS, ConstellationSpec, GroundStation, SlotTopology, load_adjacency,
                       node_role, propagate)

log = logging.getLogger(__name__)

METRICS_HEADER = ["algorithm", "param_set", "flows", "theta", "seed", "rep", "success_count",
                  "success_ratio", "wall_time_s", "mean_delay_slots"]
ALGORITHMS = ("srcc", "ja", "crpaa", "esalr")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ParamSet:
    """Network and traffic parameters; capacities and volumes in Mbits, times in slots."""
    isl_cap: float
    sg_cap: float
    store_cap: float
    compute_cap: float
    volume: tuple
    delay: int
    horizon: int

    def __post_init__(self):
        lo, hi = self.volume
        if not 0 < lo <= hi:
            raise ConfigError("volume range must satisfy 0 < lo <= hi")
        if self.horizon < self.delay + 1:
            raise ConfigError("horizon must exceed the delay bound")
        if self.delay < 0:
            raise ConfigError("delay bound must be nonnegative")
        for name in ("isl_cap", "sg_cap", "store_cap", "compute_cap"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")


PRESETS = {
    "value1": ParamSet(300, 500, 1000, 400, (100, 140), 12, 20),
    "value2": ParamSet(3000, 5000, 1000, 4000, (100, 100), 10, 20),
}


@dataclass
class ExperimentConfig:
    param_set: str = "value1"
    params: ParamSet = PRESETS["value1"]
    topology: dict = field(default_factory=lambda: {"generator": {}})
    flow_counts: list = field(default_factory=lambda: [10])
    thetas: list = field(default_factory=lambda: [Fraction(1, 2)])
    algorithms: list = field(default_factory=lambda: ["srcc", "ja", "crpaa"])
    seed: int = 0
    repetitions: int = 1
    tau: float = 300.0
    srcc: dict = field(default_factory=lambda: {"dual_mode": HEURISTIC})
    esalr_budget: int = DEFAULT_BUDGET
    timing: bool = True
    base_dir: Path = Path(".")

    def resolved(self) -> dict:
        return {
            "param_set": self.param_set,
            "params": {**asdict(self.params), "volume": list(self.params.volume)},
            "topology": self.topology,
            "flow_counts": list(self.flow_counts),
            "thetas": [_theta_str(t) for t in self.thetas],
            "algorithms": list(self.algorithms),
            "seed": self.seed,
            "repetitions": self.repetitions,
            "tau": self.tau,
            "srcc": self.srcc,
            "esalr_budget": self.esalr_budget,
        }


def _theta_str(t: Fraction) -> str:
    return f"{t.numerator}/{t.denominator}"


def load_config(source: dict | str | Path) -> ExperimentConfig:
    """Parse and check a config document (dict, JSON text or path)."""
    base = Path(".")
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        path = Path(source)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        base = path.parent
    elif isinstance(source, str):
        doc = json.loads(source)
    else:
        doc = dict(source)
    known = {"param_set", "params", "topology", "flow_counts", "thetas", "algorithms", "seed",
             "repetitions", "tau", "srcc", "esalr_budget"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    name = doc.get("param_set", "value1")
    overrides = dict(doc.get("params", {}))
    if name in PRESETS:
        base_params = asdict(PRESETS[name])
    elif name == "custom":
        base_params = {}
    else:
        raise ConfigError(f"unknown param_set {name!r}")
    base_params.update(overrides)
    try:
        if "volume" in base_params:
            v = base_params["volume"]
            base_params["volume"] = tuple(v) if isinstance(v, (list, tuple)) else (v, v)
        params = ParamSet(**base_params)
    except TypeError as e:
        raise ConfigError(f"bad params: {e}") from None

    try:
        thetas = [Fraction(str(t)) for t in doc.get("thetas", ["1/2"])]
    except (ValueError, ZeroDivisionError):
        raise ConfigError("thetas must be rationals such as 1/2 or 0.6") from None
    if any(not 0 < t < 1 for t in thetas):
        raise ConfigError("every theta must lie in (0, 1)")
    counts = doc.get("flow_counts", [10])
    if not counts or any(not isinstance(c, int) or c <= 0 for c in counts):
        raise ConfigError("flow_counts must be positive integers")
    algos = list(doc.get("algorithms", ["srcc", "ja", "crpaa"]))
    bad = [a for a in algos if a not in ALGORITHMS]
    if bad:
        raise ConfigError(f"unknown algorithms {bad}")
    topo = doc.get("topology", {"generator": {}})
    if not (isinstance(topo, dict) and len(topo) == 1 and ("generator" in topo or "csv" in topo)):
        raise ConfigError("topology must be {\"generator\": {...}} or {\"csv\": path}")
    reps = doc.get("repetitions", 1)
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError("repetitions must be a positive integer")
    srcc_opts = dict(doc.get("srcc", {"dual_mode": HEURISTIC}))
    try:
        _srcc_config(srcc_opts)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad srcc options: {e}") from None
    return ExperimentConfig(name, params, topo, list(counts), thetas, algos, int(doc.get("seed", 0)), reps,
                            float(doc.get("tau", 300.0)), srcc_opts,
                            int(doc.get("esalr_budget", DEFAULT_BUDGET)), True, base)


def _srcc_config(opts: dict) -> SrccConfig:
    opts = dict(opts)
    for k in ("beta", "min_step"):
        if k in opts:
            opts[k] = Fraction(str(opts[k]))
    if "initial_mu" in opts:
        mu = opts["initial_mu"]
        opts["initial_mu"] = (tuple(Fraction(str(v)) for v in mu) if isinstance(mu, (list, tuple))
                              else Fraction(str(mu)))
    return SrccConfig(**opts)


# --- scenario construction -------------------------------------------------------

def _stations(spec) -> list[GroundStation]:
    if spec in (None, "default"):
        return list(DEFAULT_STATIONS)
    return [GroundStation(s["id"], s["lat"], s["lon"]) for s in spec]


def topology_slots(cfg: ExperimentConfig, seed: int | None = None) -> list[SlotTopology]:
    seed = cfg.seed if seed is None else seed
    if "csv" in cfg.topology:
        path = Path(cfg.topology["csv"])
        if not path.is_absolute():
            path = cfg.base_dir / path
        slots = load_adjacency(path)
        if len(slots) < cfg.params.horizon:
            raise ConfigError(f"topology has {len(slots)} slots; the horizon needs {cfg.params.horizon}")
        return slots[:cfg.params.horizon]
    gen = dict(cfg.topology["generator"])
    stations = _stations(gen.pop("stations", None))
    try:
        spec = ConstellationSpec(**gen)
    except TypeError as e:
        raise ConfigError(f"bad generator spec: {e}") from None
    return propagate(spec, stations, cfg.params.horizon, cfg.tau, seed)


def build_graph(cfg: ExperimentConfig, slots: Sequence[SlotTopology], with_compute: bool = True) -> MdrTeg:
    p = cfg.params
    return build(slots, int(p.store_cap * MBIT), p.compute_cap, 1, tau=cfg.tau, with_compute=with_compute,
                 isl_cap=int(p.isl_cap * MBIT), sg_cap=int(p.sg_cap * MBIT))


def generate_flows(params: ParamSet, sources: Sequence[str], n: int, theta: Fraction,
                   rng: random.Random) -> list[Flow]:
    """Uniform integer volumes (Mbits), uniformly drawn sources and release slots."""
    if not sources:
        raise ConfigError("no observation nodes to draw flow sources from")
    lo, hi = params.volume
    flows = []
    for i in range(n):
        vol = rng.randint(int(lo), int(hi))
        src = rng.choice(list(sources))
        ts = rng.randint(1, params.horizon - params.delay)
        flows.append(Flow(f"u{i + 1:04d}", src, ANY_GROUND, vol * MBIT, ts, ts + params.delay, theta))
    return flows


def scenario_flows(cfg: ExperimentConfig, slots, n: int, theta: Fraction, rep: int,
                   seed: int | None = None) -> list[Flow]:
    """The flow set of one sweep cell; observation nodes are ids starting with 'O'."""
    seed = cfg.seed if seed is None else seed
    ids = {i for st in slots for i in st.nodes} | {i for st in slots for (i, _j) in st.rate}
    sources = sorted(i for i in ids if node_role(i) == OBS)
    return generate_flows(cfg.params, sources, n, theta, cell_rng(seed, n, theta, rep))


def cell_rng(seed: int, n: int, theta: Fraction, rep: int) -> random.Random:
    return random.Random(f"{seed}:{n}:{_theta_str(theta)}:{rep}")


# --- running -------------------------------------------------------------------

@dataclass
class RunMetrics:
    algorithm: str
    param_set: str
    flows: int
    theta: Fraction
    seed: int
    rep: int
    success_count: int
    success_ratio: float
    wall_time_s: float
    mean_delay_slots: float | None
    trace_csv: str | None = None

    def row(self) -> list:
        return [self.algorithm, self.param_set, self.flows, _theta_str(self.theta), self.seed, self.rep,
                self.success_count, f"{self.success_ratio:.6f}", f"{self.wall_time_s:.6f}",
                "" if self.mean_delay_slots is None else f"{self.mean_delay_slots:.6f}"]

    def as_dict(self) -> dict:
        return dict(zip(METRICS_HEADER, self.row()))


class CellFailure(RuntimeError):
    def __init__(self, message: str, code: int, report=None):
        super().__init__(message)
        self.code = code
        self.report = report


@dataclass
class CellResult:
    metrics: RunMetrics
    assignment: Assignment
    graph: MdrTeg
    flows: list


def mean_delay(flows: Sequence[Flow], a: Assignment) -> float | None:
    by_id = {f.id: f for f in flows}
    delays = [a.arrival[fid] - by_id[fid].t_start for fid in a.delivered()]
    return sum(delays) / len(delays) if delays else None


def run_algorithm(algorithm: str, cfg: ExperimentConfig, slots, flows: Sequence[Flow]):
    """Build the graph the algorithm needs and run it. Returns (assignment, graph, seconds, trace)."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    graph = build_graph(cfg, slots, with_compute=algorithm != "ja")
    trace = None
    start = time.perf_counter()
    if algorithm == "srcc":
        res = srcc(graph, flows, _srcc_config(cfg.srcc))
        a, trace = res.assignment, res.bounds.to_csv()
    elif algorithm == "esalr":
        res = baselines.esalr(graph, flows, cfg.esalr_budget)
        if res.status == UNSOLVED:
            raise CellFailure(f"esalr: {res.status}", 4)
        a, trace = res.assignment, res.bounds.to_csv()
    elif algorithm == "ja":
        a, _ = baselines.ja(graph, flows)
    else:
        a, _ = baselines.crpaa(graph, flows)
    elapsed = time.perf_counter() - start
    return a, graph, elapsed, trace


def run_cell(cfg: ExperimentConfig, algorithm: str, n: int, theta: Fraction, rep: int,
             slots=None, seed: int | None = None) -> CellResult:
    seed = cfg.seed if seed is None else seed
    slots = slots if slots is not None else topology_slots(cfg, seed)
    flows = scenario_flows(cfg, slots, n, theta, rep, seed)
    a, graph, elapsed, trace = run_algorithm(algorithm, cfg, slots, flows)
    report = validate(graph, flows, a)
    count = objective(flows, a)
    if not report.feasible or count != len(a.delivered()):
        raise CellFailure(f"{algorithm}: output failed validation", 3, report)
    m = RunMetrics(algorithm, cfg.param_set, n, theta, seed, rep, count, count / n,
                   elapsed if cfg.timing else 0.0, mean_delay(flows, a), trace)
    return CellResult(m, a, graph, flows)


@dataclass
class SweepOutcome:
    metrics: list
    failures: list  # (cell, code, message)

    @property
    def exit_code(self) -> int:
        codes = {c for _, c, _ in self.failures}
        return 3 if 3 in codes else (4 if 4 in codes else 0)


def run_sweep(cfg: ExperimentConfig, out: Path | None = None, fmt: str = "csv") -> SweepOutcome:
    """Every (algorithm, flow count, theta, repetition) cell; one failing cell does not stop the rest."""
    metrics, failures = [], []
    slots = topology_slots(cfg) if cfg.algorithms else None
    for algorithm in cfg.algorithms:
        for n in cfg.flow_counts:
            for theta in cfg.thetas:
                for rep in range(cfg.repetitions):
                    cell = (algorithm, n, _theta_str(theta), rep)
                    try:
                        metrics.append(run_cell(cfg, algorithm, n, theta, rep, slots).metrics)
                    except CellFailure as e:
                        log.warning("cell %s failed: %s", cell, e)
                        failures.append((cell, e.code, str(e)))
    if out is not None:
        write_outputs(cfg, metrics, failures, Path(out), fmt)
    return SweepOutcome(metrics, failures)


def metrics_text(metrics: Sequence[RunMetrics], fmt: str = "csv") -> str:
    if fmt == "json":
        return json.dumps([m.as_dict() for m in metrics], indent=1) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for m in metrics:
        w.writerow(m.row())
    return buf.getvalue()


def write_outputs(cfg: ExperimentConfig, metrics, failures, out: Path, fmt: str = "csv"):
    out.mkdir(parents=True, exist_ok=True)
    (out / f"metrics.{fmt}").write_text(metrics_text(metrics, fmt))
    traces = out / "traces"
    for m in metrics:
        if m.trace_csv:
            traces.mkdir(exist_ok=True)
            name = f"{m.algorithm}_F{m.flows}_theta{m.theta.numerator}-{m.theta.denominator}_rep{m.rep}.csv"
            (traces / name).write_text(m.trace_csv)
    (out / "config.resolved.json").write_text(json.dumps(cfg.resolved(), indent=1) + "\n")
    if failures:
        (out / "failures.json").write_text(json.dumps(
            [{"cell": list(c), "code": code, "message": msg} for c, code, msg in failures], indent=1) + "\n")
