import json
import subprocess
import sys

import pytest

from oracles import small_config
from tdisched.cli import EXIT_BUDGET, EXIT_INVALID, EXIT_OK, EXIT_USAGE, main


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(small_config(flow_counts=[6])))
    return path


def run_dir(config, out, *extra):
    code = main(["run", "--config", str(config), "--algorithms", "srcc", "--out", str(out), "--no-timing", *extra])
    assert code == EXIT_OK
    return out


class TestRun:
    def test_byte_identical_reruns(self, config, tmp_path):
        a = run_dir(config, tmp_path / "a", "--seed", "7")
        b = run_dir(config, tmp_path / "b", "--seed", "7")
        for name in ("metrics.csv", "assignment_srcc.json", "trace_srcc.csv", "flows.csv", "topology.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_stdout_json(self, config, capsys):
        assert main(["run", "--config", str(config), "--algorithms", "crpaa", "--format", "json",
                     "--flows", "3", "--theta", "4/5"]) == EXIT_OK
        rows = json.loads(capsys.readouterr().out)
        assert rows[0]["algorithm"] == "crpaa" and rows[0]["theta"] == "4/5" and rows[0]["flows"] == 3

    def test_unknown_algorithm(self, config, capsys):
        assert main(["run", "--config", str(config), "--algorithms", "greedy"]) == EXIT_USAGE
        assert "greedy" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "none.json")]) == EXIT_USAGE


class TestValidate:
    def args(self, out, assignment):
        return ["validate", "--config", str(out / "cfg.json"), "--topology", str(out / "topology.csv"),
                "--flows", str(out / "flows.csv"), "--assignment", str(assignment)]

    def test_clean_and_tampered(self, config, tmp_path, capsys):
        out = run_dir(config, tmp_path / "run")
        (out / "cfg.json").write_text(config.read_text())
        capsys.readouterr()
        assert main(self.args(out, out / "assignment_srcc.json")) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["feasible"] is True

        doc = json.loads((out / "assignment_srcc.json").read_text())
        entry = next(e for e in doc["x"] if e["tail"].startswith("obs:"))
        entry["value"] *= 1000
        bad = out / "tampered.json"
        bad.write_text(json.dumps(doc))
        assert main(self.args(out, bad)) == EXIT_INVALID
        report = json.loads(capsys.readouterr().out)
        assert report["feasible"] is False and "eq5" in json.dumps(report)

    def test_unknown_arc(self, config, tmp_path, capsys):
        out = run_dir(config, tmp_path / "run")
        (out / "cfg.json").write_text(config.read_text())
        doc = json.loads((out / "assignment_srcc.json").read_text())
        doc["x"].append({"flow": doc["x"][0]["flow"], "tail": "leo:S9_9@1", "head": "com", "value": 1})
        bad = out / "bad.json"
        bad.write_text(json.dumps(doc))
        capsys.readouterr()
        assert main(self.args(out, bad)) == EXIT_INVALID
        assert "structural_error" in json.loads(capsys.readouterr().out)


class TestSweep:
    def test_artifacts(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(small_config(flow_counts=[3, 5], thetas=["1/2", "3/5"])))
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", str(cfg), "--out", str(out), "--no-timing"]) == EXIT_OK
        rows = (out / "metrics.csv").read_text().splitlines()
        assert len(rows) == 1 + 3 * 2 * 2
        assert len(list((out / "traces").iterdir())) == 4
        assert json.loads((out / "config.resolved.json").read_text())["thetas"] == ["1/2", "3/5"]

    def test_needs_out(self, config):
        with pytest.raises(SystemExit):
            main(["sweep", "--config", str(config)])

    def test_budget_exit_code(self, tmp_path):
        from test_harness import tiny_config
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(tiny_config(tmp_path, algorithms=["esalr"], esalr_budget=1, flow_counts=[12])))
        assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_BUDGET


class TestTopologyAndLp:
    def test_gen_then_import(self, config, tmp_path, capsys):
        topo = tmp_path / "t.csv"
        assert main(["topology", "gen", "--config", str(config), "--out", str(topo)]) == EXIT_OK
        assert main(["topology", "import", str(topo)]) == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert summary["slots"] == 20 and summary["ground"] == ["G_Hainan", "G_Xiongan"]
        assert summary["observation"] == ["O0", "O1"]

    def test_import_rejects_garbage(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("slot,src,dst\n1,a\n")
        assert main(["topology", "import", str(bad)]) == EXIT_USAGE

    def test_export_lp(self, config, tmp_path):
        out = run_dir(config, tmp_path / "run")
        (out / "cfg.json").write_text(config.read_text())
        lp = tmp_path / "m.lp"
        assert main(["export-lp", "--config", str(out / "cfg.json"), "--topology", str(out / "topology.csv"),
                     "--flows", str(out / "flows.csv"), "--out", str(lp)]) == EXIT_OK
        text = lp.read_text()
        assert text.startswith("\\") or text.startswith("Minimize")
        assert text.rstrip().endswith("End")


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "tdisched.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "sweep" in res.stdout
