import subprocess
import sys

import numpy as np
import pytest
import yaml

from safe_consensus import __version__
from safe_consensus.cli import EXIT_ABORTED, EXIT_PARSE, EXIT_VERIFY, main
from safe_consensus.report import csv_header, csv_margins, read_csv, write_csv
from safe_consensus.scenario import SCENARIO_DIR, platoon_scenario
from safe_consensus.sim import run, summarize
from safe_consensus import verify


def summary_value(out, key):
    for line in (out / "summary.txt").read_text().splitlines():
        if line.startswith(key + ":"):
            return line.split(":", 1)[1].strip()
    raise KeyError(key)


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_platoon_60s(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "paper_platoon", "--t-end", "60", "--out", str(out)]) == 0
    for name in ("trajectory.csv", "summary.txt", "trajectory.svg", "distances.svg"):
        assert (out / name).stat().st_size > 0
    assert float(summary_value(out, "min_safety_margin")) > 0
    assert summary_value(out, "steps") == "6000"


def test_collision_course_without_filter(tmp_path):
    assert main(["run", "collision_course", "--no-safety", "--out", str(tmp_path)]) == 0
    assert float(summary_value(tmp_path, "min_safety_margin")) < 0


def test_collision_course_with_filter(tmp_path):
    assert main(["run", "collision_course", "--out", str(tmp_path)]) == 0
    assert float(summary_value(tmp_path, "min_safety_margin")) > 0


def test_missing_lr(tmp_path, capsys):
    doc = yaml.safe_load((SCENARIO_DIR / "collision_course.yaml").read_text())
    del doc["followers"][1]["Lr"]
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(doc))
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == EXIT_PARSE
    assert "Lr" in capsys.readouterr().err


def test_unknown_key(tmp_path, capsys):
    doc = yaml.safe_load((SCENARIO_DIR / "collision_course.yaml").read_text())
    doc["time"]["warp"] = 9
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(doc))
    assert main(["run", str(path)]) == EXIT_PARSE
    assert "time.warp" in capsys.readouterr().err


def test_unreadable_and_invalid_yaml(tmp_path):
    assert main(["run", str(tmp_path / "nope.yaml")]) == EXIT_PARSE
    (tmp_path / "x.yaml").write_text("a: [1, 2\n")
    assert main(["run", str(tmp_path / "x.yaml")]) == EXIT_PARSE


def test_bad_override(tmp_path):
    assert main(["run", "collision_course", "--dt", "-1", "--out", str(tmp_path)]) == EXIT_PARSE


def test_aborted_run(tmp_path, capsys):
    doc = {
        "schema_version": 1,
        "time": {"dt": 0.01, "t_end": 1.0},
        "reference": {"kind": "constant", "point": [5.0, 5.0]},
        "followers": [{"Lf": 1.2, "Lr": 1.7, "state": [0.0, 0.0, 0.0, 0.0]}],
    }
    path = tmp_path / "stopped.yaml"
    path.write_text(yaml.safe_dump(doc))
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == EXIT_ABORTED
    err = capsys.readouterr().err
    assert "singular-jacobian" in err and "step 0" in err
    assert "singular-jacobian" in (tmp_path / "o" / "summary.txt").read_text()


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as info:
        main(["run"])
    assert info.value.code == EXIT_PARSE


def test_run_is_idempotent(tmp_path):
    args = ["run", "paper_platoon", "--t-end", "2", "--out", str(tmp_path)]
    assert main(args) == 0
    first = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    assert main(args) == 0
    assert first == {p.name: p.read_bytes() for p in tmp_path.iterdir()}


def test_csv_schema_and_round_trip(tmp_path):
    sc = platoon_scenario(t_end=5.0)
    log = run(sc)
    path = tmp_path / "t.csv"
    write_csv(log, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode("utf-8").splitlines()
    assert lines[0].split(",") == csv_header(5)
    assert len(csv_header(5)) == 1 + 8 * 5 + 2 * 5 + 5 + 1
    assert len(lines) == 1 + 500
    table = read_csv(path)
    exact = summarize(log).min_margin
    np.testing.assert_allclose(csv_margins(table, 5), exact, rtol=1e-6)
    np.testing.assert_allclose(table["V_3"], log.array("states")[:, 2, 2], rtol=1e-8)
    for row in lines[1:]:
        for cell in row.split(","):
            digits = cell.lstrip("-").split("e")[0].replace(".", "").lstrip("0")
            assert len(digits) <= 9


@pytest.mark.parametrize("suite", ["graph", "qp"])
def test_verify_passes(suite, capsys):
    assert main(["verify", suite]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS" in out


def test_verify_failure_exit_code(monkeypatch, capsys):
    monkeypatch.setitem(verify.SUITES, "graph", lambda: [verify.Check("broken", False)])
    assert main(["verify", "graph"]) == EXIT_VERIFY
    assert "FAIL broken" in capsys.readouterr().out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "safe_consensus", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
