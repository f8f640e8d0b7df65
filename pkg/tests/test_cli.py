import csv
import json
from pathlib import Path

import pytest

from ekfbound.cli import CSV_COLUMNS, main
from ekfbound.config import load_config, parse_config
from ekfbound.errors import ConfigurationError

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def _doc(name):
    return json.loads((SCENARIOS / name).read_text())


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_linear_run_exit_zero_and_collapsed(tmp_path):
    assert main(["run", str(SCENARIOS / "linear_2state.json"), "--out-dir", str(tmp_path)]) == 0
    text = (tmp_path / "records.csv").read_text()
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    rows = _rows(tmp_path / "records.csv")
    assert len(rows) == 3 + 50 * 6
    for r in rows:
        assert float(r["lower"]) == pytest.approx(float(r["ekf_nominal"]), abs=1e-6)
        assert float(r["upper"]) == pytest.approx(float(r["ekf_nominal"]), abs=1e-6)
        assert r["solve_time_ms"] == ""
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["exit_code"] == 0 and len(summary["steps"]) == 100


def test_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    doc = _doc("pendulum.json")
    doc["oracle"]["samples"] = 2000
    doc["horizon"] = 5
    p = _write(tmp_path, doc)
    assert main(["run", str(p), "--out-dir", str(a)]) == 0
    assert main(["run", str(p), "--out-dir", str(b), "--threads", "2"]) == 0
    assert (a / "records.csv").read_bytes() == (b / "records.csv").read_bytes()


def test_seed_flag_changes_measurements(tmp_path):
    doc = _doc("scalar_sine.json")
    doc["oracle"]["enabled"] = False
    doc["horizon"] = 3
    p = _write(tmp_path, doc)
    main(["run", str(p), "--out-dir", str(tmp_path / "a"), "--seed", "1"])
    main(["run", str(p), "--out-dir", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a/records.csv").read_bytes() != (tmp_path / "b/records.csv").read_bytes()


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("system"),
    lambda d: d.__setitem__("horizon", 0),
    lambda d: d.__setitem__("schema_version", 99),
    lambda d: d["system"].__setitem__("id", "no_such_system"),
    lambda d: d.__setitem__("unknown_key", 1),
    lambda d: d["initial"].__setitem__("mean", [0.0, 0.0, 0.0]),
    lambda d: d["system"].__setitem__("params", {"bogus": 1}),
])
def test_bad_config_exit_three(tmp_path, mutate):
    doc = _doc("scalar_sine.json")
    mutate(doc)
    p = _write(tmp_path, doc)
    for cmd in ("run", "compare", "verify-decomposition"):
        assert main([cmd, str(p), "--out-dir", str(tmp_path)]) == 3


def test_unreadable_config(tmp_path):
    assert main(["run", str(tmp_path / "missing.json")]) == 3
    (tmp_path / "broken.json").write_text("{ not json")
    assert main(["run", str(tmp_path / "broken.json")]) == 3


def test_unsound_gamma_zero_exit_one(tmp_path):
    assert main(["run", str(SCENARIOS / "scalar_sine_unsound.json"), "--out-dir", str(tmp_path)]) == 1
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["oracle"]["violation_rate"] > 0.01
    assert summary["qc_violations"] > 0


def test_sdp_failure_exit_two(tmp_path):
    doc = _doc("scalar_sine.json")
    doc["oracle"]["enabled"] = False
    doc["sdp"] = {"max_iters": 1}
    p = _write(tmp_path, doc)
    assert main(["run", str(p), "--out-dir", str(tmp_path)]) == 2
    doc["flags"] = {"continue_on_failure": True}
    p = _write(tmp_path, doc)
    assert main(["run", str(p), "--out-dir", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["failures"]


def test_verify_decomposition(tmp_path):
    for name in ("linear_2state.json", "scalar_sine.json", "pendulum.json", "van_der_pol.json"):
        assert main(["verify-decomposition", str(SCENARIOS / name), "--out-dir", str(tmp_path)]) == 0
    doc = _doc("pendulum.json")
    doc["verify"] = {"A_perturbation": 0.1}
    assert main(["verify-decomposition", str(_write(tmp_path, doc)), "--out-dir", str(tmp_path)]) == 1
    report = json.loads((tmp_path / "verify.json").read_text())
    assert report["passed"] is False


def test_compare_linear(tmp_path):
    doc = _doc("linear_2state.json")
    doc["oracle"]["samples"] = 100_000
    doc["horizon"] = 10
    assert main(["compare", str(_write(tmp_path, doc)), "--out-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "compare.csv")
    for r in rows:
        nom, lo, up = float(r["ekf_nominal"]), float(r["lower"]), float(r["upper"])
        assert lo == pytest.approx(nom, abs=1e-6) and up == pytest.approx(nom, abs=1e-6)
        assert r["within"] == "1"
    # empirical agrees with the Kalman value at the CLT scale
    diag = [r for r in rows if r["i"] == r["j"] and r["step"] != "0"]
    for r in diag:
        assert float(r["empirical"]) == pytest.approx(float(r["ekf_nominal"]), rel=0.05)


def test_compare_nonlinear_within(tmp_path):
    doc = _doc("scalar_sine.json")
    doc["oracle"]["samples"] = 20_000
    doc["horizon"] = 8
    assert main(["compare", str(_write(tmp_path, doc)), "--out-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "compare.csv")
    assert all(r["within"] == "1" for r in rows)


def test_overbound_in_summary(tmp_path):
    doc = _doc("pendulum.json")
    doc["oracle"]["samples"] = 5000
    doc["horizon"] = 4
    assert main(["run", str(_write(tmp_path, doc)), "--out-dir", str(tmp_path)]) == 0
    ob = json.loads((tmp_path / "summary.json").read_text())["experimental_overbound"]
    assert len(ob) == 4 and all("min_eig_minus_empirical" in r for r in ob)


def test_record_timing_fills_column(tmp_path):
    doc = _doc("scalar_sine.json")
    doc["oracle"]["enabled"] = False
    doc["horizon"] = 2
    doc["output"] = {"record_timing": True}
    main(["run", str(_write(tmp_path, doc)), "--out-dir", str(tmp_path)])
    rows = _rows(tmp_path / "records.csv")
    assert all(r["solve_time_ms"] != "" for r in rows if r["step"] != "0")


def test_parse_config_overrides():
    doc = _doc("scalar_sine.json")
    cfg = parse_config(doc, seed=40, out_dir="/tmp/x", threads=3)
    assert cfg.seed == 40 and cfg.oracle.seed == 41
    assert cfg.output.dir == "/tmp/x" and cfg.filter.threads == 3
    assert parse_config(doc).oracle.seed == 1


def test_all_scenarios_parse():
    for p in sorted(SCENARIOS.glob("*.json")):
        if p.name.startswith("bad_"):
            with pytest.raises(ConfigurationError):
                load_config(p)
        else:
            load_config(p)
