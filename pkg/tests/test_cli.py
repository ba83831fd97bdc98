import json
import subprocess
import sys

import pytest

from flowline_bayes.cli import main
from flowline_bayes.io import read_long_csv, read_series_csv
from flowline_bayes.simulation import make_truth_profile

TINY_CHAIN = {"n_iterations": 120, "n_chains": 2, "n_keep": 30}


def _config(tmp_path, name="cfg.json", **kw):
    cfg = {"seed": 7, "output_dir": str(tmp_path / "out"), "chain": TINY_CHAIN, **kw}
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("sim")
    cfg = _config(tmp, profile="builtin", simulate={"true_A": 0.0})
    assert main(["simulate", "--config", str(cfg), "--n-train", "5", "--noise-sd", "50", "--seed", "7"]) == 0
    return tmp / "out"


def _inputs(obs_dir):
    names = ("thickness", "velocity", "elevation", "accumulation", "thinning")
    return {
        **{n: str(obs_dir / f"{n}.csv") for n in names},
        "widths": {w: str(obs_dir / f"width_{w}.csv") for w in ("narrowest", "medium", "wide")},
    }


RAW = {k: "none" for k in ("velocity", "elevation", "accumulation", "thinning")}


def test_simulate_bundle_contents(simulated):
    for f in ("samples.csv", "predictions.csv", "summary.json", "diagnostics.json", "config_loaded.json",
              "config_snapshot.json", "timing.json", "observations/thickness.csv", "truth_profile/profile.json"):
        assert (simulated / f).exists(), f
    snap = json.loads((simulated / "config_snapshot.json").read_text())
    assert snap["seed"] == 7 and snap["simulate"]["n_train"] == 5 and snap["simulate"]["noise_sd"] == 50.0
    x, _ = read_series_csv(simulated / "observations" / "thickness.csv")
    assert x.size == 5
    summary = json.loads((simulated / "summary.json").read_text())
    assert {"mean", "lo", "hi"} <= set(summary["A"])


def test_naive_exact_round_trip(simulated, tmp_path):
    cfg = _config(tmp_path, inputs=_inputs(simulated / "observations"), smoothing=RAW, domain_length=272800.0)
    assert main(["naive", "--config", str(cfg), "--A", "0", "--width", "narrowest"]) == 0
    rows = read_long_csv(tmp_path / "out" / "predictions.csv")
    got = {x: v for x, q, _, v in rows if q.startswith("thickness_naive")}
    truth = make_truth_profile(simulated / "truth_profile")
    for x, v in got.items():
        assert v == pytest.approx(float(truth.thickness_at([x])[0]), abs=1e-6)


def test_fit_predict_diagnose_share_samples(simulated, tmp_path):
    cfg = _config(tmp_path, inputs=_inputs(simulated / "observations"), domain_length=272800.0,
                  predict={"x": [20000.0, 100000.0, 250000.0]})
    assert main(["fit", "--config", str(cfg)]) == 0
    assert main(["predict", "--config", str(cfg)]) == 0
    assert main(["diagnose", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    import hashlib

    pred_summary = json.loads((out / "prediction_summary.json").read_text())
    assert pred_summary["samples_sha256"] == hashlib.sha256((out / "samples.csv").read_bytes()).hexdigest()
    rows = read_long_csv(out / "predictions.csv")
    assert sorted({x for x, *_ in rows}) == [20000.0, 100000.0, 250000.0]
    assert set(json.loads((out / "diagnostics.json").read_text())) <= {"A", "h0", "sigma2_H", "sigma2_omega", "tau2"}


def test_smooth_writes_long_table(simulated, tmp_path):
    cfg = _config(tmp_path, inputs=_inputs(simulated / "observations"))
    assert main(["smooth", "--config", str(cfg)]) == 0
    rows = read_long_csv(tmp_path / "out" / "predictions.csv")
    assert {q for _, q, _, _ in rows} == {"velocity", "accumulation", "thinning", "elevation", "slope"}


def test_rerun_from_snapshot_is_bitwise_identical(simulated, tmp_path):
    cfg = _config(tmp_path, inputs=_inputs(simulated / "observations"), domain_length=272800.0)
    assert main(["fit", "--config", str(cfg)]) == 0
    first = tmp_path / "out"
    snap = first / "config_snapshot.json"
    assert main(["fit", "--config", str(snap), "--output-dir", str(tmp_path / "again")]) == 0
    for f in ("samples.csv", "summary.json", "diagnostics.json"):
        assert (first / f).read_bytes() == (tmp_path / "again" / f).read_bytes()
    assert (first / "config_loaded.json").read_bytes() == cfg.read_bytes()


def test_coverage_grid(tmp_path):
    cfg = _config(tmp_path, coverage={"n_train": [5, 10], "noise_sd": [50.0]})
    assert main(["coverage", "--config", str(cfg)]) == 0
    lines = (tmp_path / "out" / "coverage.csv").read_text().splitlines()
    assert lines[0].startswith("n_train,noise_sd,width_coverage")
    assert len(lines) == 3


def test_usage_errors_are_reported(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert main(["fit", "--config", str(cfg), "--bogus"]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["kind"] == "usage"
    noseed = tmp_path / "noseed.json"
    noseed.write_text(json.dumps({"output_dir": str(tmp_path / "o")}))
    assert main(["fit", "--config", str(noseed)]) == 2
    assert "seed" in json.loads(capsys.readouterr().err)["message"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seed": 1, "inputs": {"thickness": "nope.csv"}}))
    assert main(["fit", "--config", str(bad)]) == 2
    assert main(["fit", "--config", str(tmp_path / "absent.json")]) == 2
    assert main(["frobnicate"]) == 2


def test_runtime_error_writes_error_json(tmp_path, capsys):
    cfg = _config(tmp_path)  # no inputs section
    assert main(["fit", "--config", str(cfg)]) == 2
    rep = json.loads((tmp_path / "out" / "error.json").read_text())
    assert rep["status"] == "error" and rep["command"] == "fit"
    assert main(["predict", "--config", str(cfg)]) == 1
    rep = json.loads((tmp_path / "out" / "error.json").read_text())
    assert rep["kind"] == "runtime" and "samples.csv" in rep["message"]


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "flowline_bayes", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout
