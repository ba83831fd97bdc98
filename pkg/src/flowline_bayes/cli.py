"""Command-line interface.

Every command reads a JSON config (``--config``), applies flag overrides,
and writes a result bundle into the output directory containing the raw
config (``config_loaded.json``), the effective config
(``config_snapshot.json``) and the command's tables.  Re-running a command
with ``--config <bundle>/config_snapshot.json`` reproduces its outputs.

Exit status is 0 on success, 2 for usage or config errors and 1 for any
other failure; failures also print a JSON error report to stderr and, when
the output directory is known, write it to ``error.json``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .config import ConfigError, RunConfig, read_config_json, set_dotted
from .core import ValidationError, build_grid, linear_interp
from .dynamics import naive_inversion
from .gp_width import WidthHyperparams, WidthModel, width_mean_function
from .inference import FitProblem, chain_diagnostics, predict_thickness, run_chains
from .simulation import (
    ExperimentSpec,
    dump_profile,
    make_truth_profile,
    run_experiment,
    run_experiment_grid,
)
from .smoothing import SmoothedInputs, smooth_inputs

COMMANDS = ("smooth", "naive", "fit", "predict", "simulate", "coverage", "diagnose")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowline-bayes", description="Bayesian flowline thickness inversion.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--output-dir", help="override output_dir")
        p.add_argument("--seed", type=int, help="override the master seed")
        return p

    add("smooth", "smooth the surface inputs and write the smoothed series")
    p = add("naive", "deterministic inversion with plug-in widths and A values")
    p.add_argument("--A", dest="A_values", type=float, action="append", help="A value (repeatable)")
    p.add_argument("--width", dest="widths", action="append", help="width candidate name (repeatable)")
    for name, text in (("fit", "run the MCMC sampler"), ("simulate", "run one synthetic experiment cell"),
                       ("coverage", "run the synthetic experiment grid")):
        p = add(name, text)
        p.add_argument("--n-iterations", type=int)
        p.add_argument("--n-chains", type=int)
        if name != "fit":
            p.add_argument("--profile", help="'builtin' or a profile directory")
        if name == "simulate":
            p.add_argument("--n-train", type=int)
            p.add_argument("--noise-sd", type=float)
            p.add_argument("--true-A", type=float)
    for name, text in (("predict", "predict thickness from a fitted bundle"),
                       ("diagnose", "convergence diagnostics for a fitted bundle")):
        p = add(name, text)
        p.add_argument("--bundle", help="directory holding samples.csv (default: output_dir)")
    return parser


_OVERRIDES = {
    "output_dir": "output_dir",
    "seed": "seed",
    "n_iterations": "chain.n_iterations",
    "n_chains": "chain.n_chains",
    "profile": "profile",
    "n_train": "simulate.n_train",
    "noise_sd": "simulate.noise_sd",
    "true_A": "simulate.true_A",
    "A_values": "naive.A_values",
    "widths": "naive.widths",
}


def load_run_config(args) -> tuple[RunConfig, bytes]:
    raw, raw_bytes = read_config_json(args.config)
    for attr, dotted in _OVERRIDES.items():
        val = getattr(args, attr, None)
        if val is not None:
            set_dotted(raw, dotted, val)
    cfg = RunConfig.from_dict(raw, Path(args.config).parent.resolve())
    return cfg, raw_bytes


def _out_dir(cfg: RunConfig) -> Path:
    out = cfg.resolve(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_provenance(out: Path, cfg: RunConfig, raw_bytes: bytes, command: str) -> None:
    (out / "config_loaded.json").write_bytes(raw_bytes)
    io.write_json(out / "config_snapshot.json", cfg.snapshot())
    io.write_json(out / "command.json", {"command": command, "seed": cfg.seed})


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- model assembly from CSV inputs ---------------------------------------------------


def _smoothed(cfg: RunConfig):
    obs = cfg.observations()
    specs = cfg.smoother_specs()
    return obs, smooth_inputs(obs, specs, cfg.resmooth_slope())


def _candidate(obs, name: str):
    if name in obs.width_candidates:
        return obs.width_candidates[name]
    if name == "narrowest":
        return obs.narrowest_width()[1]
    raise ConfigError(f"unknown width candidate {name!r}; have {sorted(obs.width_candidates)}")


def build_problem(cfg: RunConfig) -> tuple[FitProblem, SmoothedInputs]:
    obs, smoothed = _smoothed(cfg)
    L = cfg.domain_length(obs)
    x, h = obs.thickness
    grid = build_grid(L, float(cfg["grid"]["quad_spacing"]), x)
    fields = smoothed.fields(grid)
    c = cfg.constants()
    gp = cfg["gp"]
    mean = width_mean_function(grid, fields, h, _candidate(obs, gp["width"]), c, C0=float(cfg["C0"]))
    hyper = WidthHyperparams(float(gp["sigma2_omega"]), float(gp["phi"]), float(gp["tau2"]))
    model = WidthModel(hyper, grid.quad_x, mean)
    problem = FitProblem(grid, fields, h, model, c, float(cfg["C0"]), selection=cfg["selection"])
    return problem, smoothed


def _prediction_problem(cfg: RunConfig, problem: FitProblem, smoothed: SmoothedInputs) -> FitProblem:
    px = cfg["predict"]["x"]
    x = problem.grid.obs_x if px is None else np.asarray(px, dtype=float)
    grid = problem.grid.with_obs(x)
    fields = smoothed.fields(grid)
    ref = np.interp(x, problem.grid.obs_x, problem.h_obs)
    return FitProblem(grid, fields, ref, problem.width_model, problem.constants, problem.C0,
                      problem.h_max, problem.selection)


# -- commands -------------------------------------------------------------


def cmd_smooth(cfg: RunConfig, out: Path) -> dict:
    obs, sm = _smoothed(cfg)
    rows = []
    for name in ("velocity", "accumulation", "thinning"):
        for x, v in zip(*getattr(obs, name)):
            rows.append((x, name, "raw", v))
        for x, v in zip(*getattr(sm, name)):
            rows.append((x, name, "smoothed", v))
    for x, v in zip(*obs.elevation):
        rows.append((x, "elevation", "raw", v))
    for x, v in zip(*sm.slope):
        rows.append((x, "slope", "smoothed", v))
    io.write_long_csv(out / "predictions.csv", rows)
    return {"series": ["velocity", "accumulation", "thinning", "elevation", "slope"]}


def cmd_naive(cfg: RunConfig, out: Path) -> dict:
    obs, sm = _smoothed(cfg)
    x, h = obs.thickness
    grid = build_grid(cfg.domain_length(obs), float(cfg["grid"]["quad_spacing"]), x)
    names = cfg["naive"]["widths"] or sorted(obs.width_candidates)
    widths = {n: _candidate(obs, n) for n in names}
    res = naive_inversion(grid, sm.fields(grid), widths, [float(a) for a in cfg["naive"]["A_values"]], h,
                          float(cfg["C0"]), cfg.constants())
    rows = []
    for (name, A), prof in res.profiles.items():
        for xj, hj in zip(res.x, prof):
            rows.append((xj, f"thickness_naive[width={name};A={A!r}]", "value", hj))
    for xj, hj in zip(x, h):
        rows.append((xj, "thickness_observed", "value", hj))
    io.write_long_csv(out / "predictions.csv", rows)
    gaps = {f"width={n};A={A!r}": g.tolist() for (n, A), g in res.gaps().items()}
    io.write_json(out / "summary.json", {"unsolved_x_m": gaps})
    return {"profiles": len(res.profiles)}


def cmd_fit(cfg: RunConfig, out: Path) -> dict:
    problem, _ = build_problem(cfg)
    samples = run_chains(problem, cfg.prior(), cfg.chain())
    diag = chain_diagnostics(samples) if samples.n_chains > 1 else {}
    io.write_tables(out, samples=samples, summary={"acceptance": samples.acceptance}, diagnostics=diag)
    return {"draws": samples.n_chains * samples.n_draws}


def _bundle(cfg: RunConfig, args) -> Path:
    b = Path(args.bundle) if getattr(args, "bundle", None) else cfg.resolve(cfg["output_dir"])
    if not (b / "samples.csv").exists():
        raise ValidationError(f"no samples.csv in {b}; run 'fit' first")
    return b


def cmd_predict(cfg: RunConfig, out: Path, args) -> dict:
    bundle = _bundle(cfg, args)
    samples = io.read_samples_csv(bundle / "samples.csv")
    problem, smoothed = build_problem(cfg)
    pp = _prediction_problem(cfg, problem, smoothed)
    pred = predict_thickness(samples, pp, seed=cfg.seed, noise_draws=int(cfg["predict"]["noise_draws"]))
    io.write_long_csv(out / "predictions.csv", io.prediction_rows(pred))
    summary = {
        "samples_file": str((bundle / "samples.csv").resolve()),
        "samples_sha256": _sha256(bundle / "samples.csv"),
        "n_states": pred.n_states,
        "n_dropped": pred.n_dropped.tolist(),
    }
    io.write_json(out / "prediction_summary.json", summary)
    return {"points": int(pred.x.size)}


def cmd_diagnose(cfg: RunConfig, out: Path, args) -> dict:
    samples = io.read_samples_csv(_bundle(cfg, args) / "samples.csv")
    io.write_json(out / "diagnostics.json", chain_diagnostics(samples))
    return {"chains": samples.n_chains}


def _spec(cfg: RunConfig, n_train, noise_sd, true_A) -> ExperimentSpec:
    return ExperimentSpec(
        n_train=int(n_train),
        noise_sd=float(noise_sd),
        true_A=float(true_A),
        seed=cfg.seed,
        chain=cfg.chain(),
        quad_spacing=float(cfg["grid"]["quad_spacing"]),
        prior=cfg.prior(),
        phi=float(cfg["gp"]["phi"]),
    )


def _truth(cfg: RunConfig):
    prof = cfg.data.get("profile")
    return make_truth_profile(None if prof in (None, "builtin") else cfg.resolve(prof))


def cmd_simulate(cfg: RunConfig, out: Path) -> dict:
    from .simulation import generate_observations

    s = cfg["simulate"]
    spec = _spec(cfg, s["n_train"], s["noise_sd"], s["true_A"])
    truth = _truth(cfg)
    res = run_experiment(spec, truth)
    if res.error:
        raise RuntimeError(res.error)
    # The same observations the fit used, for reuse with the CSV-driven commands.
    data = generate_observations(truth, spec, np.random.default_rng(spec.seed_sequence().spawn(3)[0]))
    obs_dir = out / "observations"
    obs_dir.mkdir(exist_ok=True)
    o = data.observations
    for name in ("thickness", "velocity", "elevation", "accumulation", "thinning"):
        io.write_series_csv(obs_dir / f"{name}.csv", getattr(o, name))
    for name, w in o.width_candidates.items():
        io.write_series_csv(obs_dir / f"width_{name}.csv", w)
    dump_profile(truth, out / "truth_profile")
    rows = io.prediction_rows(res.prediction)
    rows += [(x, "thickness_true", "value", h) for x, h in zip(res.prediction.x, truth.thickness_at(res.prediction.x))]
    omega = res.samples.flat("omega")
    qx = np.arange(omega.shape[1]) * spec.quad_spacing
    lo, hi = np.quantile(omega, [0.025, 0.975], axis=0)
    for stat, arr in (("mean", omega.mean(axis=0)), ("q025", lo), ("q975", hi)):
        rows += [(x, "width", stat, v) for x, v in zip(qx, arr)]
    rows += [(x, "width_true", "value", v) for x, v in zip(qx, linear_interp(truth.width, qx))]
    summary = res.row()
    timing = {"runtime_s": summary.pop("runtime_s")}
    io.write_tables(out, samples=res.samples, summary=summary, diagnostics=res.diagnostics, extra_rows=rows)
    io.write_json(out / "timing.json", timing)
    return {"cell": spec.label()}


COVERAGE_COLUMNS = (
    "n_train", "noise_sd", "width_coverage", "thickness_coverage", "thickness_coverage_noisy",
    "observation_coverage", "ci_width_slope", "A_mean", "A_lo", "A_hi", "error",
)


def cmd_coverage(cfg: RunConfig, out: Path) -> dict:
    c = cfg["coverage"]
    specs = [_spec(cfg, n, sd, cfg["simulate"]["true_A"]) for sd in c["noise_sd"] for n in c["n_train"]]
    results = run_experiment_grid(specs, _truth(cfg))
    with (out / "coverage.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COVERAGE_COLUMNS)
        for r in results:
            w.writerow([
                r.n_train, io.fmt(r.noise_sd), io.fmt(r.width_coverage), io.fmt(r.thickness_coverage),
                io.fmt(r.thickness_coverage_noisy), io.fmt(r.observation_coverage), io.fmt(r.ci_width_slope),
                io.fmt(r.A.get("mean", float("nan"))), io.fmt(r.A.get("lo", float("nan"))),
                io.fmt(r.A.get("hi", float("nan"))), (r.error or "").splitlines()[0] if r.error else "",
            ])
    rows = [r.row() for r in results]
    timing = {"runtime_s": [row.pop("runtime_s") for row in rows]}
    io.write_json(out / "summary.json", {"cells": rows})
    io.write_json(out / "timing.json", timing)
    return {"cells": len(results), "failed": sum(not r.ok for r in results)}


def run(args) -> dict:
    cfg, raw_bytes = load_run_config(args)
    out = _out_dir(cfg)
    _write_provenance(out, cfg, raw_bytes, args.command)
    try:
        handler = globals()[f"cmd_{args.command}"]
        if args.command in ("predict", "diagnose"):
            return handler(cfg, out, args)
        return handler(cfg, out)
    except Exception as exc:
        _report(exc, args.command, out)
        raise _Reported(exc) from exc


class _Reported(Exception):
    pass


def _report(exc: BaseException, command: Optional[str], out: Optional[Path]) -> dict:
    kind = "usage" if isinstance(exc, (UsageError, ConfigError)) else "runtime"
    rep = {"status": "error", "kind": kind, "command": command, "error": type(exc).__name__, "message": str(exc)}
    if out is not None:
        try:
            io.write_json(out / "error.json", rep)
        except OSError:
            pass
    return rep


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    command = None
    try:
        args = parser.parse_args(argv)
        command = args.command
        t0 = time.perf_counter()
        info = run(args)
        print(json.dumps({"status": "ok", "command": command, **info, "seconds": round(time.perf_counter() - t0, 3)}))
        return 0
    except _Reported as wrapped:
        exc = wrapped.__cause__
        rep = _report(exc, command, None)
        print(json.dumps(rep), file=sys.stderr)
        return 2 if rep["kind"] == "usage" else 1
    except (UsageError, ConfigError) as exc:
        print(json.dumps(_report(exc, command, None)), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surfaced as a machine-readable report
        print(json.dumps(_report(exc, command, None)), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
