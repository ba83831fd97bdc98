"""Run configuration: JSON schema, defaults, overrides and object builders.

Example::

    {
      "seed": 7,
      "output_dir": "out/fit",
      "inputs": {
        "thickness": "data/thickness.csv",
        "velocity": "data/velocity.csv",
        "elevation": "data/elevation.csv",
        "accumulation": "data/accumulation.csv",
        "thinning": "data/thinning.csv",
        "widths": {"narrowest": "data/width_a.csv", "wide": "data/width_b.csv"}
      },
      "domain_length": 272800,
      "chain": {"n_iterations": 20000, "n_chains": 3}
    }

Relative paths resolve against the config file's directory.  Instead of
``inputs`` a ``profile`` ("builtin" or a profile directory) may be given,
in which case observations are simulated from it (``simulate`` section).
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional

from .core import ObservationSet, PhysicalConstants, ValidationError
from .inference import ChainConfig, InverseGamma, PriorSpec, TruncatedNormal
from .smoothing import SmootherSpec

SERIES_KEYS = ("thickness", "velocity", "elevation", "accumulation", "thinning")
SMOOTHED_KEYS = ("velocity", "elevation", "accumulation", "thinning")

DEFAULTS: dict[str, Any] = {
    "output_dir": "flowline_out",
    "domain_length": None,
    "grid": {"quad_spacing": 1000.0},
    "constants": {"rho": 917.0, "g": 9.81},
    "smoothing": {},
    "resmooth_slope": None,
    "prior": {
        "A_range": [0.0, 1e-16],
        "sigma2_omega": [2.0, 1e8],
        "tau2": [2.0, 1e4],
        "sigma2_H": [2.0, 1e6],
        "h0": None,
        "fixed_sigma2_H": None,
    },
    "gp": {"phi": 40000.0, "width": "narrowest", "sigma2_omega": 1e8, "tau2": 1e4},
    "chain": {"n_iterations": 20000, "n_chains": 3, "burn_in": 0.5, "n_keep": 1000, "step_sizes": {}},
    "selection": "continuity",
    "C0": 0.0,
    "naive": {"A_values": [0.0, 1e-17, 1e-16], "widths": None},
    "predict": {"x": None, "noise_draws": 10},
    "simulate": {"n_train": 5, "noise_sd": 50.0, "true_A": 1e-18},
    "coverage": {"n_train": [5, 10, 25], "noise_sd": [10.0, 50.0, 100.0]},
}

KNOWN_KEYS = set(DEFAULTS) | {"seed", "inputs", "profile", "command"}


class ConfigError(ValidationError):
    """Missing or malformed configuration; reported as a usage error."""


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict) and out[k]:
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_dotted(cfg: dict, dotted: str, value) -> None:
    """``set_dotted(cfg, "chain.n_iterations", 500)``."""
    *parents, leaf = dotted.split(".")
    node = cfg
    for p in parents:
        node = node.setdefault(p, {})
    node[leaf] = value


@dataclass(frozen=True)
class RunConfig:
    """Effective configuration: user values merged over the defaults."""

    data: dict
    base_dir: Path

    @classmethod
    def from_dict(cls, raw: Mapping, base_dir: Path = Path(".")) -> "RunConfig":
        unknown = set(raw) - KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "seed" not in raw or raw["seed"] is None:
            raise ConfigError("config must set an integer 'seed'")
        if not isinstance(raw["seed"], int) or isinstance(raw["seed"], bool) or raw["seed"] < 0:
            raise ConfigError("'seed' must be a nonnegative integer")
        cfg = cls(_merge(DEFAULTS, raw), Path(base_dir))
        cfg.validate_paths()
        return cfg

    @classmethod
    def load(cls, path) -> tuple["RunConfig", bytes]:
        raw, raw_bytes = read_config_json(path)
        return cls.from_dict(raw, Path(path).parent.resolve()), raw_bytes

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else (self.base_dir / p).resolve()

    def validate_paths(self) -> None:
        inputs = self.data.get("inputs")
        if inputs is not None:
            missing = [k for k in SERIES_KEYS if k not in inputs]
            if missing:
                raise ConfigError(f"inputs lacks {missing}")
            paths = [inputs[k] for k in SERIES_KEYS] + list((inputs.get("widths") or {}).values())
            for p in paths:
                if not self.resolve(p).exists():
                    raise ConfigError(f"input file {p} not found")
        prof = self.data.get("profile")
        if prof is not None and prof != "builtin" and not self.resolve(prof).is_dir():
            raise ConfigError(f"profile directory {prof} not found")

    def snapshot(self) -> dict:
        """Self-contained effective config with absolute input paths."""
        snap = copy.deepcopy(self.data)
        if snap.get("inputs"):
            ins = snap["inputs"]
            for k in SERIES_KEYS:
                ins[k] = str(self.resolve(ins[k]))
            if ins.get("widths"):
                ins["widths"] = {k: str(self.resolve(v)) for k, v in ins["widths"].items()}
        if snap.get("profile") not in (None, "builtin"):
            snap["profile"] = str(self.resolve(snap["profile"]))
        return snap

    # -- builders ----------------------------------------------------------

    def constants(self) -> PhysicalConstants:
        c = self.data["constants"]
        return PhysicalConstants(float(c["rho"]), float(c["g"]))

    def chain(self) -> ChainConfig:
        c = self.data["chain"]
        return ChainConfig(
            n_iterations=int(c["n_iterations"]),
            n_chains=int(c["n_chains"]),
            seed=self.seed,
            burn_in=float(c["burn_in"]),
            n_keep=int(c["n_keep"]),
            step_sizes=dict(c.get("step_sizes") or {}),
        )

    def prior(self) -> PriorSpec:
        p = self.data["prior"]
        h0 = p.get("h0")
        return PriorSpec(
            A_range=tuple(float(v) for v in p["A_range"]),
            sigma2_omega=InverseGamma(*map(float, p["sigma2_omega"])),
            tau2=InverseGamma(*map(float, p["tau2"])),
            sigma2_H=InverseGamma(*map(float, p["sigma2_H"])),
            h0=None if h0 is None else TruncatedNormal(float(h0["mean"]), float(h0["sd"]), float(h0.get("lower", 0.0))),
            fixed_sigma2_H=None if p.get("fixed_sigma2_H") is None else float(p["fixed_sigma2_H"]),
        )

    def smoother_specs(self) -> dict[str, Optional[SmootherSpec]]:
        """Per-series smoother; the string ``"none"`` disables smoothing."""
        out = {}
        for name, spec in (self.data["smoothing"] or {}).items():
            if name not in SMOOTHED_KEYS:
                raise ConfigError(f"cannot smooth unknown series {name!r}")
            out[name] = _smoother(spec)
        return out

    def resmooth_slope(self) -> Optional[SmootherSpec]:
        spec = self.data.get("resmooth_slope")
        return None if spec is None else _smoother(spec)

    def observations(self) -> ObservationSet:
        from .io import read_series_csv

        inputs = self.data.get("inputs")
        if inputs is None:
            raise ConfigError("this command needs an 'inputs' section")
        series = {k: read_series_csv(self.resolve(inputs[k])) for k in SERIES_KEYS}
        widths = {k: read_series_csv(self.resolve(v)) for k, v in (inputs.get("widths") or {}).items()}
        return ObservationSet(**series, width_candidates=widths)

    def domain_length(self, obs: ObservationSet) -> float:
        L = self.data.get("domain_length")
        if L is None:
            return float(max(obs.thickness[0][-1], obs.velocity[0][-1]))
        return float(L)


def read_config_json(path) -> tuple[dict, bytes]:
    """Parsed JSON object plus the exact bytes it came from."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    raw_bytes = path.read_bytes()
    try:
        raw = json.loads(raw_bytes)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return raw, raw_bytes


def _smoother(spec) -> Optional[SmootherSpec]:
    if spec is None or spec == "none":
        return None
    if spec == "spline":
        return SmootherSpec()
    if isinstance(spec, Mapping):
        return SmootherSpec(kind=spec.get("kind", "spline"), lam=spec.get("lam"))
    raise ConfigError(f"bad smoother spec {spec!r}")
