"""CSV and JSON persistence for series, samples, predictions and configs."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .core import Series, ValidationError
from .inference import SCALARS, PosteriorSamples, ThicknessPrediction

PathLike = Union[str, Path]
SERIES_HEADER = ("x_m", "value")
PREDICTION_HEADER = ("x_m", "quantity", "statistic", "value")


class CSVParseError(ValidationError):
    """Malformed CSV content; the message names the offending line."""


def fmt(v: float) -> str:
    """Shortest decimal that round-trips to the same float."""
    return repr(float(v))


def read_series_csv(path: PathLike) -> Series:
    """Read a two-column ``x_m,value`` file, sorted by location."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    xs, ys = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != SERIES_HEADER:
            raise CSVParseError(f"{path}: line 1: expected header 'x_m,value'")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise CSVParseError(f"{path}: line {line}: expected 2 fields, got {len(row)}")
            try:
                x, y = float(row[0]), float(row[1])
            except ValueError:
                raise CSVParseError(f"{path}: line {line}: non-numeric value {row!r}") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise CSVParseError(f"{path}: line {line}: NaN or infinite value")
            xs.append(x)
            ys.append(y)
    if not xs:
        raise ValidationError(f"{path}: no data rows")
    x = np.array(xs)
    y = np.array(ys)
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    dup = np.flatnonzero(np.diff(x) == 0)
    if dup.size:
        raise ValidationError(f"{path}: duplicate location x_m={x[dup[0]]!r}")
    return x, y


def write_series_csv(path: PathLike, series: Series) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        for x, y in zip(*series):
            w.writerow((fmt(x), fmt(y)))
    return path


# -- samples ---------------------------------------------------------------


def write_samples_csv(path: PathLike, samples: PosteriorSamples) -> Path:
    """One row per retained state; width columns are indexed by quad point."""
    path = Path(path)
    m = samples.omega.shape[-1]
    header = ["chain", "draw", *SCALARS, *(f"omega_{i}" for i in range(m))]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for c in range(samples.n_chains):
            for i in range(samples.n_draws):
                scal = [fmt(getattr(samples, k)[c, i]) for k in SCALARS]
                w.writerow([c, i, *scal, *map(fmt, samples.omega[c, i])])
    return path


def read_samples_csv(path: PathLike) -> PosteriorSamples:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2 + len(SCALARS)] != ["chain", "draw", *SCALARS]:
            raise CSVParseError(f"{path}: line 1: not a samples file")
        rows = []
        for row in reader:
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise CSVParseError(f"{path}: line {reader.line_num}: non-numeric value") from None
    if not rows:
        raise ValidationError(f"{path}: no samples")
    arr = np.array(rows)
    chains = arr[:, 0].astype(int)
    n_chains = chains.max() + 1
    counts = np.bincount(chains, minlength=n_chains)
    if np.any(counts != counts[0]):
        raise ValidationError(f"{path}: chains have unequal lengths")
    n = counts[0]
    arr = arr[np.lexsort((arr[:, 1], chains))]
    scal = {k: arr[:, 2 + j].reshape(n_chains, n) for j, k in enumerate(SCALARS)}
    omega = arr[:, 2 + len(SCALARS):].reshape(n_chains, n, -1)
    return PosteriorSamples(**scal, omega=omega)


# -- predictions and summaries ---------------------------------------------------


def prediction_rows(pred: Optional[ThicknessPrediction]) -> list[tuple]:
    if pred is None:
        return []
    rows = []
    for quantity, stats in (
        ("thickness", (("mean", pred.mean), ("q025", pred.lo), ("q975", pred.hi))),
        ("thickness_noisy", (("mean", pred.mean_noisy), ("q025", pred.lo_noisy), ("q975", pred.hi_noisy))),
    ):
        for j, x in enumerate(pred.x):
            for stat, arr in stats:
                rows.append((x, quantity, stat, arr[j]))
    return rows


def write_long_csv(path: PathLike, rows: Iterable[tuple]) -> Path:
    """Long-format table ``x_m,quantity,statistic,value``; header only if empty."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for x, q, s, v in rows:
            w.writerow((fmt(x), q, s, fmt(v)))
    return path


def read_long_csv(path: PathLike) -> list[tuple]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != PREDICTION_HEADER:
            raise CSVParseError(f"{path}: line 1: expected header {','.join(PREDICTION_HEADER)}")
        return [(float(x), q, s, float(v)) for x, q, s, v in reader]


def scalar_summary(samples: PosteriorSamples, level: float = 0.95) -> dict:
    """Posterior mean and equal-tailed interval for every scalar parameter."""
    out = {}
    for k in SCALARS:
        v = samples.flat(k)
        lo, hi = np.quantile(v, [(1 - level) / 2, (1 + level) / 2])
        out[k] = {"mean": float(v.mean()), "lo": float(lo), "hi": float(hi)}
    return out


def write_json(path: PathLike, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=True) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_tables(
    out_dir: PathLike,
    samples: Optional[PosteriorSamples] = None,
    prediction: Optional[ThicknessPrediction] = None,
    summary: Optional[Mapping] = None,
    diagnostics: Optional[Mapping] = None,
    extra_rows: Sequence[tuple] = (),
) -> dict[str, Path]:
    """Write whichever bundle parts are present; returns the file paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    if samples is not None:
        files["samples"] = write_samples_csv(out / "samples.csv", samples)
        summary = {**scalar_summary(samples), **(summary or {})}
    if prediction is not None or extra_rows:
        files["predictions"] = write_long_csv(out / "predictions.csv", [*prediction_rows(prediction), *extra_rows])
    if summary is not None:
        files["summary"] = write_json(out / "summary.json", summary)
    if diagnostics is not None:
        files["diagnostics"] = write_json(out / "diagnostics.json", diagnostics)
    return files
