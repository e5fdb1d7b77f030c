"""Error metrics on physical displacements and per-structure reports."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import LengthMismatch, ZeroVariance


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if pred.size != truth.size:
        raise LengthMismatch(f"prediction has {pred.size} values, truth {truth.size}")
    return pred, truth


def mse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    d = truth - pred
    return float(np.mean(d * d))


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(truth - pred)))


def r2(pred, truth) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``."""
    pred, truth = _pair(pred, truth)
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        raise ZeroVariance("r2 is undefined for a constant truth series")
    return 1.0 - float(np.sum((truth - pred) ** 2)) / ss_tot


def ci(pred, truth) -> float:
    """Correlation index (Pearson correlation with population moments)."""
    pred, truth = _pair(pred, truth)
    dp = pred - pred.mean()
    dt = truth - truth.mean()
    var_p = float(np.mean(dp * dp))
    var_t = float(np.mean(dt * dt))
    if var_p == 0.0 or var_t == 0.0:
        raise ZeroVariance("correlation index needs non-constant series")
    value = float(np.mean(dp * dt)) / math.sqrt(var_p * var_t)
    return min(1.0, max(-1.0, value))


def _safe(fn, pred, truth):
    try:
        return fn(pred, truth)
    except ZeroVariance:
        return float("nan")


@dataclass
class SubsetRow:
    stiffness: float
    mass: float
    natural_frequency: float
    n_samples: int
    mse: float
    mae: float
    r2: float
    rank: int = 0


@dataclass
class MetricsReport:
    per_sample: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    subsets: list[SubsetRow] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "aggregate": self.aggregate,
            "subsets": [vars(r) for r in self.subsets],
            "per_sample": self.per_sample,
        }
        return json.dumps(payload, indent=2, sort_keys=True, allow_nan=True)


def subset_report(keys: Sequence[tuple[float, float]], preds, truths) -> list[SubsetRow]:
    """Group samples by (stiffness, mass), average MAE and rank ascending.

    ``keys[i]`` is the structure tuple of sample i; ``preds``/``truths`` are
    sequences of per-sample series in metres.
    """
    groups: dict[tuple[float, float], list[int]] = {}
    for i, key in enumerate(keys):
        groups.setdefault(tuple(key), []).append(i)
    rows = []
    for (k, m), idx in groups.items():
        p = np.concatenate([np.ravel(preds[i]) for i in idx])
        t = np.concatenate([np.ravel(truths[i]) for i in idx])
        rows.append(
            SubsetRow(
                stiffness=float(k),
                mass=float(m),
                natural_frequency=math.sqrt(k / m) / (2 * math.pi),
                n_samples=len(idx),
                mse=mse(p, t),
                mae=float(np.mean([mae(preds[i], truths[i]) for i in idx])),
                r2=_safe(r2, p, t),
            )
        )
    rows.sort(key=lambda r: (r.mae, r.stiffness, r.mass))
    for rank, row in enumerate(rows, start=1):
        row.rank = rank
    return rows


def ordinal(rank: int, total: int) -> str:
    if 10 <= rank % 100 <= 20:
        suffix = "th"
    else:
        suffix = {1: "st", 2: "nd", 3: "rd"}.get(rank % 10, "th")
    return f"{rank}{suffix} of {total}"


def ci_distribution(values, bins: int = 20, value_range: tuple[float, float] | None = None):
    """Histogram of CI values as probability mass per bin.

    Returns ``(edges, mass)``; ``mass`` sums to one.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        edges = np.linspace(*(value_range or (-1.0, 1.0)), bins + 1)
        return edges, np.zeros(bins)
    counts, edges = np.histogram(values, bins=bins, range=value_range)
    mass = counts / counts.sum()
    return edges, mass


def evaluate(keys, preds, truths, sample_ids: Sequence[str] | None = None) -> MetricsReport:
    """Per-sample, aggregate (concatenated) and per-structure metrics."""
    preds = [np.ravel(p) for p in preds]
    truths = [np.ravel(t) for t in truths]
    per_sample = []
    for i, (p, t) in enumerate(zip(preds, truths)):
        per_sample.append(
            {
                "index": i,
                "id": sample_ids[i] if sample_ids is not None else str(i),
                "stiffness": float(keys[i][0]),
                "mass": float(keys[i][1]),
                "mse": mse(p, t),
                "mae": mae(p, t),
                "r2": _safe(r2, p, t),
                "ci": _safe(ci, p, t),
            }
        )
    allp = np.concatenate(preds)
    allt = np.concatenate(truths)
    aggregate = {
        "n_samples": len(preds),
        "mse": mse(allp, allt),
        "mae": mae(allp, allt),
        "r2": _safe(r2, allp, allt),
        "mean_sample_r2": float(np.nanmean([s["r2"] for s in per_sample])),
        "mean_ci": float(np.nanmean([s["ci"] for s in per_sample])),
    }
    return MetricsReport(per_sample=per_sample, aggregate=aggregate, subsets=subset_report(keys, preds, truths))


def write_subsets_csv(rows: Sequence[SubsetRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stiffness", "mass", "natural_frequency", "mse", "mae", "r2", "rank"])
        for r in rows:
            w.writerow([r.stiffness, r.mass, repr(r.natural_frequency), repr(r.mse), repr(r.mae), repr(r.r2), r.rank])


def write_histogram_csv(edges, mass, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "probability"])
        for lo, hi, p in zip(edges[:-1], edges[1:], mass):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(p))])
