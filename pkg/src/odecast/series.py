"""Irregularly sampled multivariate series: the package's input record.

A series is a sorted list of observation timestamps, a value matrix, and
a binary mask saying which (time, feature) cells were actually measured.
Times are normalized so the observation window spans [0, 1]; values are
z-scored per feature. ``NormStats`` retains the raw-unit statistics so
anything the model produces can be reported back in clinical units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

Array = np.ndarray


@dataclass
class NormStats:
    """Per-feature z-scoring statistics plus the time-axis affine map."""

    mean: Array
    std: Array
    time_origin: float = 0.0
    time_scale: float = 1.0  # raw time units (e.g. hours) per normalized window

    def to_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "time_origin": float(self.time_origin),
            "time_scale": float(self.time_scale),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(mean=np.asarray(d["mean"], dtype=np.float64),
                   std=np.asarray(d["std"], dtype=np.float64),
                   time_origin=float(d.get("time_origin", 0.0)),
                   time_scale=float(d.get("time_scale", 1.0)))

    def to_raw_values(self, values: Array) -> Array:
        return values * self.std + self.mean

    def to_raw_times(self, times: Array) -> Array:
        return np.asarray(times) * self.time_scale + self.time_origin


@dataclass
class IrregularSeries:
    """Timestamped, masked multivariate observations in normalized units."""

    times: Array                       # (T,), strictly increasing, window [0, 1]
    values: Array                      # (T, F), z-scored; cells with mask==0 are ignored
    mask: Array                        # (T, F), 1 = observed
    feature_names: list[str]
    label: int | None = None           # binary outcome, 1 = in-hospital death
    norm_stats: NormStats | None = None
    series_id: str | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def observed_count(self) -> int:
        return int(self.mask.sum())


def validate_series(series: IrregularSeries) -> list[str]:
    """Return a list of invariant violations (empty when the series is valid)."""
    problems: list[str] = []
    t, v, m = series.times, series.values, series.mask
    if t.ndim != 1:
        problems.append("times must be one-dimensional")
        return problems
    if v.shape != (t.size, len(series.feature_names)):
        problems.append(f"values shape {v.shape} != (n_times, n_features) "
                        f"({t.size}, {len(series.feature_names)})")
    if m.shape != v.shape:
        problems.append(f"mask shape {m.shape} != values shape {v.shape}")
        return problems
    if t.size == 0:
        problems.append("series has no timestamps")
        return problems
    if np.any(np.diff(t) <= 0):
        problems.append("times not increasing")
    if not np.all(np.isfinite(t)):
        problems.append("times contain non-finite entries")
    if not np.all((m == 0) | (m == 1)):
        problems.append("mask entries must be 0 or 1")
    if m.sum() < 1:
        problems.append("series has no observed entries")
    observed = m == 1
    if not np.all(np.isfinite(v[observed])):
        problems.append("observed values contain non-finite entries")
    if series.label is not None and series.label not in (0, 1):
        problems.append("label must be 0, 1, or absent")
    return problems


def check_series(series: IrregularSeries) -> IrregularSeries:
    problems = validate_series(series)
    if problems:
        raise ContractViolation("; ".join(problems))
    return series


def check_collection(collection: list[IrregularSeries]) -> list[IrregularSeries]:
    if not isinstance(collection, (list, tuple)):
        raise ContractViolation("expected a list of IrregularSeries")
    for i, s in enumerate(collection):
        problems = validate_series(s)
        if problems:
            raise ContractViolation(f"series {i}: " + "; ".join(problems))
    return list(collection)


def series_to_document(series: IrregularSeries) -> dict:
    """Structured-document form of one series (the wire/file schema)."""
    doc = {
        "schema": "odecast.series/1",
        "feature_names": list(series.feature_names),
        "times": [float(x) for x in series.times],
        "values": [[float(x) for x in row] for row in series.values],
        "mask": [[int(x) for x in row] for row in series.mask],
        "label": None if series.label is None else int(series.label),
    }
    if series.norm_stats is not None:
        doc["norm_stats"] = series.norm_stats.to_dict()
    if series.series_id is not None:
        doc["series_id"] = series.series_id
    return doc


def series_from_document(doc: dict) -> IrregularSeries:
    """Parse and validate the structured-document form; raises ContractViolation."""
    if not isinstance(doc, dict):
        raise ContractViolation("series document must be an object")
    missing = [k for k in ("feature_names", "times", "values", "mask") if k not in doc]
    if missing:
        raise ContractViolation(f"series document missing fields: {', '.join(missing)}")
    try:
        series = IrregularSeries(
            times=np.asarray(doc["times"], dtype=np.float64),
            values=np.asarray(doc["values"], dtype=np.float64),
            mask=np.asarray(doc["mask"], dtype=np.float64),
            feature_names=[str(n) for n in doc["feature_names"]],
            label=None if doc.get("label") is None else int(doc["label"]),
            norm_stats=NormStats.from_dict(doc["norm_stats"]) if doc.get("norm_stats") else None,
            series_id=doc.get("series_id"),
        )
    except (TypeError, ValueError) as exc:
        raise ContractViolation(f"series document malformed: {exc}") from exc
    return check_series(series)


def save_collection_jsonl(collection: list[IrregularSeries], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in collection:
            fh.write(json.dumps(series_to_document(s), sort_keys=True) + "\n")


def load_collection_jsonl(path) -> list[IrregularSeries]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(series_from_document(json.loads(line)))
    return out
