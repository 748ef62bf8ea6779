"""Synthetic generators and ingestion of user-supplied irregular series.

Two generators stand in for restricted clinical data. ``gen_spirals``
produces the classic two-direction planar spirals used to sanity-check
latent dynamics models. ``gen_icu`` produces 48-hour ICU-like windows of
four vitals (FiO2, Glasgow Coma Scale, Heart Rate, Arterial O2 pressure)
driven by a smooth latent severity process whose drift depends on the
outcome label, so mortality is separable by construction; a logistic
baseline over summary statistics certifies that separability.

Ingestion reads a documented tabular format (UTF-8, header row,
``patient_id,timestamp,feature,value[,label]``), groups rows per patient,
z-scores over the collection, and keeps the normalization statistics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, ParseError
from .series import IrregularSeries, NormStats

Array = np.ndarray

ICU_FEATURES = ["FiO2", "Glasgow Coma Scale", "Heart Rate", "Arterial O2 pressure"]
# Hourly observation probability per feature; arterial O2 pressure is sparsest.
ICU_OBS_RATES = {"FiO2": 0.45, "Glasgow Coma Scale": 0.35,
                 "Heart Rate": 0.85, "Arterial O2 pressure": 0.15}


@dataclass
class SpiralConfig:
    n_series: int = 300
    points_per_series: int = 40
    cw_ratio: float = 0.5          # fraction of clockwise (inward) spirals
    noise_std: float = 0.05        # raw-unit jitter on coordinates
    seed: int = 0

    def __post_init__(self):
        if self.n_series <= 0 or self.points_per_series <= 0:
            raise ContractViolation("spiral counts must be positive")
        if not 0.0 <= self.cw_ratio <= 1.0:
            raise ContractViolation("cw_ratio must be in [0, 1]")


@dataclass
class IcuGenConfig:
    n_patients: int = 300
    window_hours: float = 48.0
    death_ratio: float = 0.35
    drift_separation: float = 1.0  # scales the severity-drift gap between classes
    obs_rate_scale: float = 1.0    # multiplies every per-feature observation rate
    seed: int = 0

    def __post_init__(self):
        if self.n_patients <= 0 or self.window_hours <= 0:
            raise ContractViolation("n_patients and window_hours must be positive")
        if not 0.0 <= self.death_ratio < 1.0:
            raise ContractViolation("death_ratio must be in [0, 1)")
        if self.obs_rate_scale <= 0:
            raise ContractViolation("obs_rate_scale must be positive")


SPIRAL_OMEGA = 4.0 * np.pi
SPIRAL_R0_OUT, SPIRAL_R0_IN = 0.35, 1.75
SPIRAL_RADIAL_SPEED = 0.8
SPIRAL_MAX_OFFSET = 0.5  # per-series start offset into the underlying curve


def spiral_point(direction: int, tau: Array, theta0: float) -> Array:
    """Point on the underlying spiral at curve parameter ``tau``.

    Direction +1 spirals outward counter-clockwise (radius 0.35 + 0.8 tau),
    -1 inward clockwise (radius 1.75 - 0.8 tau, positive through tau ~ 2.2).
    """
    if direction > 0:
        r = SPIRAL_R0_OUT + SPIRAL_RADIAL_SPEED * tau
        theta = theta0 + SPIRAL_OMEGA * tau
    else:
        r = SPIRAL_R0_IN - SPIRAL_RADIAL_SPEED * tau
        theta = theta0 - SPIRAL_OMEGA * tau
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)


def gen_spirals(config: SpiralConfig) -> list[IrregularSeries]:
    """Two-direction spirals with irregular timestamps by uniform thinning.

    Each series covers one window of the underlying curve starting at a
    random per-series offset, so radii just past any one window are well
    represented across the population and extrapolation stays on-manifold.
    Labels are the rotation direction (1 = clockwise/inward). Values are
    raw coordinates; call ``normalize_split`` before training.
    """
    rng = np.random.default_rng(config.seed)
    dense = np.linspace(0.0, 1.0, 101)
    out = []
    n_cw = int(round(config.cw_ratio * config.n_series))
    for i in range(config.n_series):
        direction = -1 if i < n_cw else 1
        keep = np.sort(rng.choice(dense.size, size=min(config.points_per_series, dense.size),
                                  replace=False))
        t = dense[keep]
        theta0 = rng.uniform(0.0, 2.0 * np.pi)
        offset = rng.uniform(0.0, SPIRAL_MAX_OFFSET)
        xy = spiral_point(direction, offset + t, theta0)
        xy = xy + rng.normal(0.0, config.noise_std, size=xy.shape)
        out.append(IrregularSeries(
            times=t, values=xy, mask=np.ones_like(xy),
            feature_names=["x", "y"], label=1 if direction < 0 else 0,
            series_id=f"spiral-{i:04d}"))
    order = rng.permutation(len(out))
    return [out[k] for k in order]


def _severity_curve(label: int, hours: Array, rng: np.random.Generator,
                    separation: float) -> Array:
    """Smooth latent severity; deceased patients carry a persistent upward
    drift whose per-patient rate varies, so futures genuinely diverge
    rather than collapsing onto a plateau."""
    h = hours / hours[-1]
    if label == 1:
        h0 = rng.uniform(0.2, 0.35)
        slope = rng.uniform(0.5, 0.85)
    else:
        h0 = rng.uniform(0.15, 0.4)
        slope = rng.uniform(-0.15, 0.2)
    sev = h0 + slope * separation * h
    wander = rng.normal(0.0, 0.015, size=h.size).cumsum()
    return np.clip(sev + wander - wander[0], 0.0, 1.15)


def icu_response(severity: Array, rng: np.random.Generator) -> Array:
    """Map severity to the four vitals in raw clinical units.

    Deterioration drives GCS down and FiO2 up (oxygen support increases
    as the coma state deepens), heart rate up, arterial O2 down.
    """
    fio2 = 0.21 + 0.6 * severity + rng.normal(0.0, 0.02, severity.size)
    gcs = 15.0 - 11.0 * severity + rng.normal(0.0, 0.4, severity.size)
    hr = 72.0 + 45.0 * severity + rng.normal(0.0, 3.0, severity.size)
    pao2 = 95.0 - 40.0 * severity + rng.normal(0.0, 4.0, severity.size)
    return np.stack([np.clip(fio2, 0.21, 1.0), np.clip(gcs, 3.0, 15.0),
                     np.clip(hr, 30.0, 220.0), np.clip(pao2, 30.0, 130.0)], axis=1)


def gen_icu(config: IcuGenConfig) -> list[IrregularSeries]:
    """ICU-like 48-hour windows; per-feature thinning makes them sparse."""
    rng = np.random.default_rng(config.seed)
    out = []
    hours = np.arange(0.0, config.window_hours + 0.5, 1.0)
    n_dead = int(round(config.death_ratio * config.n_patients))
    for i in range(config.n_patients):
        label = 1 if i < n_dead else 0
        sev = _severity_curve(label, hours, rng, config.drift_separation)
        raw = icu_response(sev, rng)
        mask = np.zeros_like(raw)
        for j, name in enumerate(ICU_FEATURES):
            rate = min(1.0, ICU_OBS_RATES[name] * config.obs_rate_scale)
            mask[:, j] = rng.random(hours.size) < rate
        mask[0, 2] = 1.0  # admission heart rate is always charted
        keep = mask.sum(axis=1) > 0
        out.append(IrregularSeries(
            times=hours[keep] / config.window_hours,
            values=raw[keep],
            mask=mask[keep],
            feature_names=list(ICU_FEATURES),
            label=label,
            norm_stats=NormStats(mean=np.zeros(4), std=np.ones(4),
                                 time_origin=0.0, time_scale=config.window_hours),
            series_id=f"icu-{i:04d}"))
    order = rng.permutation(len(out))
    return [out[k] for k in order]


def normalize_split(train: list[IrregularSeries],
                    *others: list[IrregularSeries]) -> tuple[list[IrregularSeries], ...]:
    """Z-score every collection with statistics from the training split only.

    Statistics are computed over observed cells; they travel with each
    series (and later inside the checkpoint) so outputs can be converted
    back to raw units.
    """
    if not train:
        raise ContractViolation("cannot normalize an empty training split")
    F = train[0].n_features
    sums = np.zeros(F)
    sqs = np.zeros(F)
    counts = np.zeros(F)
    for s in train:
        sums += (s.values * s.mask).sum(axis=0)
        sqs += (s.values ** 2 * s.mask).sum(axis=0)
        counts += s.mask.sum(axis=0)
    # Features with fewer than two observations pass through unscaled.
    safe = np.maximum(counts, 1)
    mean = np.where(counts >= 1, sums / safe, 0.0)
    var = sqs / safe - mean ** 2
    std = np.where(counts >= 2, np.sqrt(np.maximum(var, 1e-12)), 1.0)
    base = train[0].norm_stats

    def apply(collection: list[IrregularSeries]) -> list[IrregularSeries]:
        out = []
        for s in collection:
            stats = NormStats(mean=mean.copy(), std=std.copy(),
                              time_origin=base.time_origin if base else 0.0,
                              time_scale=base.time_scale if base else 1.0)
            out.append(IrregularSeries(
                times=s.times.copy(),
                values=(s.values - mean) / std,
                mask=s.mask.copy(),
                feature_names=list(s.feature_names),
                label=s.label, norm_stats=stats, series_id=s.series_id))
        return out

    return tuple(apply(c) for c in (train, *others))


def summary_features(series: IrregularSeries) -> Array:
    """Per-feature summary statistics for the logistic baseline: mean, last,
    min, max, and least-squares slope over observed entries (zeros when a
    feature was never observed)."""
    F = series.n_features
    feats = np.zeros(5 * F)
    for j in range(F):
        obs = series.mask[:, j] == 1
        if not np.any(obs):
            continue
        t = series.times[obs]
        v = series.values[obs, j]
        slope = 0.0
        if t.size >= 2 and np.ptp(t) > 0:
            slope = float(np.polyfit(t, v, 1)[0])
        feats[5 * j:5 * j + 5] = [v.mean(), v[-1], v.min(), v.max(), slope]
    return feats


def summary_baseline_auc(train: list[IrregularSeries],
                         test: list[IrregularSeries]) -> float:
    """AUC of logistic regression on summary statistics (generator gate)."""
    from sklearn.linear_model import LogisticRegression
    from sklearn.metrics import roc_auc_score
    from sklearn.preprocessing import StandardScaler

    Xtr = np.stack([summary_features(s) for s in train])
    ytr = np.array([s.label for s in train], dtype=int)
    Xte = np.stack([summary_features(s) for s in test])
    yte = np.array([s.label for s in test], dtype=int)
    scaler = StandardScaler().fit(Xtr)
    clf = LogisticRegression(max_iter=2000).fit(scaler.transform(Xtr), ytr)
    return float(roc_auc_score(yte, clf.predict_proba(scaler.transform(Xte))[:, 1]))


# ---------------------------------------------------------------------------
# Tabular ingestion / export
# ---------------------------------------------------------------------------

HEADER = ["patient_id", "timestamp", "feature", "value"]


def ingest(path) -> tuple[list[IrregularSeries], list[str]]:
    """Read the tabular format into a normalized collection.

    Returns (collection, warnings). Duplicate (patient, time, feature)
    cells are averaged with a warning. Values are z-scored over the whole
    ingested collection and times normalized to each patient's window;
    ingesting an exported collection reproduces it exactly.
    """
    rows: dict[str, dict[tuple[float, str], list[float]]] = {}
    labels: dict[str, int | None] = {}
    warnings: list[str] = []
    feature_set: set[str] = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return [], warnings
        if [h.strip() for h in header[:4]] != HEADER:
            raise ParseError(f"expected header {','.join(HEADER)}[,label]", line=1)
        has_label = len(header) >= 5 and header[4].strip() == "label"
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 4:
                raise ParseError(f"expected at least 4 columns, got {len(row)}", line=lineno)
            pid, ts, feat, val = (c.strip() for c in row[:4])
            if not pid or not feat:
                raise ParseError("patient_id and feature must be nonempty", line=lineno)
            try:
                t = float(ts)
                v = float(val)
            except ValueError as exc:
                raise ParseError(f"non-numeric timestamp or value: {exc}", line=lineno)
            if not (np.isfinite(t) and np.isfinite(v)):
                raise ParseError("timestamp and value must be finite", line=lineno)
            feature_set.add(feat)
            cell = rows.setdefault(pid, {}).setdefault((t, feat), [])
            if cell:
                warnings.append(f"line {lineno}: duplicate observation "
                                f"({pid}, {ts}, {feat}) averaged")
            cell.append(v)
            if has_label and len(row) >= 5 and row[4].strip():
                try:
                    labels[pid] = int(row[4].strip())
                except ValueError as exc:
                    raise ParseError(f"label must be 0 or 1: {exc}", line=lineno)
    if not rows:
        return [], warnings

    features = sorted(feature_set)
    jdx = {f: j for j, f in enumerate(features)}
    raw_series = []
    for pid in sorted(rows):
        cells = rows[pid]
        times = sorted({t for (t, _) in cells})
        t_arr = np.asarray(times)
        idx = {t: i for i, t in enumerate(times)}
        values = np.zeros((len(times), len(features)))
        mask = np.zeros_like(values)
        for (t, feat), vals in cells.items():
            values[idx[t], jdx[feat]] = float(np.mean(vals))
            mask[idx[t], jdx[feat]] = 1.0
        origin = float(t_arr[0])
        scale = float(t_arr[-1] - t_arr[0]) if t_arr.size > 1 and t_arr[-1] > t_arr[0] else 1.0
        raw_series.append(IrregularSeries(
            times=(t_arr - origin) / scale, values=values, mask=mask,
            feature_names=list(features), label=labels.get(pid),
            norm_stats=NormStats(mean=np.zeros(len(features)), std=np.ones(len(features)),
                                 time_origin=origin, time_scale=scale),
            series_id=pid))
    normalized = normalize_split(raw_series)[0]
    return normalized, warnings


def export_csv(collection: list[IrregularSeries], path) -> None:
    """Write a collection back to the tabular format in raw units."""
    any_label = any(s.label is not None for s in collection)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER + (["label"] if any_label else []))
        for s in collection:
            stats = s.norm_stats or NormStats(mean=np.zeros(s.n_features),
                                              std=np.ones(s.n_features))
            raw_t = stats.to_raw_times(s.times)
            raw_v = stats.to_raw_values(s.values)
            first = True
            for i in range(s.times.size):
                for j in range(s.n_features):
                    if s.mask[i, j] != 1:
                        continue
                    row = [s.series_id or "series", repr(float(raw_t[i])),
                           s.feature_names[j], repr(float(raw_v[i, j]))]
                    if any_label:
                        row.append("" if (not first or s.label is None) else str(s.label))
                    writer.writerow(row)
                    first = False
