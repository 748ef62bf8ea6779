"""The human-facing trajectory objects built on a trained model.

An ensemble is K decoded sample paths over a shared grid, each from an
independent draw of the initial latent state and of the per-trajectory
noise channel. From the ensemble come the per-time spread, the horizon
of predictability (the first time past the observed span where pooled
spread exceeds a threshold), and an outcome-risk curve per data prefix.

Hypothetical-point queries condition the family by importance
resampling: many proposals are weighted by a Gaussian kernel on their
decoded distance to the point and a family of K is resampled from them,
so the result concentrates near the point while staying model-consistent.
Backward paths reuse the same dynamics integrated in reverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (ContractViolation, EmptyWindowError, EnsembleDegenerateError,
                     ModelBlowUpError, QueryInfeasibleError, StiffnessError)
from .model import (LatentPath, ModelParams, Reconstruction, classify_build, decode_build,
                    encode, evolve_batch, params_to_tensors, select_fraction)
from .ode import OdeProblem, dopri5_integrate
from .series import IrregularSeries
from .tensor import Tape

Array = np.ndarray

RISK_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass
class EngineConfig:
    k_default: int = 30
    horizon_mult: float = 2.0
    theta_hop: float = 1.0            # pooled-spread threshold, normalized units
    grid_per_window: int = 25
    risk_threshold: float = 0.5
    proposal_factor: int = 50         # M = proposal_factor * K unless given
    min_effective_support: float = 5.0
    rtol: float = 1e-7
    atol: float = 1e-9


@dataclass
class HypotheticalPoint:
    """A user-placed future measurement: feature ``value`` at ``time``
    (normalized units), matched within kernel width ``tolerance``."""

    time: float
    feature: int
    value: float
    tolerance: float

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ContractViolation("tolerance must be positive")
        if self.time < 0:
            raise ContractViolation("query time must be non-negative")
        if not np.isfinite(self.value):
            raise ContractViolation("query value must be finite")


@dataclass
class TrajectoryEnsemble:
    grid: Array                 # (T,)
    observed_end: float         # end of the span fed to the encoder
    fraction: float
    feature_names: list[str]
    decoded: Array              # (T, K, F) member feature means
    latents: Array              # (T, K, L)
    noises: Array               # (K, E) per-member noise channels
    spread: Array               # (T, F) ensemble standard deviation
    hop: float | None           # None = beyond grid
    risk_points: list[tuple[float, float]]
    risk_first_crossing: float | None
    risk_threshold: float
    seed: int
    dropped: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.decoded.shape[1]

    @property
    def members(self) -> list[Reconstruction]:
        flag = self.grid <= self.observed_end + 1e-12
        return [Reconstruction(times=self.grid.copy(), means=self.decoded[:, k, :].copy(),
                               observed_flag=flag.copy())
                for k in range(self.k)]


def make_grid(horizon_mult: float, per_window: int, extra_times=()) -> Array:
    """Uniform grid over [0, horizon_mult] windows, plus any extra knots."""
    if horizon_mult < 1.0:
        raise ContractViolation("horizon_mult must be at least 1")
    n = int(round(per_window * horizon_mult)) + 1
    grid = np.linspace(0.0, horizon_mult, n)
    if len(extra_times):
        grid = np.unique(np.concatenate([grid, np.asarray(extra_times, dtype=np.float64)]))
    return grid


def _pooled(spread: Array) -> Array:
    return spread.mean(axis=1)


def _hop_from_spread(grid: Array, spread: Array, observed_end: float,
                     theta_hop: float) -> float | None:
    pooled = _pooled(spread)
    beyond = (grid > observed_end + 1e-12) & (pooled > theta_hop)
    idx = np.nonzero(beyond)[0]
    return float(grid[idx[0]]) if idx.size else None


def _decode_states(states: Array, params: ModelParams) -> Array:
    """(T, K, L) latent block -> (T, K, F) feature means."""
    T, K, L = states.shape
    tape = Tape()
    pt = params_to_tensors(tape, params, trainable=False)
    return decode_build(tape, pt, tape.constant(states.reshape(T * K, L))) \
        .data.reshape(T, K, params.arch.n_features)


def _classify_states(states_2d: Array, params: ModelParams) -> Array:
    tape = Tape()
    pt = params_to_tensors(tape, params, trainable=False)
    logits = classify_build(tape, pt, tape.constant(states_2d)).data[:, 0]
    return 1.0 / (1.0 + np.exp(-logits))


def _draw_members(series: IrregularSeries, params: ModelParams, fraction: float,
                  count: int, grid: Array, seed: int,
                  config: EngineConfig) -> tuple[Array, Array, Array, int]:
    """Sample ``count`` (z0, noise) draws and evolve them over the grid.

    Returns (latents (T, count, L), noises, z0s, dropped). Divergent
    members are dropped individually; more than a quarter lost raises
    EnsembleDegenerateError.
    """
    posterior = encode(series, params, fraction)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 929]))
    L, E = params.arch.latent_dim, params.arch.noise_dim
    z0 = posterior.mean + posterior.std * rng.standard_normal((count, L))
    noises = rng.standard_normal((count, E))
    try:
        latents = evolve_batch(z0, noises, grid, params, rtol=config.rtol, atol=config.atol)
        return latents, noises, z0, 0
    except (ModelBlowUpError, StiffnessError):
        pass
    kept, keep_idx = [], []
    for k in range(count):
        try:
            kept.append(evolve_batch(z0[k:k + 1], noises[k:k + 1], grid, params,
                                     rtol=config.rtol, atol=config.atol,
                                     max_steps=5_000)[:, 0, :])
            keep_idx.append(k)
        except (ModelBlowUpError, StiffnessError):
            continue
    dropped = count - len(keep_idx)
    if dropped > count / 4:
        raise EnsembleDegenerateError(
            f"{dropped} of {count} trajectory draws diverged", dropped=dropped,
            requested=count)
    latents = np.stack(kept, axis=1)
    return latents, noises[keep_idx], z0[keep_idx], dropped


def risk_curve(series: IrregularSeries, params: ModelParams,
               fractions=RISK_FRACTIONS, threshold: float = 0.5,
               rtol: float = 1e-7, atol: float = 1e-9) -> tuple[list[tuple[float, float]], float | None]:
    """Outcome probability per data prefix, via the deterministic
    posterior-mean latent at each prefix's last observed time.

    Returns (points, first strict threshold crossing or None). A prefix
    with no observations raises EmptyWindowError.
    """
    if any(f2 <= f1 for f1, f2 in zip(fractions, fractions[1:])):
        raise ContractViolation("fractions must be sorted strictly increasing")
    if not all(0.0 < f <= 1.0 for f in fractions):
        raise ContractViolation("fractions must lie in (0, 1]")
    points = []
    crossing = None
    for f in fractions:
        rows_t, _, _ = select_fraction(series, f)
        t_end = float(rows_t[-1])
        posterior = encode(series, params, f)
        noise = np.zeros((1, params.arch.noise_dim))
        grid = np.array([t_end]) if t_end > 0 else np.array([0.0])
        states = evolve_batch(posterior.mean[None, :], noise, grid, params,
                              rtol=rtol, atol=atol)
        prob = float(_classify_states(states[-1], params)[0])
        points.append((float(f), prob))
        if crossing is None and prob > threshold:
            crossing = float(f)
    return points, crossing


def _ensemble_risk(series: IrregularSeries, params: ModelParams, latents: Array,
                   grid: Array, threshold: float,
                   config: EngineConfig) -> tuple[list[tuple[float, float]], float | None]:
    """Prefix risks where data exists, member-averaged risks at
    extrapolation knots beyond the window."""
    points: list[tuple[float, float]] = []
    crossing = None
    feasible = []
    for f in RISK_FRACTIONS:
        try:
            select_fraction(series, f)
            feasible.append(f)
        except EmptyWindowError:
            continue
    if feasible:
        points, crossing = risk_curve(series, params, tuple(feasible), threshold,
                                      rtol=config.rtol, atol=config.atol)
    beyond = np.nonzero(grid > 1.0 + 1e-12)[0]
    for t_idx in beyond:
        probs = _classify_states(latents[t_idx], params)
        p = float(probs.mean())
        points.append((float(grid[t_idx]), p))
        if crossing is None and p > threshold:
            crossing = float(grid[t_idx])
    return points, crossing


def sample_ensemble(series: IrregularSeries, params: ModelParams,
                    fraction: float = 1.0, k: int | None = None,
                    horizon_mult: float | None = None, seed: int = 0,
                    config: EngineConfig | None = None,
                    extra_times=()) -> TrajectoryEnsemble:
    """K independent futures of one series, with spread, HOP and risk curve."""
    config = config or EngineConfig()
    k = config.k_default if k is None else int(k)
    horizon_mult = config.horizon_mult if horizon_mult is None else float(horizon_mult)
    if k < 1:
        raise ContractViolation("K must be at least 1")
    grid = make_grid(horizon_mult, config.grid_per_window, extra_times)
    latents, noises, _, dropped = _draw_members(series, params, fraction, k, grid,
                                                seed, config)
    decoded = _decode_states(latents, params)
    spread = decoded.std(axis=1, ddof=0)
    hop = _hop_from_spread(grid, spread, fraction, config.theta_hop)
    risk_points, crossing = _ensemble_risk(series, params, latents, grid,
                                           config.risk_threshold, config)
    return TrajectoryEnsemble(
        grid=grid, observed_end=fraction, fraction=fraction,
        feature_names=list(params.feature_names), decoded=decoded, latents=latents,
        noises=noises, spread=spread, hop=hop, risk_points=risk_points,
        risk_first_crossing=crossing, risk_threshold=config.risk_threshold,
        seed=seed, dropped=dropped)


def estimate_hop(ensemble: TrajectoryEnsemble,
                 theta_hop: float | None = None) -> float | None:
    """First grid time past the observed span where pooled spread exceeds
    the threshold; None when the fan never divers that far on the grid."""
    if ensemble.k < 2:
        raise ContractViolation("HOP estimation needs at least 2 members")
    theta = ensemble.extra.get("theta_hop", 1.0) if theta_hop is None else theta_hop
    return _hop_from_spread(ensemble.grid, ensemble.spread, ensemble.observed_end, theta)


def systematic_resample(weights: Array, count: int, rng: np.random.Generator) -> Array:
    """Low-variance systematic resampling of ``count`` indices by weight."""
    w = weights / weights.sum()
    positions = (rng.random() + np.arange(count)) / count
    return np.searchsorted(np.cumsum(w), positions).clip(max=w.size - 1)


def condition_on_point(series: IrregularSeries, params: ModelParams,
                       point: HypotheticalPoint, k: int | None = None,
                       m: int | None = None, seed: int = 0, fraction: float = 1.0,
                       horizon_mult: float | None = None,
                       config: EngineConfig | None = None) -> TrajectoryEnsemble:
    """Family of likely trajectories passing near a hypothetical point.

    M proposals are weighted by exp(-d^2 / (2 tolerance^2)) on their
    decoded distance d to the point at the query time, then K members are
    systematically resampled by weight. When the summed plausibility of
    all proposals is below the support floor, the query is infeasible:
    the model does not produce trajectories anywhere near that point.
    """
    config = config or EngineConfig()
    k = config.k_default if k is None else int(k)
    if k < 1:
        raise ContractViolation("K must be at least 1")
    m = config.proposal_factor * k if m is None else int(m)
    if m < k:
        raise ContractViolation("M proposals must be at least K")
    if not 0 <= point.feature < len(params.feature_names):
        raise ContractViolation(f"feature index {point.feature} out of range")
    horizon = max(config.horizon_mult if horizon_mult is None else horizon_mult,
                  point.time)
    grid = make_grid(horizon, config.grid_per_window, extra_times=[point.time])
    latents, noises, _, dropped = _draw_members(series, params, fraction, m, grid,
                                                seed, config)
    decoded = _decode_states(latents, params)
    t_idx = int(np.searchsorted(grid, point.time))
    dist = np.abs(decoded[t_idx, :, point.feature] - point.value)
    weights = np.exp(-0.5 * (dist / point.tolerance) ** 2)
    support = float(weights.sum())
    if support < config.min_effective_support:
        raise QueryInfeasibleError(
            f"summed plausibility {support:.3g} below "
            f"{config.min_effective_support:g}; the model considers this point implausible",
            best_distance=float(dist.min()))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4441]))
    chosen = systematic_resample(weights, k, rng)
    sel_lat = latents[:, chosen, :]
    sel_dec = decoded[:, chosen, :]
    spread = sel_dec.std(axis=1, ddof=0)
    hop = _hop_from_spread(grid, spread, fraction, config.theta_hop)
    risk_points, crossing = _ensemble_risk(series, params, sel_lat, grid,
                                           config.risk_threshold, config)
    return TrajectoryEnsemble(
        grid=grid, observed_end=fraction, fraction=fraction,
        feature_names=list(params.feature_names), decoded=sel_dec, latents=sel_lat,
        noises=noises[chosen], spread=spread, hop=hop, risk_points=risk_points,
        risk_first_crossing=crossing, risk_threshold=config.risk_threshold,
        seed=seed, dropped=dropped,
        extra={
            "conditioned_on": {"time": point.time, "feature": point.feature,
                               "value": point.value, "tolerance": point.tolerance},
            "proposals": m,
            "support": support,
            "best_distance": float(dist.min()),
            "mean_proposal_distance": float(dist.mean()),
            # Kernel-weighted mean distance of the family the weights define;
            # always <= the unweighted proposal mean (weights decrease in d).
            "weighted_mean_distance": float(np.sum(weights / support * dist)),
            "mean_selected_distance": float(dist[chosen].mean()),
        })


def reconstruct_past(z_at: Array, from_time: float, to_times: Array,
                     params: ModelParams, noise_channel: Array | None = None,
                     rtol: float = 1e-7, atol: float = 1e-9) -> LatentPath:
    """Run the same dynamics backwards from a latent state.

    ``to_times`` are earlier times in increasing order; the same noise
    channel that produced the forward trajectory must be supplied for an
    exact round trip (zeros otherwise).
    """
    z_at = np.asarray(z_at, dtype=np.float64)
    to_times = np.asarray(to_times, dtype=np.float64)
    if to_times.size == 0:
        raise ContractViolation("to_times must be nonempty")
    if np.any(to_times > from_time + 1e-15):
        raise ContractViolation("to_times must not exceed from_time")
    noise = np.zeros((1, params.arch.noise_dim)) if noise_channel is None \
        else np.atleast_2d(np.asarray(noise_channel, dtype=np.float64))
    from .model import MlpDynamics  # local import keeps module load acyclic
    dyn = MlpDynamics(params, noise, batch=1)
    if from_time - to_times.min() <= 1e-15:
        states = np.repeat(z_at[None, :], to_times.size, axis=0)
        return LatentPath(times=to_times.copy(), states=states)
    problem = OdeProblem(dyn, z_at, (from_time, float(to_times.min())), to_times[::-1])
    sol = dopri5_integrate(problem, rtol=rtol, atol=atol)
    return LatentPath(times=to_times.copy(), states=sol.states[::-1].copy())


def backward_paths(ensemble: TrajectoryEnsemble, params: ModelParams,
                   query_time: float, n_paths: int = 3, max_points: int = 16,
                   rtol: float = 1e-7, atol: float = 1e-9) -> list[dict]:
    """Decoded 'how did it get here' traces from member states at a time.

    Members are taken in ensemble order (for conditioned ensembles the
    resampling already concentrated them near the point).
    """
    grid = ensemble.grid
    t_idx = int(np.searchsorted(grid, query_time))
    if not np.isclose(grid[t_idx], query_time):
        raise ContractViolation("query_time must be a grid knot")
    earlier = grid[grid < query_time - 1e-15]
    if earlier.size == 0:
        return []
    stride = max(1, earlier.size // max_points)
    to_times = np.unique(np.append(earlier[::-1][::stride][::-1], earlier[-1]))
    out = []
    seen = set()
    for k in range(ensemble.k):
        key = ensemble.latents[t_idx, k, :].tobytes()
        if key in seen:
            continue
        seen.add(key)
        path = reconstruct_past(ensemble.latents[t_idx, k, :], query_time, to_times,
                                params, noise_channel=ensemble.noises[k],
                                rtol=rtol, atol=atol)
        decoded = _decode_states(path.states[:, None, :], params)[:, 0, :]
        out.append({"member": int(k),
                    "times": path.times.tolist(),
                    "values": decoded.tolist()})
        if len(out) >= n_paths:
            break
    return out


def ensemble_document(ensemble: TrajectoryEnsemble, params: ModelParams,
                      series_id: str | None = None) -> dict:
    """The wire object served to the UI: normalized and raw units together."""
    stats = params.norm_stats
    doc = {
        "schema": "odecast.ensemble/1",
        "series_id": series_id,
        "fraction": float(ensemble.fraction),
        "observed_end": float(ensemble.observed_end),
        "feature_names": list(ensemble.feature_names),
        "times": [float(x) for x in ensemble.grid],
        "members": [[[float(v) for v in row] for row in ensemble.decoded[:, k, :]]
                    for k in range(ensemble.k)],
        "spread": [[float(v) for v in row] for row in ensemble.spread],
        "hop": None if ensemble.hop is None else float(ensemble.hop),
        "risk_curve": [{"duration": float(d), "probability": float(p)}
                       for d, p in ensemble.risk_points],
        "risk_threshold": float(ensemble.risk_threshold),
        "risk_first_crossing": (None if ensemble.risk_first_crossing is None
                                else float(ensemble.risk_first_crossing)),
        "k": int(ensemble.k),
        "seed": int(ensemble.seed),
        "dropped": int(ensemble.dropped),
    }
    if ensemble.extra:
        doc["query"] = {key: val for key, val in ensemble.extra.items()}
    if stats is not None:
        mean, std = stats.mean, stats.std
        doc["raw"] = {
            "times": [float(x) for x in stats.to_raw_times(ensemble.grid)],
            "members": [[[float(v) for v in (row * std + mean)]
                         for row in ensemble.decoded[:, k, :]]
                        for k in range(ensemble.k)],
            "spread": [[float(v) for v in (row * std)] for row in ensemble.spread],
        }
        doc["norm_stats"] = stats.to_dict()
    return doc
