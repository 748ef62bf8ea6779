"""The latent ODE model.

Measurements are encoded backwards in time by a gated recurrent cell
into a variational posterior over the initial latent state z0. A sampled
z0 evolves under learned continuous dynamics dz/dt = f(z, eps), where
eps is a constant per-trajectory noise channel drawn once at t = 0. Any
latent state decodes to feature-space means, and a small classifier maps
the latent at the last observed time to an outcome probability.

Everything here is pure with respect to ModelParams: the same inputs
always produce the same outputs, so a parameter snapshot can serve many
threads at once.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DivergenceError, EmptyWindowError, ModelBlowUpError
from .ode import DifferentiableDynamics, OdeProblem, dopri5_integrate
from .series import IrregularSeries, NormStats
from .tensor import Tape, Tensor

Array = np.ndarray

LOGSTD_MIN = -10.0
LOGSTD_MAX = 3.0

# Default inference-time solver tolerances; training overrides via its config.
INFER_RTOL = 1e-7
INFER_ATOL = 1e-9


@dataclass
class Architecture:
    """Shape record that fully determines every weight array."""

    n_features: int
    latent_dim: int = 16
    encoder_hidden: int = 32
    dynamics_hidden: tuple[int, int] = (64, 64)
    decoder_hidden: int = 64
    classifier_hidden: int = 32
    noise_dim: int = 1

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "latent_dim": self.latent_dim,
            "encoder_hidden": self.encoder_hidden,
            "dynamics_hidden": list(self.dynamics_hidden),
            "decoder_hidden": self.decoder_hidden,
            "classifier_hidden": self.classifier_hidden,
            "noise_dim": self.noise_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(n_features=int(d["n_features"]),
                   latent_dim=int(d["latent_dim"]),
                   encoder_hidden=int(d["encoder_hidden"]),
                   dynamics_hidden=tuple(int(x) for x in d["dynamics_hidden"]),
                   decoder_hidden=int(d["decoder_hidden"]),
                   classifier_hidden=int(d["classifier_hidden"]),
                   noise_dim=int(d["noise_dim"]))

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        F, L, H = self.n_features, self.latent_dim, self.encoder_hidden
        D1, D2 = self.dynamics_hidden
        DH, CH, E = self.decoder_hidden, self.classifier_hidden, self.noise_dim
        enc_in = 2 * F + 1  # masked values ++ mask ++ time gap
        return {
            "enc_Wr": (enc_in, H), "enc_Ur": (H, H), "enc_br": (H,),
            "enc_Wu": (enc_in, H), "enc_Uu": (H, H), "enc_bu": (H,),
            "enc_Wc": (enc_in, H), "enc_Uc": (H, H), "enc_bc": (H,),
            "post_W": (H, 2 * L), "post_b": (2 * L,),
            "dyn_W0": (L + E, D1), "dyn_b0": (D1,),
            "dyn_W1": (D1, D2), "dyn_b1": (D2,),
            "dyn_W2": (D2, L), "dyn_b2": (L,),
            "dec_W0": (L, DH), "dec_b0": (DH,),
            "dec_W1": (DH, F), "dec_b1": (F,),
            "cls_W0": (L, CH), "cls_b0": (CH,),
            "cls_W1": (CH, 1), "cls_b1": (1,),
        }


DYNAMICS_KEYS = ("dyn_W0", "dyn_b0", "dyn_W1", "dyn_b1", "dyn_W2", "dyn_b2")


@dataclass
class LatentPosterior:
    """Diagonal Gaussian over the initial latent state."""

    mean: Array
    std: Array

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape:
            raise ContractViolation("posterior mean/std shapes differ")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.std))):
            raise ContractViolation("posterior must be finite")
        if np.any(self.std < 0):
            raise ContractViolation("posterior std must be non-negative")


@dataclass
class LatentPath:
    times: Array
    states: Array  # (T, latent_dim)


@dataclass
class Reconstruction:
    """Decoded feature means over a grid; the flag splits solid from dashed."""

    times: Array
    means: Array          # (T, n_features)
    observed_flag: Array  # (T,) bool; True inside the span fed to the encoder


@dataclass
class ModelParams:
    """Weights plus everything needed to reuse them: architecture record,
    per-feature observation noise, and the training normalization stats."""

    arch: Architecture
    weights: dict[str, Array]
    obs_noise: Array
    feature_names: list[str]
    norm_stats: NormStats | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.arch.weight_shapes()
        missing = sorted(set(shapes) - set(self.weights))
        if missing:
            raise ContractViolation(f"weights missing: {', '.join(missing)}")
        for name, shape in shapes.items():
            w = np.asarray(self.weights[name], dtype=np.float64)
            if w.shape != shape:
                raise ContractViolation(f"weight {name} has shape {w.shape}, expected {shape}")
            self.weights[name] = w
        self.obs_noise = np.asarray(self.obs_noise, dtype=np.float64)
        if self.obs_noise.shape != (self.arch.n_features,):
            raise ContractViolation("obs_noise must be one entry per feature")
        if np.any(self.obs_noise <= 0):
            raise ContractViolation("obs_noise must be positive")

    def clone(self) -> "ModelParams":
        return ModelParams(arch=self.arch,
                           weights={k: v.copy() for k, v in self.weights.items()},
                           obs_noise=self.obs_noise.copy(),
                           feature_names=list(self.feature_names),
                           norm_stats=copy.deepcopy(self.norm_stats),
                           meta=dict(self.meta))


def init_params(arch: Architecture, feature_names: list[str], seed: int = 0,
                obs_noise: float | Array = 0.3,
                norm_stats: NormStats | None = None) -> ModelParams:
    """Glorot-uniform initialization (full scale on the dynamics output:
    weak initial dynamics measurably slow latent-rotation learning)."""
    if len(feature_names) != arch.n_features:
        raise ContractViolation("feature_names length must match architecture")
    rng = np.random.default_rng(seed)
    weights: dict[str, Array] = {}
    for name, shape in arch.weight_shapes().items():
        if len(shape) == 1:
            weights[name] = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            weights[name] = rng.uniform(-limit, limit, size=shape)
    noise = np.full(arch.n_features, float(obs_noise)) if np.isscalar(obs_noise) \
        else np.asarray(obs_noise, dtype=np.float64)
    return ModelParams(arch=arch, weights=weights, obs_noise=noise,
                       feature_names=list(feature_names), norm_stats=norm_stats)


def params_to_tensors(tape: Tape, params: ModelParams,
                      trainable: bool = False) -> dict[str, Tensor]:
    return {name: tape.tensor(w, requires_grad=trainable)
            for name, w in params.weights.items()}


# ---------------------------------------------------------------------------
# Tape builders (shared by inference and training; recording only happens
# when the parameter tensors require gradients).
# ---------------------------------------------------------------------------

def _linear(tape: Tape, x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return tape.add(tape.matmul(x, W), b)


def gru_encode_batch(tape: Tape, pt: dict[str, Tensor], arch: Architecture,
                     rows: list[tuple[Array, Array, Array]]) -> tuple[Tensor, Tensor, Tensor]:
    """Run the backwards-in-time encoder over a padded batch.

    ``rows`` holds per-sample (times, values, mask) already restricted to
    the window fraction fed to the encoder. Returns (mean, logstd_clamped,
    std) tensors of shape (B, latent_dim). Sequences are consumed newest
    first; padded steps leave the hidden state untouched.
    """
    B = len(rows)
    F, H, L = arch.n_features, arch.encoder_hidden, arch.latent_dim
    steps = max(r[0].size for r in rows)
    h = tape.constant(np.zeros((B, H)))
    one = tape.constant(np.ones((B, H)))

    for j in range(steps):
        x_step = np.zeros((B, 2 * F + 1))
        valid = np.zeros((B, 1))
        for s, (t, v, m) in enumerate(rows):
            k = t.size - 1 - j  # newest-to-oldest
            if k < 0:
                continue
            valid[s, 0] = 1.0
            x_step[s, :F] = v[k] * m[k]
            x_step[s, F:2 * F] = m[k]
            x_step[s, 2 * F] = (t[k + 1] - t[k]) if k + 1 < t.size else 0.0
        x = tape.constant(x_step)
        r = tape.sigmoid(tape.add(_linear(tape, x, pt["enc_Wr"], pt["enc_br"]),
                                  tape.matmul(h, pt["enc_Ur"])))
        u = tape.sigmoid(tape.add(_linear(tape, x, pt["enc_Wu"], pt["enc_bu"]),
                                  tape.matmul(h, pt["enc_Uu"])))
        c = tape.tanh(tape.add(_linear(tape, x, pt["enc_Wc"], pt["enc_bc"]),
                               tape.matmul(tape.mul(r, h), pt["enc_Uc"])))
        h_new = tape.add(tape.mul(u, h),
                         tape.mul(tape.add(one, tape.scale(u, -1.0)), c))
        if np.all(valid == 1.0):
            h = h_new
        else:
            vmask = tape.constant(np.broadcast_to(valid, (B, H)).copy())
            keep = tape.constant(np.broadcast_to(1.0 - valid, (B, H)).copy())
            h = tape.add(tape.mul(vmask, h_new), tape.mul(keep, h))

    head = _linear(tape, h, pt["post_W"], pt["post_b"])
    mean = tape.slice(head, (slice(None), slice(0, L)))
    logstd = tape.clip(tape.slice(head, (slice(None), slice(L, 2 * L))),
                       LOGSTD_MIN, LOGSTD_MAX)
    std = tape.exp(logstd)
    return mean, logstd, std


def dynamics_build(tape: Tape, pt: dict[str, Tensor], z: Tensor, eps: Tensor) -> Tensor:
    """dz/dt for a (B, L) latent batch with a (B, E) constant noise channel."""
    inp = tape.concat([z, eps], axis=1)
    h1 = tape.tanh(_linear(tape, inp, pt["dyn_W0"], pt["dyn_b0"]))
    h2 = tape.tanh(_linear(tape, h1, pt["dyn_W1"], pt["dyn_b1"]))
    return _linear(tape, h2, pt["dyn_W2"], pt["dyn_b2"])


def decode_build(tape: Tape, pt: dict[str, Tensor], z: Tensor) -> Tensor:
    h = tape.tanh(_linear(tape, z, pt["dec_W0"], pt["dec_b0"]))
    return _linear(tape, h, pt["dec_W1"], pt["dec_b1"])


def classify_build(tape: Tape, pt: dict[str, Tensor], z: Tensor) -> Tensor:
    """Outcome logits for a (B, L) latent batch (sigmoid applied by callers)."""
    h = tape.tanh(_linear(tape, z, pt["cls_W0"], pt["cls_b0"]))
    return _linear(tape, h, pt["cls_W1"], pt["cls_b1"])


class MlpDynamics(DifferentiableDynamics):
    """Batched latent dynamics as a flat-state ODE right-hand side.

    The ODE state is the row-major flattening of a (B, L) latent block;
    the per-trajectory noise rows (B, E) are fixed at construction. The
    analytic ``vjp`` is the hot path of the adjoint solve and is verified
    against the tape route in the test suite.
    """

    def __init__(self, params: ModelParams, noise: Array, batch: int = 1,
                 weight_override: dict[str, Array] | None = None):
        w = weight_override if weight_override is not None else params.weights
        self.params = {k: np.asarray(w[k], dtype=np.float64) for k in DYNAMICS_KEYS}
        self.arch = params.arch
        self.batch = batch
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != (batch, params.arch.noise_dim):
            raise ContractViolation(f"noise must have shape ({batch}, {params.arch.noise_dim})")
        self.noise = noise

    def _blocks(self, y: Array) -> Array:
        return y.reshape(self.batch, self.arch.latent_dim)

    def __call__(self, t: float, y: Array) -> Array:
        z = self._blocks(y)
        p = self.params
        inp = np.concatenate([z, self.noise], axis=1)
        h1 = np.tanh(inp @ p["dyn_W0"] + p["dyn_b0"])
        h2 = np.tanh(h1 @ p["dyn_W1"] + p["dyn_b1"])
        return (h2 @ p["dyn_W2"] + p["dyn_b2"]).ravel()

    def build(self, tape: Tape, t: float, y: Tensor, pt: dict[str, Tensor]) -> Tensor:
        z = tape.reshape(y, (self.batch, self.arch.latent_dim))
        eps = tape.constant(self.noise)
        out = dynamics_build(tape, pt, z, eps)
        return tape.reshape(out, (y.data.size,))

    def vjp(self, t: float, y: Array, a: Array) -> tuple[Array, Array, dict[str, Array]]:
        z = self._blocks(y)
        ab = self._blocks(a)
        p = self.params
        inp = np.concatenate([z, self.noise], axis=1)
        h1 = np.tanh(inp @ p["dyn_W0"] + p["dyn_b0"])
        h2 = np.tanh(h1 @ p["dyn_W1"] + p["dyn_b1"])
        out = h2 @ p["dyn_W2"] + p["dyn_b2"]

        d2 = (ab @ p["dyn_W2"].T) * (1.0 - h2 * h2)
        d1 = (d2 @ p["dyn_W1"].T) * (1.0 - h1 * h1)
        d_in = d1 @ p["dyn_W0"].T
        grads = {
            "dyn_W2": h2.T @ ab, "dyn_b2": ab.sum(axis=0),
            "dyn_W1": h1.T @ d2, "dyn_b1": d2.sum(axis=0),
            "dyn_W0": inp.T @ d1, "dyn_b0": d1.sum(axis=0),
        }
        return out.ravel(), d_in[:, :self.arch.latent_dim].ravel(), grads


# ---------------------------------------------------------------------------
# Public single-series operations
# ---------------------------------------------------------------------------

def select_fraction(series: IrregularSeries, fraction: float) -> tuple[Array, Array, Array]:
    """Observation rows inside the first ``fraction`` of the window."""
    if not 0.0 < fraction <= 1.0:
        raise ContractViolation(f"fraction must be in (0, 1], got {fraction}")
    keep = series.times <= fraction + 1e-12
    t, v, m = series.times[keep], series.values[keep], series.mask[keep]
    if t.size == 0 or m.sum() < 1:
        raise EmptyWindowError(f"no observations within the first {fraction:g} of the window")
    return t, v, m


def encode(series: IrregularSeries, params: ModelParams,
           fraction: float = 1.0) -> LatentPosterior:
    """Variational posterior over z0 from the series prefix; deterministic."""
    rows = [select_fraction(series, fraction)]
    tape = Tape()
    pt = params_to_tensors(tape, params, trainable=False)
    mean, _, std = gru_encode_batch(tape, pt, params.arch, rows)
    return LatentPosterior(mean=mean.data[0], std=std.data[0])


def sample_z0(posterior: LatentPosterior, seed: int) -> Array:
    """Reparameterized draw: mean + std * standard normal, seeded."""
    rng = np.random.default_rng(seed)
    return posterior.mean + posterior.std * rng.standard_normal(posterior.mean.size)


def sample_noise_channel(arch: Architecture, seed: int) -> Array:
    rng = np.random.default_rng(seed)
    return rng.standard_normal(arch.noise_dim)


def evolve_batch(z0: Array, noise: Array, times: Array, params: ModelParams,
                 rtol: float = INFER_RTOL, atol: float = INFER_ATOL,
                 max_steps: int = 20_000) -> Array:
    """Integrate a (B, L) block of latent states over a shared grid.

    Returns states of shape (T, B, L). Solver divergence surfaces as
    ModelBlowUpError, which is diagnostic: the learned dynamics exploded.
    A healthy trained model needs a few hundred steps; the step budget
    exists so pathological dynamics fail fast instead of grinding.
    """
    z0 = np.atleast_2d(np.asarray(z0, dtype=np.float64))
    noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    times = np.asarray(times, dtype=np.float64)
    B, L = z0.shape
    if times.size == 0:
        raise ContractViolation("times must be nonempty")
    if np.any(np.diff(times) <= 0) and times.size > 1:
        raise ContractViolation("times must be strictly increasing")
    if times[0] < 0:
        raise ContractViolation("times must start at or after 0")
    dyn = MlpDynamics(params, noise, batch=B)
    t_end = float(times[-1])
    if t_end == 0.0:
        return np.repeat(z0[None, :, :], times.size, axis=0)
    problem = OdeProblem(dyn, z0.ravel(), (0.0, t_end), times)
    try:
        sol = dopri5_integrate(problem, rtol=rtol, atol=atol, max_steps=max_steps)
    except DivergenceError as exc:
        raise ModelBlowUpError(f"latent dynamics diverged at t={exc.time:.4f}",
                               time=exc.time) from exc
    return sol.states.reshape(times.size, B, L)


def evolve(z0: Array, noise_channel: Array, times: Array, params: ModelParams,
           rtol: float = INFER_RTOL, atol: float = INFER_ATOL) -> LatentPath:
    """Evolve one latent state along a grid (grids may extend far past the
    observed window; the trajectory depends only on z0 and the noise draw)."""
    states = evolve_batch(z0[None, :], np.atleast_2d(noise_channel), times, params,
                          rtol=rtol, atol=atol)
    return LatentPath(times=np.asarray(times, dtype=np.float64), states=states[:, 0, :])


def decode(path: LatentPath, params: ModelParams, observed_end: float) -> Reconstruction:
    """Decode a latent path to feature means and split solid from dashed."""
    tape = Tape()
    pt = params_to_tensors(tape, params, trainable=False)
    means = decode_build(tape, pt, tape.constant(path.states)).data
    return Reconstruction(times=path.times.copy(), means=means,
                          observed_flag=path.times <= observed_end + 1e-12)


def classify(path: LatentPath, params: ModelParams) -> float:
    """Outcome probability from the final state of the supplied path.

    Callers pass a path ending at the last observed time; extrapolated
    latents feed the trajectory engine instead.
    """
    if path.states.size == 0:
        raise ContractViolation("classify requires a nonempty path")
    tape = Tape()
    pt = params_to_tensors(tape, params, trainable=False)
    logit = classify_build(tape, pt, tape.constant(path.states[-1][None, :]))
    return float(tape.sigmoid(logit).data[0, 0])
