"""First-order ODE integration with dense output and adjoint gradients.

Two integrators cover the package's needs: a fixed-step classical
Runge-Kutta 4 used as a reference and as the unrolled path for
discretize-then-differentiate cross-checks, and an embedded
Dormand-Prince 5(4) pair with PI step-size control and the standard
4th-order continuous extension for evaluation between steps.

``adjoint_gradients`` propagates a loss gradient through a solution by
integrating the augmented system (state, costate, parameter gradient)
backwards in time, injecting the per-time loss cotangents as impulses.
Both integrators accept reversed time spans, which is also how past
trajectories are reconstructed from a later latent state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ContractViolation, DivergenceError, StiffnessError
from .tensor import Tape, Tensor

Array = np.ndarray
Dynamics = Callable[[float, Array], Array]

# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4
# Coefficients of the 4th-order continuous extension (dense output).
_D = np.array([
    -12715105075 / 11282082432, 0.0, 87487479700 / 32700410799,
    -10690763975 / 1880347072, 701980252875 / 199316789632,
    -1453857185 / 822651844, 69997945 / 29380423,
])

_MIN_STEP_FRACTION = 1e-12  # of the span; below this the problem is declared stiff


@dataclass
class SolverStats:
    accepted: int = 0
    rejected: int = 0
    nfev: int = 0

    def merge(self, other: "SolverStats") -> None:
        self.accepted += other.accepted
        self.rejected += other.rejected
        self.nfev += other.nfev


@dataclass
class OdeProblem:
    """dy/dt = dynamics(t, y) over t_span, with solution requested at eval_times."""

    dynamics: Dynamics
    y0: Array
    t_span: tuple[float, float]
    eval_times: Array

    def __post_init__(self):
        self.y0 = np.asarray(self.y0, dtype=np.float64)
        self.eval_times = np.asarray(self.eval_times, dtype=np.float64)
        if self.y0.ndim != 1:
            raise ContractViolation("y0 must be a flat state vector")
        if not np.all(np.isfinite(self.y0)):
            raise ContractViolation("y0 must be finite")
        t0, t1 = float(self.t_span[0]), float(self.t_span[1])
        if t0 == t1 and self.eval_times.size and not np.all(self.eval_times == t0):
            raise ContractViolation("degenerate span cannot cover distinct eval times")
        direction = 1.0 if t1 >= t0 else -1.0
        ts = self.eval_times * direction
        if ts.size and np.any(np.diff(ts) < 0):
            raise ContractViolation("eval_times must be sorted in the direction of integration")
        lo, hi = min(t0, t1), max(t0, t1)
        if self.eval_times.size and (self.eval_times.min() < lo - 1e-12 or
                                     self.eval_times.max() > hi + 1e-12):
            raise ContractViolation("eval_times must lie within t_span")

    @property
    def direction(self) -> float:
        return 1.0 if self.t_span[1] >= self.t_span[0] else -1.0


@dataclass
class OdeSolution:
    times: Array
    states: Array  # (len(times), dim)
    stats: SolverStats = field(default_factory=SolverStats)


def _eval_dynamics(f: Dynamics, t: float, y: Array, dim: int) -> Array:
    dy = np.asarray(f(t, y), dtype=np.float64)
    if dy.shape != (dim,):
        raise ContractViolation(f"dynamics returned shape {dy.shape}, state has dim {dim}")
    return dy


def rk4_integrate(problem: OdeProblem, step: float) -> OdeSolution:
    """Classical 4th-order Runge-Kutta, landing exactly on every eval time.

    The nominal step is ``step``; the final substep before each eval time
    is shortened so outputs are computed at the requested times, not
    interpolated.
    """
    if step <= 0:
        raise ContractViolation("step must be positive")
    f = problem.dynamics
    dim = problem.y0.size
    t = float(problem.t_span[0])
    y = problem.y0.copy()
    direction = problem.direction
    stats = SolverStats()
    out = np.empty((problem.eval_times.size, dim))

    def advance(t: float, y: Array, h: float) -> Array:
        k1 = _eval_dynamics(f, t, y, dim)
        k2 = _eval_dynamics(f, t + h / 2, y + (h / 2) * k1, dim)
        k3 = _eval_dynamics(f, t + h / 2, y + (h / 2) * k2, dim)
        k4 = _eval_dynamics(f, t + h, y + h * k3, dim)
        stats.nfev += 4
        stats.accepted += 1
        return y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)

    for i, target in enumerate(problem.eval_times):
        while (target - t) * direction > 1e-15:
            h = direction * min(step, abs(target - t))
            y = advance(t, y, h)
            t = t + h
            if not np.all(np.isfinite(y)):
                raise DivergenceError(f"state became non-finite at t={t}", time=t)
        out[i] = y
    return OdeSolution(times=problem.eval_times.copy(), states=out, stats=stats)


def _error_norm(err: Array, y0: Array, y1: Array, rtol: float, atol: float) -> float:
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(f, t0, y0, f0, direction, rtol, atol, span, stats) -> float:
    """Hairer-style starting step estimate (two extra dynamics evaluations)."""
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + h0 * direction * f0
    f1 = np.asarray(f(t0 + h0 * direction, y1), dtype=np.float64)
    stats.nfev += 1
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def dopri5_integrate(problem: OdeProblem, rtol: float = 1e-6, atol: float = 1e-8,
                     max_steps: int = 500_000, first_step: float | None = None) -> OdeSolution:
    """Embedded Dormand-Prince 5(4) with PI control and dense output.

    Per-step error is held below atol + rtol * |y| in RMS norm. Requested
    eval times are filled from the 4th-order continuous extension of each
    accepted step. Step underflow (below 1e-12 of the span) raises
    StiffnessError; a non-finite state raises DivergenceError.
    """
    if rtol <= 0 or atol <= 0:
        raise ContractViolation("rtol and atol must be positive")
    f = problem.dynamics
    dim = problem.y0.size
    t0, t1 = float(problem.t_span[0]), float(problem.t_span[1])
    direction = problem.direction
    span = abs(t1 - t0)
    stats = SolverStats()
    eval_times = problem.eval_times
    out = np.empty((eval_times.size, dim))
    next_eval = 0

    # Leading evals that coincide with t0 need no integration.
    while next_eval < eval_times.size and abs(eval_times[next_eval] - t0) <= 1e-15 * max(1.0, abs(t0)):
        out[next_eval] = problem.y0
        next_eval += 1

    if next_eval == eval_times.size or span == 0.0:
        return OdeSolution(times=eval_times.copy(), states=out, stats=stats)

    t = t0
    y = problem.y0.copy()
    k = np.empty((7, dim))
    k[0] = _eval_dynamics(f, t, y, dim)
    stats.nfev += 1
    if first_step is not None and first_step > 0:
        h = min(float(first_step), span)
    else:
        h = _initial_step(f, t, y, k[0], direction, rtol, atol, span, stats)
    err_prev = 1.0
    min_step = span * _MIN_STEP_FRACTION

    while next_eval < eval_times.size:
        if stats.accepted + stats.rejected >= max_steps:
            raise StiffnessError(f"exceeded {max_steps} steps at t={t}", time=t)
        if h < min_step:
            raise StiffnessError(f"step size underflow ({h:.3e}) at t={t}", time=t)
        remaining = abs(t1 - t)
        h = min(h, remaining)
        hs = h * direction

        for i in range(1, 7):
            yi = y + hs * (k[:i].T @ _A[i])
            k[i] = _eval_dynamics(f, t + _C[i] * hs, yi, dim)
        stats.nfev += 6
        y_new = y + hs * (k.T @ _B5)
        if not np.all(np.isfinite(y_new)):
            raise DivergenceError(f"state became non-finite at t={t + hs}", time=t + hs)
        err = _error_norm(hs * (k.T @ _E), y, y_new, rtol, atol)

        if err <= 1.0:
            t_new = t + hs
            # Dense output over [t, t_new] for every pending eval time inside.
            if next_eval < eval_times.size:
                ydiff = y_new - y
                bspl = hs * k[0] - ydiff
                r = (y, ydiff, bspl, ydiff - hs * k[6] - bspl, hs * (k.T @ _D))
                while next_eval < eval_times.size and \
                        (eval_times[next_eval] - t_new) * direction <= 1e-15 * max(1.0, abs(t_new)):
                    theta = (eval_times[next_eval] - t) / hs
                    out[next_eval] = (r[0] + theta * (r[1] + (1 - theta) *
                                      (r[2] + theta * (r[3] + (1 - theta) * r[4]))))
                    next_eval += 1
            stats.accepted += 1
            t, y = t_new, y_new
            if (t1 - t) * direction <= 1e-15 * max(1.0, abs(t1)):
                break
            k[0] = k[6].copy()  # FSAL: stage 7 equals the next step's first stage
            factor = 0.9 * err ** -0.17 * err_prev ** 0.04 if err > 0 else 10.0
            err_prev = max(err, 1e-4)
            h = h * min(10.0, max(0.2, factor))
        else:
            stats.rejected += 1
            factor = 0.9 * err ** -0.2
            h = h * min(1.0, max(0.2, factor))

    if next_eval < eval_times.size:
        # Span exhausted with pending evals at t1 itself (within tolerance).
        while next_eval < eval_times.size:
            out[next_eval] = y
            next_eval += 1
    return OdeSolution(times=eval_times.copy(), states=out, stats=stats)


def _segment_final_state(f, y0: Array, t0: float, t1: float, rtol: float, atol: float,
                         h0: float | None) -> tuple[Array, float]:
    """Low-overhead Dormand-Prince solve of one short span, final state only.

    Used by the adjoint walk, which restarts at every impulse time; shares
    the tableau with dopri5_integrate but skips problem construction,
    dense output, and stats. Returns (y(t1), step-size hint).
    """
    direction = 1.0 if t1 >= t0 else -1.0
    span = abs(t1 - t0)
    t, y = t0, y0
    k = np.empty((7, y0.size))
    k[0] = f(t, y)
    h = min(h0, span) if h0 else span
    err_prev = 1.0
    min_step = span * _MIN_STEP_FRACTION
    steps = 0
    while True:
        if h < min_step:
            raise StiffnessError(f"step size underflow ({h:.3e}) at t={t}", time=t)
        if steps > 10_000:
            raise StiffnessError(f"adjoint segment exceeded step budget at t={t}", time=t)
        steps += 1
        h = min(h, abs(t1 - t))
        hs = h * direction
        for i in range(1, 7):
            k[i] = f(t + _C[i] * hs, y + hs * (k[:i].T @ _A[i]))
        y_new = y + hs * (k.T @ _B5)
        if not np.all(np.isfinite(y_new)):
            raise DivergenceError(f"state became non-finite at t={t + hs}", time=t + hs)
        err = _error_norm(hs * (k.T @ _E), y, y_new, rtol, atol)
        if err <= 1.0:
            t, y = t + hs, y_new
            if (t1 - t) * direction <= 1e-15 * max(1.0, abs(t1)):
                return y, h
            k[0] = k[6].copy()
            factor = 0.9 * err ** -0.17 * err_prev ** 0.04 if err > 0 else 10.0
            err_prev = max(err, 1e-4)
            h = h * min(10.0, max(0.2, factor))
        else:
            h = h * min(1.0, max(0.2, 0.9 * err ** -0.2))


class DifferentiableDynamics:
    """Dynamics with parameters and a vector-Jacobian product.

    The default ``vjp`` records one evaluation on a fresh autodiff tape
    and runs it backwards; subclasses may provide an analytic override,
    which must agree with the tape route (unit-tested where used).
    """

    params: Mapping[str, Array] = {}

    def __call__(self, t: float, y: Array) -> Array:
        raise NotImplementedError

    def build(self, tape: Tape, t: float, y: Tensor,
              params: Mapping[str, Tensor]) -> Tensor:
        """Record one dynamics evaluation on ``tape`` using tensor params."""
        raise NotImplementedError

    def vjp(self, t: float, y: Array, a: Array) -> tuple[Array, Array, dict[str, Array]]:
        """Return f(t, y), aᵀ∂f/∂y and aᵀ∂f/∂p via the autodiff tape."""
        tape = Tape()
        yt = tape.tensor(y, requires_grad=True)
        pt = {name: tape.tensor(val, requires_grad=True) for name, val in self.params.items()}
        out = self.build(tape, t, yt, pt)
        grads = tape.backward_seeded([(out, a)])
        return out.data, grads[yt], {name: grads[pt[name]] for name in pt}


def adjoint_gradients(problem: OdeProblem, loss_grads: Array,
                      rtol: float = 1e-6, atol: float = 1e-8) -> tuple[Array, dict[str, Array]]:
    """Loss gradients through an ODE solution via backward adjoint integration.

    ``loss_grads`` holds dL/dy(t_i) for each of problem.eval_times. The
    augmented state (y, a, lambda) runs from t_end back to t_start with the
    costate a picking up each loss cotangent as an impulse at its time;
    returns (dL/dy0, dL/dparams). problem.dynamics must be a
    DifferentiableDynamics.
    """
    dyn = problem.dynamics
    if not isinstance(dyn, DifferentiableDynamics):
        raise ContractViolation("adjoint_gradients requires DifferentiableDynamics")
    dim = problem.y0.size
    loss_grads = np.asarray(loss_grads, dtype=np.float64)
    if loss_grads.shape != (problem.eval_times.size, dim):
        raise ContractViolation(
            f"loss_grads shape {loss_grads.shape} != ({problem.eval_times.size}, {dim})")

    pnames = list(dyn.params.keys())
    psizes = [dyn.params[n].size for n in pnames]
    pshapes = [dyn.params[n].shape for n in pnames]
    ptotal = int(np.sum(psizes)) if psizes else 0
    t0, t1 = float(problem.t_span[0]), float(problem.t_span[1])

    if np.all(loss_grads == 0.0):
        return np.zeros(dim), {n: np.zeros(s) for n, s in zip(pnames, pshapes)}

    # Forward solve to the end of the span (memory-free adjoint re-solves y backwards).
    fwd = dopri5_integrate(OdeProblem(dyn, problem.y0, (t0, t1), np.array([t1])),
                           rtol=rtol, atol=atol)
    y_end = fwd.states[-1]

    def aug_rhs(t: float, s: Array) -> Array:
        y = s[:dim]
        a = s[dim:2 * dim]
        f, a_dfdy, a_dfdp = dyn.vjp(t, y, a)
        dp = np.concatenate([a_dfdp[n].ravel() for n in pnames]) if pnames else np.empty(0)
        return np.concatenate([f, -a_dfdy, -dp])

    state = np.concatenate([y_end, np.zeros(dim), np.zeros(ptotal)])
    # Walk eval times from latest to earliest, injecting impulses, then to t_start.
    times = problem.eval_times
    cur_t = t1
    h_hint: float | None = None

    def run_back(to_t: float) -> None:
        nonlocal state, cur_t, h_hint
        state, h_used = _segment_final_state(aug_rhs, state, cur_t, to_t,
                                             rtol, atol, h_hint)
        h_hint = 1.5 * h_used  # seed the next restart with this segment's scale
        cur_t = to_t

    for i in range(times.size - 1, -1, -1):
        if times[i] != cur_t:
            run_back(float(times[i]))
        state[dim:2 * dim] += loss_grads[i]
    if cur_t != t0:
        run_back(t0)

    grad_y0 = state[dim:2 * dim].copy()
    grads: dict[str, Array] = {}
    offset = 2 * dim
    for n, size, shape in zip(pnames, psizes, pshapes):
        grads[n] = state[offset:offset + size].reshape(shape).copy()
        offset += size
    return grad_y0, grads
