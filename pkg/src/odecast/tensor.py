"""Reverse-mode automatic differentiation over small dense computations.

A ``Tape`` records primitive operations (matrix products, elementwise
nonlinearities, reductions) as they execute on 64-bit numpy arrays, then
replays local gradient rules in reverse to accumulate exact derivatives
for every requires-grad leaf. The primitive set is deliberately small and
every rule is covered by a finite-difference test; new primitives must
ship with both.

Tensors are immutable after creation. A tape is single-threaded while
recording; gradients for a leaf used several times accumulate by
summation (multivariate chain rule).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractViolation, NumericDomainError

Array = np.ndarray

_SLICE_KINDS = (int, slice, type(Ellipsis), type(None))


def _as_f64(data) -> Array:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """Immutable dense array plus a requires-grad flag.

    ``shape`` and row-major ``data`` are exposed through the underlying
    numpy array; values are validated finite at leaf construction.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, _validate: bool = True):
        arr = _as_f64(data)
        if _validate:
            if not np.all(np.isfinite(arr)):
                raise NumericDomainError("tensor input contains NaN or Inf")
            if arr is data or arr.base is not None:
                arr = arr.copy()  # never freeze or alias a caller-owned buffer
        elif arr.base is not None:
            arr = arr.copy()
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    """One recorded primitive: output, inputs, local vjp, and a replay rule."""

    __slots__ = ("op", "out", "inputs", "vjp", "replay")

    def __init__(self, op: str, out: Tensor, inputs: tuple[Tensor, ...],
                 vjp: Callable[[Array], tuple[Array | None, ...]],
                 replay: Callable[[], Array]):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.vjp = vjp
        self.replay = replay


class Gradients:
    """Mapping from leaf tensors to their gradient arrays.

    Leaves that never influenced the seeded outputs read as zeros.
    """

    def __init__(self, store: dict[int, Array], leaves: dict[int, Tensor]):
        self._store = store
        self._leaves = leaves

    def __getitem__(self, leaf: Tensor) -> Array:
        g = self._store.get(id(leaf))
        if g is None:
            return np.zeros(leaf.shape)
        return g

    def get(self, leaf: Tensor) -> Array:
        return self[leaf]


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Ordered record of primitives; supports reverse accumulation and replay."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaves: dict[int, Tensor] = {}

    # -- construction ---------------------------------------------------

    def tensor(self, data, requires_grad: bool = False) -> Tensor:
        t = Tensor(data, requires_grad=requires_grad)
        if requires_grad:
            self._leaves[id(t)] = t
        return t

    def constant(self, data) -> Tensor:
        return Tensor(data, requires_grad=False)

    @property
    def nodes(self) -> list[_Node]:
        return self._nodes

    @property
    def leaves(self) -> list[Tensor]:
        return list(self._leaves.values())

    def _record(self, op: str, out_data: Array, inputs: tuple[Tensor, ...],
                vjp, replay) -> Tensor:
        track = any(t.requires_grad for t in inputs)
        out = Tensor(out_data, requires_grad=track, _validate=False)
        if track:
            self._nodes.append(_Node(op, out, inputs, vjp, replay))
        return out

    # -- primitives -----------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        ad, bd = a.data, b.data
        if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
            raise ContractViolation(f"matmul supports 1-D/2-D operands, got {ad.shape} @ {bd.shape}")
        if ad.shape[-1] != (bd.shape[0] if bd.ndim >= 1 else None):
            raise ContractViolation(f"matmul inner dimensions differ: {ad.shape} @ {bd.shape}")
        out = ad @ bd

        def vjp(g: Array):
            ga = gb = None
            if a.requires_grad:
                if ad.ndim == 2 and bd.ndim == 2:
                    ga = g @ bd.T
                elif ad.ndim == 2 and bd.ndim == 1:
                    ga = np.outer(g, bd)
                elif ad.ndim == 1 and bd.ndim == 2:
                    ga = bd @ g
                else:  # 1-D @ 1-D
                    ga = g * bd
            if b.requires_grad:
                if ad.ndim == 2 and bd.ndim == 2:
                    gb = ad.T @ g
                elif ad.ndim == 2 and bd.ndim == 1:
                    gb = ad.T @ g
                elif ad.ndim == 1 and bd.ndim == 2:
                    gb = np.outer(ad, g)
                else:
                    gb = g * ad
            return ga, gb

        return self._record("matmul", out, (a, b), vjp, lambda: a.data @ b.data)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        try:
            out = a.data + b.data
        except ValueError as exc:
            raise ContractViolation(f"add shapes do not broadcast: {a.shape} + {b.shape}") from exc

        def vjp(g: Array):
            ga = _unbroadcast(g, a.shape) if a.requires_grad else None
            gb = _unbroadcast(g, b.shape) if b.requires_grad else None
            return ga, gb

        return self._record("add", out, (a, b), vjp, lambda: a.data + b.data)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise (Hadamard) product with matrix/vector/scalar broadcasting."""
        try:
            out = a.data * b.data
        except ValueError as exc:
            raise ContractViolation(f"mul shapes do not broadcast: {a.shape} * {b.shape}") from exc

        def vjp(g: Array):
            ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
            gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
            return ga, gb

        return self._record("mul", out, (a, b), vjp, lambda: a.data * b.data)

    def scale(self, a: Tensor, c: float) -> Tensor:
        c = float(c)
        if not np.isfinite(c):
            raise NumericDomainError("scale factor must be finite")
        out = a.data * c

        def vjp(g: Array):
            return (g * c if a.requires_grad else None,)

        return self._record("scale", out, (a,), vjp, lambda: a.data * c)

    def tanh(self, a: Tensor) -> Tensor:
        out = np.tanh(a.data)

        def vjp(g: Array):
            return (g * (1.0 - out * out) if a.requires_grad else None,)

        return self._record("tanh", out, (a,), vjp, lambda: np.tanh(a.data))

    def sigmoid(self, a: Tensor) -> Tensor:
        # 1 / (1 + exp(-x)), computed stably on both tails.
        out = np.where(a.data >= 0,
                       1.0 / (1.0 + np.exp(-np.abs(a.data))),
                       np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

        def vjp(g: Array):
            return (g * out * (1.0 - out) if a.requires_grad else None,)

        def replay():
            x = a.data
            return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                            np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

        return self._record("sigmoid", out, (a,), vjp, replay)

    def softplus(self, a: Tensor) -> Tensor:
        out = np.logaddexp(0.0, a.data)
        sig = None

        def vjp(g: Array):
            nonlocal sig
            if sig is None:
                x = a.data
                sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                               np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
            return (g * sig if a.requires_grad else None,)

        return self._record("softplus", out, (a,), vjp, lambda: np.logaddexp(0.0, a.data))

    def exp(self, a: Tensor) -> Tensor:
        out = np.exp(a.data)
        if not np.all(np.isfinite(out)):
            raise NumericDomainError("exp overflowed to Inf")

        def vjp(g: Array):
            return (g * out if a.requires_grad else None,)

        return self._record("exp", out, (a,), vjp, lambda: np.exp(a.data))

    def log(self, a: Tensor) -> Tensor:
        if np.any(a.data <= 0):
            raise NumericDomainError("log requires strictly positive input")
        out = np.log(a.data)

        def vjp(g: Array):
            return (g / a.data if a.requires_grad else None,)

        return self._record("log", out, (a,), vjp, lambda: np.log(a.data))

    def clip(self, a: Tensor, lo: float, hi: float) -> Tensor:
        """Clamp to [lo, hi]; gradient passes through strictly inside the range."""
        if not lo < hi:
            raise ContractViolation(f"clip requires lo < hi, got [{lo}, {hi}]")
        out = np.clip(a.data, lo, hi)

        def vjp(g: Array):
            if not a.requires_grad:
                return (None,)
            inside = (a.data > lo) & (a.data < hi)
            return (g * inside,)

        return self._record("clip", out, (a,), vjp, lambda: np.clip(a.data, lo, hi))

    def sum(self, a: Tensor) -> Tensor:
        out = np.asarray(a.data.sum())

        def vjp(g: Array):
            return (np.full(a.shape, float(g)) if a.requires_grad else None,)

        return self._record("sum", out, (a,), vjp, lambda: np.asarray(a.data.sum()))

    def mean(self, a: Tensor) -> Tensor:
        n = a.data.size
        if n == 0:
            raise ContractViolation("mean of an empty tensor")
        out = np.asarray(a.data.mean())

        def vjp(g: Array):
            return (np.full(a.shape, float(g) / n) if a.requires_grad else None,)

        return self._record("mean", out, (a,), vjp, lambda: np.asarray(a.data.mean()))

    def concat(self, parts: Sequence[Tensor], axis: int = 0) -> Tensor:
        if not parts:
            raise ContractViolation("concat of zero tensors")
        datas = [p.data for p in parts]
        try:
            out = np.concatenate(datas, axis=axis)
        except ValueError as exc:
            raise ContractViolation(f"concat shapes incompatible along axis {axis}") from exc
        sizes = [d.shape[axis] for d in datas]
        offsets = np.cumsum([0] + sizes)

        def vjp(g: Array):
            grads = []
            for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(start, stop)
                    grads.append(g[tuple(idx)])
                else:
                    grads.append(None)
            return tuple(grads)

        return self._record("concat", out, tuple(parts), vjp,
                            lambda: np.concatenate([p.data for p in parts], axis=axis))

    def reshape(self, a: Tensor, shape: tuple[int, ...]) -> Tensor:
        if int(np.prod(shape)) != a.data.size:
            raise ContractViolation(f"cannot reshape {a.shape} to {shape}")
        out = a.data.reshape(shape)

        def vjp(g: Array):
            return (g.reshape(a.shape) if a.requires_grad else None,)

        return self._record("reshape", out, (a,), vjp, lambda: a.data.reshape(shape))

    def slice(self, a: Tensor, key) -> Tensor:
        """Basic (contiguous) slicing; advanced integer-array indexing is rejected."""
        key_t = key if isinstance(key, tuple) else (key,)
        for k in key_t:
            if not isinstance(k, _SLICE_KINDS):
                raise ContractViolation(f"slice supports basic indexing only, got {type(k).__name__}")
        out = a.data[key]

        def vjp(g: Array):
            if not a.requires_grad:
                return (None,)
            full = np.zeros(a.shape)
            full[key] = g
            return (full,)

        return self._record("slice", out, (a,), vjp, lambda: a.data[key])

    # -- reverse pass -----------------------------------------------------

    def backward(self, output: Tensor) -> Gradients:
        """Gradient of a scalar output with respect to every requires-grad leaf."""
        if output.data.ndim != 0 and output.data.size != 1:
            raise ContractViolation(f"backward output must be scalar, got shape {output.shape}")
        return self.backward_seeded([(output, np.ones(output.shape))])

    def backward_seeded(self, seeded: Iterable[tuple[Tensor, Array]]) -> Gradients:
        """Reverse accumulation from several outputs with explicit cotangents.

        This is the vector-Jacobian entry point the ODE adjoint uses; the
        scalar ``backward`` is the special case of a single ones-seed.
        """
        store: dict[int, Array] = {}
        on_tape = {id(n.out) for n in self._nodes}
        for out, seed in seeded:
            seed = _as_f64(seed)
            if seed.shape != out.shape:
                raise ContractViolation(f"seed shape {seed.shape} != output shape {out.shape}")
            if out.requires_grad and id(out) not in on_tape and id(out) not in self._leaves:
                raise ContractViolation("output was not recorded on this tape")
            prev = store.get(id(out))
            store[id(out)] = seed if prev is None else prev + seed
        for node in reversed(self._nodes):
            g = store.get(id(node.out))
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None:
                    continue
                prev = store.get(id(inp))
                store[id(inp)] = gi if prev is None else prev + gi
        leaf_grads = {k: store[k] for k in self._leaves if k in store}
        return Gradients(leaf_grads, self._leaves)

    # -- auditing ---------------------------------------------------------

    def replay_matches(self) -> bool:
        """Recompute every node from current inputs; True iff bit-identical."""
        for node in self._nodes:
            if not np.array_equal(node.replay(), node.out.data):
                return False
        return True
