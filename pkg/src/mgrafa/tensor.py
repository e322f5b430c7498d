"""Dense tensors with tape-based reverse-mode differentiation.

Only the handful of primitives the aggregation model needs are provided.
Every primitive checks its result for NaN/Inf and, when a :class:`Tape` is
active and some input requires a gradient, records a backward rule.

Multiply-accumulate operations (``linear_map``, ``matmul_nt``,
``weighted_sum_nodes``, ``conv3x3``) report their MAC counts to an active
:class:`MacCounter`, which is how the analytical cost model is cross-checked.
"""

from __future__ import annotations

import contextlib
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    BatchCompositionError,
    ContractError,
    DegenerateBatchError,
    DimensionError,
    ConfigurationError,
    NonFiniteError,
    UnsupportedBuildError,
)

DEFAULT_DTYPE = np.float32

# MAC instrumentation can be compiled out by setting RAFA_NO_INSTRUMENT=1.
INSTRUMENTATION_ENABLED = os.environ.get("RAFA_NO_INSTRUMENT", "0") in ("", "0")

_local = threading.local()


def _tape_stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def _counter_stack() -> list:
    if not hasattr(_local, "counters"):
        _local.counters = []
    return _local.counters


def _scope_stack() -> list:
    if not hasattr(_local, "scopes"):
        _local.scopes = []
    return _local.scopes


class Tensor:
    """A row-major array of reals, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if np.issubdtype(arr.dtype, np.floating) else DEFAULT_DTYPE
        self.data = np.asarray(arr, dtype=dtype, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.dtype), -1.0))

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


@dataclass
class TapeEntry:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; primitives executed inside the block whose
    inputs require gradients are appended in execution order, which is a
    topological order by construction.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.entries)

    def leaves(self) -> list[Tensor]:
        produced = {id(e.output) for e in self.entries}
        seen: dict[int, Tensor] = {}
        for e in self.entries:
            for t in e.inputs:
                if t.requires_grad and id(t) not in produced and id(t) not in seen:
                    seen[id(t)] = t
        return list(seen.values())


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad():
    """Suspend recording (used for evaluation and finite differences)."""
    stack = _tape_stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


class MacCounter:
    """Accumulates multiply-accumulate counts keyed by the active scope path."""

    def __init__(self):
        self.counts: dict[tuple[str, ...], int] = {}

    def add(self, n: int) -> None:
        key = tuple(_scope_stack())
        self.counts[key] = self.counts.get(key, 0) + int(n)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def matching(self, *parts: str) -> int:
        """Sum of counts whose scope path contains every given part."""
        return sum(n for k, n in self.counts.items() if all(p in k for p in parts))


@contextlib.contextmanager
def count_macs():
    if not INSTRUMENTATION_ENABLED:
        raise UnsupportedBuildError("MAC instrumentation disabled (RAFA_NO_INSTRUMENT is set)")
    counter = MacCounter()
    _counter_stack().append(counter)
    try:
        yield counter
    finally:
        _counter_stack().pop()


@contextlib.contextmanager
def mac_scope(name: str):
    stack = _scope_stack()
    stack.append(name)
    try:
        yield
    finally:
        stack.pop()


def _count(n: int) -> None:
    if INSTRUMENTATION_ENABLED:
        for c in _counter_stack():
            c.add(n)


def _record(op: str, out: np.ndarray, inputs: Iterable[Tensor], backward) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op}: non-finite value in output")
    inputs = tuple(inputs)
    result = Tensor(out, dtype=out.dtype)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        tape.entries.append(TapeEntry(op, inputs, result, backward))
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------- primitives


def linear_map(x: Tensor, w: Tensor) -> Tensor:
    """Per-row linear map: ``out[..., o] = sum_j w[o, j] * x[..., j]``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise DimensionError(f"linear_map: input {x.shape} incompatible with weight {w.shape}")
    rows = x.data.size // x.shape[-1]
    _count(rows * w.shape[0] * w.shape[1])
    out = x.data @ w.data.T

    def backward(g):
        gx = g @ w.data if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = g.reshape(-1, w.shape[0]).T @ x.data.reshape(-1, w.shape[1])
        return gx, gw

    return _record("linear_map", out, (x, w), backward)


def matmul_nt(a: Tensor, b: Tensor) -> Tensor:
    """``out[..., i, j] = sum_c a[..., i, c] * b[..., j, c]``."""
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"matmul_nt: {a.shape} incompatible with {b.shape}")
    batch = int(np.prod(a.shape[:-2], dtype=np.int64))
    _count(batch * a.shape[-2] * b.shape[-2] * a.shape[-1])
    bt = np.swapaxes(b.data, -1, -2)
    out = a.data @ bt

    def backward(g):
        ga = g @ b.data if a.requires_grad else None
        gb = np.swapaxes(g, -1, -2) @ a.data if b.requires_grad else None
        return ga, gb

    return _record("matmul_nt", out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a, getattr(b, "dtype", None)), _as_tensor(b, getattr(a, "dtype", None))
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: {a.shape} and {b.shape}") from exc

    def backward(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return _record("add", out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a, getattr(b, "dtype", None)), _as_tensor(b, getattr(a, "dtype", None))
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul: {a.shape} and {b.shape}") from exc

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _record("mul", out, (a, b), backward)


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    raise ContractError(f"elementwise: unknown op {op!r}")


def scale(x: Tensor, factor: float) -> Tensor:
    out = x.data * x.data.dtype.type(factor)
    return _record("scale", out, (x,), lambda g: (g * factor,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # derivative at exactly 0 is 0
    out = np.where(mask, x.data, 0).astype(x.dtype)
    return _record("relu", out, (x,), lambda g: (g * mask,))


def softmax_axis(x: Tensor, axis: int) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ContractError(f"softmax_axis: axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record("softmax", y, (x,), backward)


def reduce_mean_axis(x: Tensor, axis: int) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ContractError(f"reduce_mean_axis: axis {axis} invalid for shape {x.shape}")
    n = x.shape[axis]
    out = x.data.mean(axis=axis)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, x.shape).copy(),)

    return _record("mean", out, (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return _record("sum", out, (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),))


def avg_pool_spatial(x: Tensor, factor) -> Tensor:
    """Non-overlapping average pooling over the ``[..., h, w, c]`` grid axes.

    ``factor`` is an int or an ``(fh, fw)`` pair.
    """
    fh, fw = (factor, factor) if np.isscalar(factor) else factor
    *lead, h, w, c = x.shape
    if fh < 1 or fw < 1 or h % fh or w % fw:
        raise ConfigurationError(f"avg_pool_spatial: grid {h}x{w} not divisible by {fh}x{fw}")
    if fh == 1 and fw == 1:
        return x
    blocks = x.data.reshape(*lead, h // fh, fh, w // fw, fw, c)
    out = blocks.mean(axis=(-4, -2))

    def backward(g):
        up = np.repeat(np.repeat(g, fh, axis=-3), fw, axis=-2)
        return (up / (fh * fw),)

    return _record("avg_pool", out, (x,), backward)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ContractError("concat_channels: empty input")
    lead = xs[0].shape[:-1]
    for t in xs:
        if t.shape[:-1] != lead:
            raise DimensionError(f"concat_channels: {t.shape} vs {xs[0].shape}")
    out = np.concatenate([t.data for t in xs], axis=-1)
    bounds = np.cumsum([0] + [t.shape[-1] for t in xs])

    def backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return _record("concat", out, xs, backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    out = x.data[..., start:stop].copy()

    def backward(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return _record("slice", out, (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return _record("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def weighted_sum_nodes(x: Tensor, w: Tensor) -> Tensor:
    """``out[..., c] = sum_i w[..., i, c] * x[..., i, c]``."""
    if x.shape != w.shape or x.ndim < 2:
        raise DimensionError(f"weighted_sum_nodes: nodes {x.shape} vs weights {w.shape}")
    _count(x.data.size)
    out = (x.data * w.data).sum(axis=-2)

    def backward(g):
        ge = np.expand_dims(g, -2)
        return (
            ge * w.data if x.requires_grad else None,
            ge * x.data if w.requires_grad else None,
        )

    return _record("weighted_sum", out, (x, w), backward)


def conv3x3(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2) -> Tensor:
    """3x3 convolution, zero padding 1, on NHWC input; ``w`` is ``[cout, 3, 3, cin]``."""
    n, h, wd, cin = x.shape
    cout = w.shape[0]
    if w.shape != (cout, 3, 3, cin):
        raise DimensionError(f"conv3x3: input {x.shape} incompatible with weight {w.shape}")
    if h % stride or wd % stride:
        raise ConfigurationError(f"conv3x3: extents {h}x{wd} not divisible by stride {stride}")
    ho, wo = h // stride, wd // stride
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((n, ho, wo, 3, 3, cin), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, :, :, ky, kx, :] = xp[:, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride, :]
    cols2 = cols.reshape(-1, 9 * cin)
    wmat = w.data.reshape(cout, -1)
    _count(cols2.shape[0] * 9 * cin * cout)
    out = (cols2 @ wmat.T).reshape(n, ho, wo, cout)
    if b is not None:
        out = out + b.data

    def backward(g):
        g2 = g.reshape(-1, cout)
        gw = (g2.T @ cols2).reshape(w.shape) if w.requires_grad else None
        gb = g2.sum(axis=0) if b is not None and b.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, ho, wo, 3, 3, cin)
            gpad = np.zeros(xp.shape, dtype=g.dtype)
            for ky in range(3):
                for kx in range(3):
                    gpad[:, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride, :] += gcols[:, :, :, ky, kx, :]
            gx = gpad[:, 1:-1, 1:-1, :]
        return (gx, gw) if b is None else (gx, gw, gb)

    inputs = (x, w) if b is None else (x, w, b)
    return _record("conv3x3", out, inputs, backward)


# ------------------------------------------------------------- batch norm


@dataclass
class BatchNormState:
    """Per-channel affine parameters and running statistics."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    training: bool = True

    @classmethod
    def create(cls, channels: int, dtype=DEFAULT_DTYPE, momentum: float = 0.1, eps: float = 1e-5):
        return cls(
            gamma=Tensor(np.ones(channels), requires_grad=True, dtype=dtype),
            beta=Tensor(np.zeros(channels), requires_grad=True, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )


def batch_norm(x: Tensor, state: BatchNormState) -> Tensor:
    """Normalize each channel over every leading position of ``x``."""
    c = x.shape[-1]
    if state.gamma.shape != (c,):
        raise DimensionError(f"batch_norm: input {x.shape} vs {state.gamma.shape[0]} channels")
    gamma, beta = state.gamma, state.beta
    flat = x.data.reshape(-1, c)
    if not state.training:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean) * inv
        out = (xhat * gamma.data + beta.data).astype(x.dtype)

        def backward_eval(g):
            return (
                g * (gamma.data * inv) if x.requires_grad else None,
                (g * xhat).reshape(-1, c).sum(axis=0) if gamma.requires_grad else None,
                g.reshape(-1, c).sum(axis=0) if beta.requires_grad else None,
            )

        return _record("batch_norm", out, (x, gamma, beta), backward_eval)

    n = flat.shape[0]
    if n < 2:
        raise DegenerateBatchError(f"batch_norm: training mode needs >= 2 samples per channel, got {n}")
    mean = flat.mean(axis=0)
    centered = flat - mean
    var = (centered * centered).mean(axis=0)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = centered * inv
    out = (xhat * gamma.data + beta.data).reshape(x.shape).astype(x.dtype)

    m = state.momentum
    state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(state.running_mean.dtype)
    state.running_var = ((1 - m) * state.running_var + m * var * n / (n - 1)).astype(state.running_var.dtype)

    def backward(g):
        g2 = g.reshape(-1, c)
        gsum = g2.sum(axis=0)
        gxhat_sum = (g2 * xhat).sum(axis=0)
        gx = None
        if x.requires_grad:
            gx = (gamma.data * inv / n) * (n * g2 - gsum - xhat * gxhat_sum)
            gx = gx.reshape(x.shape)
        return (
            gx,
            gxhat_sum if gamma.requires_grad else None,
            gsum if beta.requires_grad else None,
        )

    return _record("batch_norm", out, (x, gamma, beta), backward)


# ------------------------------------------------------------- losses


def label_smooth_ce(logits: Tensor, labels, eps: float) -> Tensor:
    """Mean cross-entropy against ``(1 - eps) * onehot + eps / num_classes``."""
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    if labels.shape != (b,):
        raise DimensionError(f"label_smooth_ce: {b} logits rows vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"label_smooth_ce: label out of range [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    q = np.full((b, k), eps / k, dtype=np.float64)
    q[np.arange(b), labels] += 1.0 - eps
    q = q.astype(logits.dtype)
    out = np.asarray(-(q * logp).sum() / b, dtype=logits.dtype)
    p = np.exp(logp)

    def backward(g):
        return (g * (p - q) / b,)

    return _record("label_smooth_ce", out, (logits,), backward)


def pairwise_distances(f: np.ndarray) -> np.ndarray:
    diff = f[:, None, :] - f[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1) + 1e-12)


def batch_hard_triplet(features: Tensor, labels, margin: float) -> Tensor:
    """Batch-hard triplet hinge averaged over anchors (Euclidean distances)."""
    labels = np.asarray(labels)
    b = features.shape[0]
    if labels.shape != (b,):
        raise DimensionError(f"batch_hard_triplet: {b} features vs labels {labels.shape}")
    uniq, counts = np.unique(labels, return_counts=True)
    if len(uniq) < 2:
        raise BatchCompositionError(f"batch_hard_triplet: only label {uniq[0]} present; no negatives")
    for lab, cnt in zip(uniq, counts):
        if cnt < 2:
            raise BatchCompositionError(f"batch_hard_triplet: label {lab} has no positive")
    f = features.data
    dist = pairwise_distances(f)
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(b, dtype=bool)
    pos_d = np.where(pos_mask, dist, -np.inf)
    neg_d = np.where(~same, dist, np.inf)
    p_idx = pos_d.argmax(axis=1)
    n_idx = neg_d.argmin(axis=1)
    rows = np.arange(b)
    hinge = margin + dist[rows, p_idx] - dist[rows, n_idx]
    active = hinge > 0
    out = np.asarray(np.where(active, hinge, 0).sum() / b, dtype=features.dtype)

    def backward(g):
        gf = np.zeros_like(f)
        for a in np.flatnonzero(active):
            p, q = p_idx[a], n_idx[a]
            up = (f[a] - f[p]) / dist[a, p]
            un = (f[a] - f[q]) / dist[a, q]
            gf[a] += up - un
            gf[p] -= up
            gf[q] += un
        return (gf * (g / b),)

    return _record("batch_hard_triplet", out, (features,), backward)


# ------------------------------------------------------------- backward


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse sweep over ``tape``; returns gradients for every requires_grad leaf.

    Leaf ``.grad`` attributes are overwritten with the result.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    reachable = False
    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.output), None)
        if entry.output is loss:
            reachable = True
        if g is None:
            continue
        for inp, gi in zip(entry.inputs, entry.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if id(inp) in grads:
                grads[id(inp)] = grads[id(inp)] + gi
            else:
                grads[id(inp)] = np.asarray(gi, dtype=inp.dtype)
    if not reachable:
        raise ContractError("backward: loss was not produced on this tape")
    result: dict[Tensor, np.ndarray] = {}
    for leaf in tape.leaves():
        gl = grads.get(id(leaf))
        gl = np.zeros(leaf.shape, dtype=leaf.dtype) if gl is None else gl.reshape(leaf.shape).astype(leaf.dtype)
        leaf.grad = gl
        result[leaf] = gl
    return result


# ------------------------------------------------------------- grad check


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    worst_index: tuple
    checked: int
    skipped: list = field(default_factory=list)


@dataclass
class GradCheckReport:
    params: list[ParamCheck]
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def lines(self) -> list[str]:
        out = []
        for p in self.params:
            status = "ok" if p.max_rel_error < self.tolerance else "FAIL"
            out.append(
                f"{p.name}: max_rel_error={p.max_rel_error:.3e} checked={p.checked} "
                f"skipped={len(p.skipped)} {status}"
            )
        return out


def grad_check(
    build: Callable[[], Tensor],
    params,
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare tape gradients with central differences.

    ``params`` is a dict name -> Tensor or a list of Tensors (all float64).
    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    A coordinate whose one-sided differences disagree by an amount that does
    not shrink with the step is a kink (ReLU at 0, argmax ties) and is
    reported as skipped instead of failed.
    """
    if not isinstance(params, dict):
        params = {f"param{i}": p for i, p in enumerate(params)}
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ContractError(f"grad_check: {name} must be float64, got {p.dtype}")

    with Tape() as tape:
        loss = build()
    analytic = backward(tape, loss)

    def f() -> float:
        with no_grad():
            return float(build().data)

    def one_sided(p: Tensor, idx, step: float, base: float) -> tuple[float, float]:
        orig = p.data[idx]
        p.data[idx] = orig + step
        fp = f()
        p.data[idx] = orig - step
        fm = f()
        p.data[idx] = orig
        return (fp - base) / step, (base - fm) / step

    results = []
    for name, p in params.items():
        grad = analytic.get(p, np.zeros(p.shape))
        coords = list(np.ndindex(*p.shape))
        if max_coords is not None and len(coords) > max_coords:
            rng = rng or np.random.default_rng(0)
            pick = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        worst, worst_idx, skipped = 0.0, (), []
        for idx in coords:
            orig = p.data[idx]
            p.data[idx] = orig + h
            fp = f()
            p.data[idx] = orig - h
            fm = f()
            p.data[idx] = orig
            num = (fp - fm) / (2 * h)
            a = float(grad[idx])
            rel = abs(a - num) / max(abs(a), abs(num), floor)
            if rel >= tol:
                base = f()
                fw1, bw1 = one_sided(p, idx, h, base)
                fw2, bw2 = one_sided(p, idx, h / 10, base)
                jump1, jump2 = abs(fw1 - bw1), abs(fw2 - bw2)
                if jump1 > 1e-7 and jump2 > 0.5 * jump1:
                    skipped.append(idx)
                    continue
            if rel > worst:
                worst, worst_idx = rel, idx
        results.append(ParamCheck(name, worst, worst_idx, len(coords) - len(skipped), skipped))
    return GradCheckReport(results, tol)


# ------------------------------------------------------------- optimizer


@dataclass
class AdamConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params: dict, grads: dict, state: AdamState, hyper: AdamConfig) -> None:
    """One Adam update with decoupled weight decay, applied in place.

    ``params`` and ``grads`` are dicts keyed by parameter name.  If any
    gradient is non-finite nothing is modified.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"optimizer_step: {name} param {p.shape} vs grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"optimizer_step: non-finite gradient for {name}; step aborted")
    state.step += 1
    t = state.step
    bc1 = 1 - hyper.beta1 ** t
    bc2 = 1 - hyper.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = hyper.beta1 * m + (1 - hyper.beta1) * g
        v = hyper.beta2 * v + (1 - hyper.beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = hyper.lr * (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)
        p.data -= (hyper.lr * hyper.weight_decay * p.data + update).astype(p.dtype)
