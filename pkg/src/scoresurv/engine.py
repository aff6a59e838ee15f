"""Reverse-mode automatic differentiation and the training loop.

A :class:`Tape` is an append-only list of nodes. Every node holds a numpy
value (a scalar or an array), the op that produced it and, for each input,
the input's node index plus a vector-Jacobian product. Because nodes are
appended only after their inputs, list order is a topological order and the
backward pass is a single reverse sweep.

The elementwise functions in this module (``exp``, ``log``, ``clamp``, ...)
accept either a :class:`Var` or a plain array; arrays pass straight through
numpy, so the same code path can build a differentiable objective or just
evaluate it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class NonFiniteError(FloatingPointError):
    def __init__(self, node_id: int, op: str, what: str = "value"):
        super().__init__(f"non-finite {what} at node {node_id} ({op})")
        self.node_id = node_id
        self.op = op


class _Node:
    __slots__ = ("value", "parents", "op")

    def __init__(self, value, parents, op):
        self.value = value
        self.parents = parents
        self.op = op


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (undo numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tape:
    def __init__(self):
        self.nodes: list[_Node] = []
        self.output: Var | None = None
        # (node index, lo, hi) for every clamp, to detect kinks
        self.clamps: list[tuple[int, float, float]] = []

    def _push(self, value, parents, op) -> "Var":
        self.nodes.append(_Node(np.asarray(value, dtype=float), parents, op))
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value, name: str = "leaf") -> "Var":
        return self._push(np.array(value, dtype=float, copy=True), (), name)

    def watch(self, params: "ParameterStore") -> "Var":
        """Leaf node holding the flat weight vector of ``params``."""
        v = self.leaf(params.values, "params")
        self._watched = v.idx
        return v

    def __len__(self) -> int:
        return len(self.nodes)

    def clamp_near_kink(self, rtol: float = 1e-6, atol: float = 1e-9) -> bool:
        """True if any clamp input sits at (or numerically near) a bound."""
        for idx, lo, hi in self.clamps:
            x = self.nodes[self.nodes[idx].parents[0][0]].value
            for b in (lo, hi):
                if b is None:
                    continue
                if np.any(np.abs(x - b) <= atol + rtol * abs(b)):
                    return True
        return False

    def backward(self, out: "Var | None" = None) -> list:
        out = out if out is not None else self.output
        if out is None:
            raise ValueError("tape has no output")
        if out.tape is not self:
            raise ValueError("output belongs to another tape")
        if out.value.size != 1:
            raise ValueError("backward needs a scalar output")
        adj: list = [None] * len(self.nodes)
        adj[out.idx] = np.ones_like(out.value)
        for i in range(out.idx, -1, -1):
            g = adj[i]
            if g is None:
                continue
            node = self.nodes[i]
            if not np.all(np.isfinite(node.value)):
                # report the earliest non-finite node: the origin of the problem
                first = next(k for k, nd in enumerate(self.nodes) if not np.all(np.isfinite(nd.value)))
                raise NonFiniteError(first, self.nodes[first].op)
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(i, node.op, "adjoint")
            for j, vjp in node.parents:
                contrib = vjp(g)
                adj[j] = contrib if adj[j] is None else adj[j] + contrib
        return adj


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "idx")
    __array_priority__ = 100

    def __init__(self, tape: Tape, idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.idx].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(#{self.idx}, shape={self.shape})"

    def __float__(self):
        return float(self.value)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return mul(other, power(self, -1.0))

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else self.value.shape[axis]
        return vsum(self, axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    @property
    def T(self):
        return transpose(self)


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is not None and x.tape is not tape:
                raise ValueError("operands live on different tapes")
            tape = x.tape
    return tape


def add(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return _val(a) + _val(b)
    va, vb = _val(a), _val(b)
    parents = []
    if isinstance(a, Var):
        parents.append((a.idx, lambda g, s=va.shape: _unbroadcast(g, s)))
    if isinstance(b, Var):
        parents.append((b.idx, lambda g, s=vb.shape: _unbroadcast(g, s)))
    return tape._push(va + vb, tuple(parents), "add")


def mul(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return _val(a) * _val(b)
    va, vb = _val(a), _val(b)
    parents = []
    if isinstance(a, Var):
        parents.append((a.idx, lambda g: _unbroadcast(g * vb, va.shape)))
    if isinstance(b, Var):
        parents.append((b.idx, lambda g: _unbroadcast(g * va, vb.shape)))
    return tape._push(va * vb, tuple(parents), "mul")


def neg(a):
    if not isinstance(a, Var):
        return -_val(a)
    return a.tape._push(-a.value, ((a.idx, lambda g: -g),), "neg")


def apply(x, f: Callable, df: Callable, op: str = "apply"):
    """Elementwise ``f(x)`` with derivative ``df(x)``."""
    if not isinstance(x, Var):
        return f(_val(x))
    v = x.value
    return x.tape._push(f(v), ((x.idx, lambda g: g * df(v)),), op)


def exp(x):
    if not isinstance(x, Var):
        return np.exp(_val(x))
    y = np.exp(x.value)
    return x.tape._push(y, ((x.idx, lambda g: g * y),), "exp")


def log(x):
    return apply(x, np.log, lambda v: 1.0 / v, "log")


def tanh(x):
    if not isinstance(x, Var):
        return np.tanh(_val(x))
    y = np.tanh(x.value)
    return x.tape._push(y, ((x.idx, lambda g: g * (1.0 - y * y)),), "tanh")


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def logistic(x):
    if not isinstance(x, Var):
        return _sigmoid(_val(x))
    y = _sigmoid(x.value)
    return x.tape._push(y, ((x.idx, lambda g: g * y * (1.0 - y)),), "logistic")


def softplus(x):
    return apply(x, lambda v: np.logaddexp(0.0, v), _sigmoid, "softplus")


def relu(x):
    return apply(x, lambda v: np.maximum(v, 0.0), lambda v: (v > 0).astype(float), "relu")


def power(x, k: float):
    k = float(k)
    return apply(x, lambda v: v ** k, lambda v: k * v ** (k - 1.0), "power")


def clamp(x, lo=None, hi=None):
    """Clip to ``[lo, hi]``; pass-through subgradient (1 inside, 0 outside)."""
    if not isinstance(x, Var):
        return np.clip(_val(x), lo, hi)
    v = x.value

    def d(v):
        m = np.ones_like(v)
        if lo is not None:
            m[v < lo] = 0.0
        if hi is not None:
            m[v > hi] = 0.0
        return m

    out = apply(x, lambda v: np.clip(v, lo, hi), d, "clamp")
    out.tape.clamps.append((out.idx, lo, hi))
    return out


def maximum(x, c: float):
    """``max(x, c)`` against a constant ``c``."""
    return apply(x, lambda v: np.maximum(v, c), lambda v: (v >= c).astype(float), "maximum")


def matmul(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return _val(a) @ _val(b)
    va, vb = _val(a), _val(b)

    def grad_a(g):
        if va.ndim == 1:
            return vb @ g if vb.ndim == 2 else g * vb
        return np.outer(g, vb) if vb.ndim == 1 else g @ vb.T

    def grad_b(g):
        if va.ndim == 1:
            return np.outer(va, g) if vb.ndim == 2 else g * va
        return va.T @ g

    parents = []
    if isinstance(a, Var):
        parents.append((a.idx, grad_a))
    if isinstance(b, Var):
        parents.append((b.idx, grad_b))
    return tape._push(va @ vb, tuple(parents), "matmul")


def vsum(x, axis=None, keepdims=False):
    if not isinstance(x, Var):
        return np.sum(_val(x), axis=axis, keepdims=keepdims)
    shape = x.value.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return x.tape._push(np.sum(x.value, axis=axis, keepdims=keepdims), ((x.idx, vjp),), "sum")


def reshape(x, shape):
    if not isinstance(x, Var):
        return np.reshape(_val(x), shape)
    s = x.value.shape
    return x.tape._push(x.value.reshape(shape), ((x.idx, lambda g: g.reshape(s)),), "reshape")


def transpose(x):
    if not isinstance(x, Var):
        return _val(x).T
    return x.tape._push(x.value.T, ((x.idx, lambda g: g.T),), "transpose")


def getitem(x, key):
    if not isinstance(x, Var):
        return _val(x)[key]
    v = x.value

    def vjp(g):
        out = np.zeros_like(v)
        np.add.at(out, key, g)
        return out

    return x.tape._push(v[key], ((x.idx, vjp),), "getitem")


def cumsum(x, axis=-1):
    if not isinstance(x, Var):
        return np.cumsum(_val(x), axis=axis)

    def vjp(g):
        return np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)

    return x.tape._push(np.cumsum(x.value, axis=axis), ((x.idx, vjp),), "cumsum")


def concat(xs: Sequence, axis=-1):
    tape = _tape_of(*xs)
    vals = [_val(x) for x in xs]
    if tape is None:
        return np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])
    parents = []
    for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
        if isinstance(x, Var):
            sl = [slice(None)] * vals[0].ndim
            sl[axis] = slice(lo, hi)
            parents.append((x.idx, lambda g, sl=tuple(sl): g[sl]))
    return tape._push(np.concatenate(vals, axis=axis), tuple(parents), "concat")


def take_rows(x, cols):
    """``out[i] = x[i, cols[i]]`` for a 2-D ``x``."""
    cols = np.asarray(cols, dtype=int)
    rows = np.arange(cols.shape[0])
    return getitem(x, (rows, cols))


def reverse_cummin(x, axis=-1):
    """``out[..., j] = min(x[..., j:])``; gradient routed to the minimizer."""
    v = _val(x)
    vm = np.moveaxis(v, axis, -1)
    J = vm.shape[-1]
    src = np.empty(vm.shape, dtype=int)
    out = np.empty_like(vm)
    out[..., J - 1] = vm[..., J - 1]
    src[..., J - 1] = J - 1
    for j in range(J - 2, -1, -1):
        take_here = vm[..., j] <= out[..., j + 1]
        out[..., j] = np.where(take_here, vm[..., j], out[..., j + 1])
        src[..., j] = np.where(take_here, j, src[..., j + 1])
    result = np.moveaxis(out, -1, axis)
    if not isinstance(x, Var):
        return result

    def vjp(g):
        gm = np.moveaxis(g, axis, -1)
        acc = np.zeros_like(gm)
        lead = np.indices(gm.shape[:-1])
        for j in range(J):
            np.add.at(acc, (*lead, src[..., j]), gm[..., j])
        return np.moveaxis(acc, -1, axis)

    return x.tape._push(result, ((x.idx, vjp),), "reverse_cummin")


def grad(tape: Tape, params: "ParameterStore | None" = None) -> np.ndarray:
    """Gradient of ``tape.output`` with respect to the watched weights."""
    adj = tape.backward()
    idx = getattr(tape, "_watched", None)
    if idx is None:
        raise ValueError("tape has no watched parameters")
    g = adj[idx]
    if g is None:
        g = np.zeros_like(tape.nodes[idx].value)
    return g


# parameters --------------------------------------------------------------


class ParameterStore:
    """Flat weight vector with named, reshaped slices.

    ``l2`` names the slices that receive the L2 penalty during :func:`fit`.
    """

    def __init__(self, shapes: Mapping[str, tuple], l2: Sequence[str] = ()):
        self.shapes = {k: tuple(v) for k, v in shapes.items()}
        self.index: dict[str, tuple[int, int]] = {}
        start = 0
        for name, shape in self.shapes.items():
            size = int(np.prod(shape)) if shape else 1
            self.index[name] = (start, start + size)
            start += size
        self.size = start
        self.values = np.zeros(start)
        unknown = set(l2) - set(self.shapes)
        if unknown:
            raise KeyError(f"unknown l2 slices {sorted(unknown)}")
        self.l2 = tuple(l2)

    def copy(self) -> "ParameterStore":
        out = ParameterStore(self.shapes, self.l2)
        out.values = self.values.copy()
        return out

    def view(self, w, name: str):
        """Slice ``name`` of a flat vector (array or tape variable), reshaped."""
        lo, hi = self.index[name]
        piece = w[lo:hi]
        shape = self.shapes[name]
        return reshape(piece, shape) if shape != (hi - lo,) else piece

    def get(self, name: str) -> np.ndarray:
        return np.asarray(self.view(self.values, name))

    def set(self, name: str, value) -> None:
        lo, hi = self.index[name]
        self.values[lo:hi] = np.asarray(value, dtype=float).reshape(-1)

    def l2_mask(self) -> np.ndarray:
        m = np.zeros(self.size)
        for name in self.l2:
            lo, hi = self.index[name]
            m[lo:hi] = 1.0
        return m

    def glorot(self, rng: np.random.Generator, names: Sequence[str]) -> None:
        """Uniform +-sqrt(6 / (fan_in + fan_out)) for 2-D weight slices."""
        for name in names:
            fan_in, fan_out = self.shapes[name]
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            self.set(name, rng.uniform(-lim, lim, size=(fan_in, fan_out)))

    def to_dict(self) -> dict:
        return {
            "values": self.values.tolist(),
            "slices": {k: {"start": lo, "stop": hi, "shape": list(self.shapes[k])}
                       for k, (lo, hi) in self.index.items()},
            "l2": list(self.l2),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParameterStore":
        items = sorted(d["slices"].items(), key=lambda kv: kv[1]["start"])
        store = cls({k: tuple(v["shape"]) for k, v in items}, d.get("l2", ()))
        store.values = np.asarray(d["values"], dtype=float)
        if store.values.size != store.size:
            raise ValueError("parameter vector length does not match slices")
        return store


# gradient checking -------------------------------------------------------


@dataclass
class GradCheck:
    max_rel_error: float
    clamp_active: bool
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def smooth(self) -> bool:
        return not self.clamp_active


def finite_diff_check(objective: Callable[[Tape, Var], Var], params: ParameterStore,
                      h: float = 1e-5) -> GradCheck:
    """Compare reverse-mode and central-difference gradients.

    ``objective(tape, w)`` must build the scalar objective from the watched
    weight vector ``w``. The relative error per coordinate is
    ``|g_ad - g_fd| / max(1e-8, |g_fd|)``.
    """
    tape = Tape()
    w = tape.watch(params)
    tape.output = objective(tape, w)
    g_ad = grad(tape, params)
    kink = tape.clamp_near_kink()

    def f(values):
        return float(objective(None, values))

    base = params.values
    g_fd = np.empty_like(base)
    for k in range(base.size):
        e = np.zeros_like(base)
        e[k] = h
        g_fd[k] = (f(base + e) - f(base - e)) / (2 * h)
    rel = np.abs(g_ad - g_fd) / np.maximum(1e-8, np.abs(g_fd))
    return GradCheck(float(rel.max(initial=0.0)), kink, g_ad, g_fd)


# training ------------------------------------------------------------------


@dataclass
class FitConfig:
    """Optimizer settings.

    ``validation_fraction = 0`` trains on every row and uses the full-data
    objective for model selection and stopping. An epoch counts as an
    improvement only when it lowers the best objective by more than
    ``tol`` (relative).
    """

    learning_rate: float = 1e-2
    batch_size: int = 128
    max_epochs: int = 200
    l2: float = 0.0
    patience: int = 10
    validation_fraction: float = 0.2
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tol: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0 <= self.validation_fraction <= 0.5:
            raise ValueError("validation_fraction must lie in [0, 0.5]")

    def updated(self, **kw) -> "FitConfig":
        return replace(self, **kw)


@dataclass
class TraceRow:
    epoch: int
    train_objective: float
    val_objective: float


@dataclass
class FitResult:
    params: ParameterStore
    trace: list[TraceRow] = field(default_factory=list)
    best_epoch: int = 0

    def trace_csv(self) -> str:
        lines = ["epoch,train_objective,val_objective"]
        lines += [f"{r.epoch},{r.train_objective!r},{r.val_objective!r}" for r in self.trace]
        return "\n".join(lines) + "\n"


class Adam:
    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, w: np.ndarray, g: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return w - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


Builder = Callable[[Tape, Var, np.ndarray], Var]


def evaluate(builder: Builder, params: ParameterStore, idx: np.ndarray) -> float:
    return float(builder(None, params.values, idx))


def fit(
    builder: Builder,
    n: int,
    config: FitConfig,
    params: ParameterStore,
    init: Callable[[np.random.Generator], None] | None = None,
    stratify: np.ndarray | None = None,
) -> FitResult:
    """Mini-batch Adam on ``builder`` with L2 and early stopping.

    ``builder(tape, w, idx)`` returns the objective over rows ``idx`` of the
    (closed-over) data; with ``tape=None`` and an array ``w`` it must just
    evaluate. ``init(rng)`` (re)initializes ``params`` in place; it is
    retried with fresh seeds when the initial objective is not finite.
    ``stratify`` (e.g. the status vector) keeps at least one flagged row in
    the validation part.
    """
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(n)
    n_val = int(round(config.validation_fraction * n))
    if config.validation_fraction > 0:
        n_val = min(max(n_val, 1), n - 1)
        if stratify is not None:
            for _ in range(100):
                if np.any(np.asarray(stratify)[order[:n_val]]):
                    break
                order = rng.permutation(n)
    val_idx, train_idx = np.sort(order[:n_val]), order[n_val:]
    sel_idx = val_idx if n_val else np.sort(train_idx)

    if init is not None:
        for attempt in range(4):
            init(np.random.default_rng([config.seed, attempt]))
            if math.isfinite(evaluate(builder, params, np.sort(train_idx))):
                break
        else:
            raise FloatingPointError("objective not finite at initialization after 3 re-seeds")
    params = params.copy()

    mask = params.l2_mask()
    opt = Adam(params.size, config.learning_rate, config.beta1, config.beta2, config.eps)
    best = params.values.copy()
    best_val = evaluate(builder, params, sel_idx)
    trace = [TraceRow(0, evaluate(builder, params, np.sort(train_idx)), best_val)]
    best_epoch, stale = 0, 0
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(train_idx)
        tot, cnt = 0.0, 0
        for b in range(0, perm.size, config.batch_size):
            idx = np.sort(perm[b:b + config.batch_size])
            tape = Tape()
            w = tape.watch(params)
            tape.output = builder(tape, w, idx)
            g = grad(tape, params)
            if config.l2:
                g = g + 2.0 * config.l2 * mask * params.values
            params.values = opt.step(params.values, g)
            tot += float(tape.output.value) * idx.size
            cnt += idx.size
        val = evaluate(builder, params, sel_idx)
        trace.append(TraceRow(epoch, tot / max(cnt, 1), val))
        if not math.isfinite(val):
            logger.warning("non-finite validation objective at epoch %d; stopping", epoch)
            break
        if val < best_val - config.tol * abs(best_val):
            best_val, best, best_epoch, stale = val, params.values.copy(), epoch, 0
        else:
            if val < best_val:
                best_val, best, best_epoch = val, params.values.copy(), epoch
            stale += 1
            if stale >= config.patience:
                break
    params.values = best
    return FitResult(params, trace, best_epoch)
