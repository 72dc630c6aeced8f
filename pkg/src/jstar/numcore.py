"""Dense tensors with tape-based reverse-mode automatic differentiation.

Arrays are numpy buffers (float32 by default, float64 allowed for gradient
checking).  Operations executed while a :class:`Graph` is active and at least
one input requires a gradient are appended to that graph; :func:`backward`
walks the graph in reverse append order, which is a valid reverse topological
order because inputs are always recorded before their consumers.

Elementwise binary ops accept only identical shapes or a scalar operand.
Anything wider must go through :func:`expand`, which keeps every broadcast
visible on the tape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float32
_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_ROW_BLOCK = 8


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf from finite inputs."""


class GraphError(RuntimeError):
    pass


class Tensor:
    """A dense array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "graph", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.array(data, dtype=dtype or DTYPE)
        if arr.dtype not in _ALLOWED_DTYPES:
            raise TypeError(f"unsupported dtype {arr.dtype}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.graph: Graph | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self):
        return sum_all(self)


@dataclass
class Node:
    kind: str
    inputs: tuple[Tensor, ...]
    out: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Graph:
    """Append-only op tape.  Use as a context manager to record."""

    nodes: list[Node] = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "Graph":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def reset(self) -> None:
        for node in self.nodes:
            node.out.node_id = None
            node.out.graph = None
        self.nodes.clear()
        self.consumed = False


_ACTIVE: list[Graph] = []


def active_graph() -> Graph | None:
    return _ACTIVE[-1] if _ACTIVE else None


class no_grad:
    """Suspend recording, e.g. for inference inside a training step."""

    def __enter__(self):
        self._saved = list(_ACTIVE)
        _ACTIVE.clear()

    def __exit__(self, *exc):
        _ACTIVE[:] = self._saved


def tensor(data, requires_grad=False, dtype=None, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=like.dtype if like is not None else None)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        b = _as_tensor(b)
        return _as_tensor(a, like=b), b
    return a, _as_tensor(b, like=a)


def _check_finite(kind: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{kind} produced non-finite values")


def _wrap(data: np.ndarray) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data, out.grad, out.requires_grad = data, None, False
    out.node_id = out.graph = out.name = None
    return out


def _emit(kind: str, data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    _check_finite(kind, data)
    out = _wrap(data)
    graph = active_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        if graph.consumed:
            raise GraphError("graph already consumed by backward(); call reset()")
        out.requires_grad = True
        out.node_id = len(graph.nodes)
        out.graph = graph
        graph.nodes.append(Node(kind, tuple(inputs), out, backward))
    return out


def _require_nonempty(kind: str, *ts: Tensor) -> None:
    for t in ts:
        if t.size == 0:
            raise ValueError(f"{kind}: empty tensor")


def _binary_shapes(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.size == 1 and a.data.ndim == 0 or b.size == 1 and b.data.ndim == 0:
        return
    raise ValueError(f"{kind}: unsupported broadcast {a.shape} vs {b.shape}")


def _unscalar(grad: np.ndarray, t: Tensor) -> np.ndarray:
    if t.shape == grad.shape:
        return grad
    return np.asarray(grad.sum(), dtype=t.dtype)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shapes("add", a, b)
    _require_nonempty("add", a, b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unscalar(g, a), _unscalar(g, b)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shapes("sub", a, b)
    _require_nonempty("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unscalar(g, a), _unscalar(-g, b)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shapes("mul", a, b)
    _require_nonempty("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_unscalar(g * bd, a), _unscalar(g * ad, b)))


def sigmoid(x: Tensor) -> Tensor:
    _require_nonempty("sigmoid", x)
    y = _stable_sigmoid(x.data)
    return _emit("sigmoid", y, (x,), lambda g: (g * y * (1 - y),))


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only, so large |v| saturates cleanly
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1 / (1 + e), e / (1 + e)).astype(v.dtype)


def tanh(x: Tensor) -> Tensor:
    _require_nonempty("tanh", x)
    y = np.tanh(x.data)
    return _emit("tanh", y, (x,), lambda g: (g * (1 - y * y),))


def relu(x: Tensor) -> Tensor:
    _require_nonempty("relu", x)
    y = np.maximum(x.data, 0)
    return _emit("relu", y, (x,), lambda g: (g * (y > 0),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _emit("exp", y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _emit("log", np.log(xd), (x,), lambda g: (g / xd,))


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax over the last dimension."""
    _require_nonempty("log_softmax", x)
    y = _log_softmax_np(x.data)
    p = np.exp(y)
    return _emit("log_softmax", y, (x,), lambda g: (g - p * g.sum(-1, keepdims=True),))


def _log_softmax_np(v: np.ndarray) -> np.ndarray:
    shifted = v - v.max(-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(-1, keepdims=True))


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last dim; ``mask`` (same shape, True = keep) zeroes
    excluded entries exactly.  Fully masked rows produce all zeros."""
    _require_nonempty("softmax", x)
    v = x.data
    if mask is not None:
        if mask.shape != v.shape:
            raise ValueError(f"softmax: mask shape {mask.shape} != {v.shape}")
        v = np.where(mask, v, -np.inf)
        m = v.max(-1, keepdims=True)
        m = np.where(np.isfinite(m), m, 0)
        e = np.where(mask, np.exp(v - m), 0)
    else:
        e = np.exp(v - v.max(-1, keepdims=True))
    s = e.sum(-1, keepdims=True)
    y = (e / np.where(s > 0, s, 1)).astype(x.dtype)
    return _emit("softmax", y, (x,), lambda g: (y * (g - (g * y).sum(-1, keepdims=True)),))


_ELEMENTWISE = {
    "add": add,
    "mul": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "log_softmax_lastdim": log_softmax,
}


def elementwise(kind: str, *args) -> Tensor:
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(*args)


# -------------------------------------------------------------- linear algebra

def _row_stable_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Pad the row dim to a multiple of 8: BLAS picks kernels by M, and a
    # row's result must not depend on how many other rows are present.
    m = a.shape[-2]
    padded = -(-m // _ROW_BLOCK) * _ROW_BLOCK
    if padded != m:
        buf = np.zeros(a.shape[:-2] + (padded, a.shape[-1]), dtype=a.dtype)
        buf[..., :m, :] = a
        return np.matmul(buf, b)[..., :m, :]
    return np.matmul(a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two dims.

    ``a`` may carry leading batch dims; ``b`` is either 2-D or has the same
    leading dims as ``a``.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul needs at least 2-D operands")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dims differ {a.shape} x {b.shape}")
    if b.data.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise ValueError(f"matmul: batch dims differ {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _row_stable_matmul(g, np.swapaxes(bd, -1, -2))
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return ga, gb

    return _emit("matmul", _row_stable_matmul(ad, bd), (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with the bias applied along the last dim."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input dim {x.shape[-1]} != weight rows {weight.shape[0]}")
    xd, wd = x.data, weight.data
    y = _row_stable_matmul(xd, wd)
    if bias is not None:
        y = y + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = _row_stable_matmul(g, wd.T)
        gw = xd.reshape(-1, xd.shape[-1]).T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(0)

    return _emit("linear", y, inputs, backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data
    n = xd.shape[-1]

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(lead)
        gb = g.sum(lead)
        gh = g * gain.data
        gx = inv * (gh - gh.mean(-1, keepdims=True) - xhat * (gh * xhat).sum(-1, keepdims=True) / n)
        return gx.astype(xd.dtype), gg, gb

    return _emit("layer_norm", y.astype(xd.dtype), (x, gain, bias), backward)


# --------------------------------------------------------------- shape / index

def sum_all(x: Tensor) -> Tensor:
    _require_nonempty("sum", x)
    shape, dtype = x.shape, x.dtype
    return _emit("sum", np.asarray(x.data.sum(), dtype=dtype), (x,),
                 lambda g: (np.full(shape, g, dtype=dtype),))


def mean_all(x: Tensor) -> Tensor:
    return mul(sum_all(x), 1.0 / x.size)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _emit("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit("transpose", np.transpose(x.data, axes), (x,),
                 lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype

    basic = all(isinstance(i, (slice, int)) for i in (index if isinstance(index, tuple) else (index,)))

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _emit("getitem", np.array(x.data[index]), (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _emit("concat", np.concatenate([t.data for t in xs], axis=axis), tuple(xs),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    n = len(xs)
    return _emit("stack", np.stack([t.data for t in xs], axis=axis), tuple(xs),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def pad_axis(x: Tensor, axis: int, before: int, after: int) -> Tensor:
    if before == after == 0:
        return x
    axis = axis % x.data.ndim
    shape = list(x.shape)
    n = shape[axis]
    shape[axis] = before + n + after
    sl = tuple(slice(before, before + n) if i == axis else slice(None) for i in range(len(shape)))
    out = np.zeros(shape, dtype=x.dtype)
    out[sl] = x.data
    return _emit("pad", out, (x,), lambda g: (g[sl],))


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast to ``shape``; the inverse sums over expanded axes."""
    shape = tuple(shape)
    src = x.shape
    if len(src) != len(shape):
        raise ValueError(f"expand: rank mismatch {src} -> {shape}")
    axes = tuple(i for i, (s, d) in enumerate(zip(src, shape)) if s != d)
    if any(src[i] != 1 for i in axes):
        raise ValueError(f"expand: cannot expand {src} -> {shape}")
    return _emit("expand", np.broadcast_to(x.data, shape).copy(), (x,),
                 lambda g: (g.sum(axis=axes, keepdims=True),))


def take(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]`` (embedding); gradients scatter-add."""
    ids = np.asarray(ids, dtype=np.int64)
    rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        raise IndexError(f"take: id out of range [0, {rows})")
    shape, dtype = table.shape, table.dtype

    def backward(g):
        flat = ids.reshape(-1)
        onehot = (flat[:, None] == np.arange(rows)[None, :]).astype(dtype)
        return ((onehot.T @ g.reshape(flat.size, -1)).reshape(shape),)

    return _emit("take", table.data[ids], (table,), backward)


def gather_windows(x: Tensor, index: np.ndarray, valid: np.ndarray) -> Tensor:
    """Gather along axis 1: ``out[b, ...] = x[b, index[...]]`` where ``valid``;
    zeros elsewhere.  ``x`` is [B, T, D]."""
    index = np.asarray(index, dtype=np.int64)
    safe = np.where(valid, index, 0)
    keep = valid[..., None].astype(x.dtype)
    out = x.data[:, safe] * keep
    shape, dtype = x.shape, x.dtype

    def backward(g):
        # within one window slot the chunk positions are distinct, so plain
        # fancy-index accumulation is exact slot by slot
        full = np.zeros(shape, dtype=dtype)
        g = g * keep
        for j in range(index.shape[-1]):
            ok = valid[:, j]
            full[:, index[ok, j]] += g[:, ok, j]
        return (full,)

    return _emit("gather_windows", out, (x,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if p <= 0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1 - p)
    return _emit("dropout", x.data * keep, (x,), lambda g: (g * keep,))


def lstm(x: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> Tensor:
    """Single-layer LSTM over axis 1 of ``x`` [B, U, E] from a zero state.

    Gate layout along the 4P axis is (input, forget, cell, output).
    """
    xd, wi, wh, bd = x.data, w_ih.data, w_hh.data, b.data
    bsz, steps, _ = xd.shape
    hid = wh.shape[0]
    dtype = xd.dtype
    xg = _row_stable_matmul(xd, wi) + bd
    h = np.zeros((bsz, hid), dtype=dtype)
    c = np.zeros((bsz, hid), dtype=dtype)
    hs, cs, gates = [h], [c], []
    for t in range(steps):
        z = xg[:, t] + h @ wh
        i = _stable_sigmoid(z[:, :hid])
        f = _stable_sigmoid(z[:, hid:2 * hid])
        gg = np.tanh(z[:, 2 * hid:3 * hid])
        o = _stable_sigmoid(z[:, 3 * hid:])
        c = f * c + i * gg
        h = o * np.tanh(c)
        gates.append((i, f, gg, o))
        hs.append(h)
        cs.append(c)
    out = np.stack(hs[1:], axis=1) if steps else np.zeros((bsz, 0, hid), dtype=dtype)

    def backward(g):
        dz_all = np.zeros((bsz, steps, 4 * hid), dtype=dtype)
        dh_next = np.zeros((bsz, hid), dtype=dtype)
        dc_next = np.zeros((bsz, hid), dtype=dtype)
        for t in reversed(range(steps)):
            i, f, gg, o = gates[t]
            tc = np.tanh(cs[t + 1])
            dh = g[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1 - tc * tc) + dc_next
            di = dc * gg
            df = dc * cs[t]
            dg = dc * i
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                                 dg * (1 - gg * gg), do * o * (1 - o)], axis=1)
            dz_all[:, t] = dz
            dh_next = dz @ wh.T
            dc_next = dc * f
        flat = dz_all.reshape(-1, 4 * hid)
        gx = _row_stable_matmul(dz_all, wi.T)
        gwi = xd.reshape(-1, xd.shape[-1]).T @ flat
        hprev = np.stack(hs[:-1], axis=1).reshape(-1, hid)
        gwh = hprev.T @ flat
        return gx, gwi, gwh, flat.sum(0)

    return _emit("lstm", out, (x, w_ih, w_hh, b), backward)


def lstm_step(x: np.ndarray, h: np.ndarray, c: np.ndarray, w_ih: np.ndarray,
              w_hh: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One inference step of :func:`lstm` on plain arrays (no tape)."""
    hid = w_hh.shape[0]
    z = _row_stable_matmul(x, w_ih) + b + h @ w_hh
    i = _stable_sigmoid(z[:, :hid])
    f = _stable_sigmoid(z[:, hid:2 * hid])
    g = np.tanh(z[:, 2 * hid:3 * hid])
    o = _stable_sigmoid(z[:, 3 * hid:])
    c = f * c + i * g
    return o * np.tanh(c), c


def custom(kind: str, data: np.ndarray, inputs: Sequence[Tensor],
           backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Record an op whose forward value and backward rule are computed
    outside this module (the transducer loss uses this)."""
    return _emit(kind, data, inputs, backward)


# ------------------------------------------------------------------- backward

def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf reachable from the scalar ``loss``.

    Gradients are accumulated into existing buffers (sum over paths and over
    repeated calls on fresh graphs).  A graph can be differentiated once.
    """
    if loss.data.ndim != 0:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    graph = loss.graph
    if graph is None:
        raise GraphError("loss is not recorded on any graph")
    if graph.consumed:
        raise GraphError("backward() called twice on the same graph without reset()")
    graph.consumed = True

    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(graph.nodes[: loss.node_id + 1]):
        g = grads.pop(node.out.node_id, None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            gi = np.asarray(gi, dtype=inp.dtype).reshape(inp.shape)
            if inp.graph is graph and inp.node_id is not None:
                prev = grads.get(inp.node_id)
                grads[inp.node_id] = gi if prev is None else prev + gi
            else:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi


# ------------------------------------------------------------------ optimizer

@dataclass
class OptimConfig:
    lr: float = 3e-3
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-9
    clip_norm: float | None = 5.0


class Adam:
    """Adam with optional global-norm clipping.  Parameter order is fixed at
    construction so accumulation order is deterministic."""

    def __init__(self, params: Iterable[Tensor], config: OptimConfig | None = None):
        self.params = list(params)
        self.config = config or OptimConfig()
        self.lr = self.config.lr  # may be changed between steps by a schedule
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
        return math.sqrt(total)

    def step(self) -> float:
        """Apply one update, zero the grads and return the pre-clip norm."""
        for p in self.params:
            if p.grad is None:
                raise GraphError(f"missing gradient for parameter {p.name or p}")
        cfg = self.config
        norm = self.grad_norm()
        if not math.isfinite(norm):
            raise NonFiniteError("non-finite gradient norm")
        scale = 1.0
        if cfg.clip_norm is not None and norm > cfg.clip_norm:
            scale = cfg.clip_norm / (norm + 1e-12)
        self.step_count += 1
        b1, b2 = cfg.betas
        c1 = 1 - b1 ** self.step_count
        c2 = 1 - b2 ** self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad * scale if scale != 1.0 else p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.dtype)
            p.grad = np.zeros_like(p.data)
        return norm

    def state_dict(self) -> dict:
        return {"step": self.step_count, "m": [m.copy() for m in self._m],
                "v": [v.copy() for v in self._v]}


def sgd_adam_step(params: Iterable[Tensor], optimizer: Adam) -> float:
    """Take one Adam step on ``params`` (which must be the optimizer's)."""
    params = list(params)
    if [id(p) for p in params] != [id(p) for p in optimizer.params]:
        raise ValueError("parameter set does not match the optimizer")
    return optimizer.step()
