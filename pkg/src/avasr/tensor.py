"""Dense tensor engine: reverse-mode differentiation on numpy arrays plus
operation-level parameter/FLOP instrumentation.

Every operation executed while a :class:`Graph` is active is appended to the
graph's tape together with its cost (multiply-adds and pointwise FLOPs).
``backward`` replays the tape in reverse, accumulating gradients additively
into every tensor that requires them.

Cost convention (shared with the analytic counters in :mod:`avasr.profiling`):
one multiply-add counts as 2 FLOPs; a pointwise operation counts 1 FLOP per
element; fused ops (softmax, layer norm, LSTM activation) declare a fixed
per-element constant documented on the op class.
"""

from __future__ import annotations

import contextlib
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError

_DEFAULT_DTYPE = np.float64

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))   # python floats: no dtype promotion
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def set_default_dtype(dtype) -> None:
    """Set the engine-wide element precision (float64 or float32)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ContractError(f"unsupported element dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """Dense N-dimensional array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; scalars go through the cheaper scalar ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Node:
    """One executed operation on a graph's tape."""

    __slots__ = ("op", "inputs", "output", "meta", "ctx", "scope", "mult_adds", "pointwise")

    def __init__(self, op, inputs, output, meta, ctx, scope, mult_adds, pointwise):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.meta = meta
        self.ctx = ctx
        self.scope = scope
        self.mult_adds = mult_adds
        self.pointwise = pointwise


_GRAPH_STACK: list["Graph"] = []


def active_graph() -> Optional["Graph"]:
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


class Graph:
    """Tape of executed ops: supports backward traversal, bit-identical
    replay, and per-scope cost aggregation."""

    def __init__(self, check_finite: bool = False):
        self.nodes: list[Node] = []
        self.check_finite = check_finite
        self._scope_parts: list[str] = []

    def __enter__(self) -> "Graph":
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _GRAPH_STACK.pop()
        assert popped is self

    @contextlib.contextmanager
    def scope(self, name: str):
        self._scope_parts.append(name)
        try:
            yield
        finally:
            self._scope_parts.pop()

    def current_scope(self) -> str:
        return "/".join(self._scope_parts)

    @property
    def mult_adds(self) -> int:
        return sum(n.mult_adds for n in self.nodes)

    @property
    def pointwise_flops(self) -> int:
        return sum(n.pointwise for n in self.nodes)

    @property
    def flops(self) -> int:
        return 2 * self.mult_adds + self.pointwise_flops

    def per_scope(self) -> dict[str, tuple[int, int, int]]:
        """Aggregate (mult_adds, pointwise, flops) per scope path."""
        out: dict[str, list[int]] = {}
        for n in self.nodes:
            acc = out.setdefault(n.scope, [0, 0])
            acc[0] += n.mult_adds
            acc[1] += n.pointwise
        return {k: (ma, pw, 2 * ma + pw) for k, (ma, pw) in out.items()}

    def replay(self) -> bool:
        """Re-execute every recorded op on its recorded inputs and verify
        bit-identical outputs. Returns True on success."""
        for i, node in enumerate(self.nodes):
            redo = node.op.forward({}, *[t.data for t in node.inputs], **node.meta)
            if not np.array_equal(redo, node.output.data):
                raise ContractError(f"replay mismatch at node {i} ({node.op.__name__})")
        return True


@contextlib.contextmanager
def scoped(name: str):
    """Enter `name` on the active graph's scope stack, if any."""
    g = active_graph()
    if g is None:
        yield
    else:
        with g.scope(name):
            yield


def _apply(op, inputs: Sequence[Tensor], **meta) -> Tensor:
    arrays = [t.data for t in inputs]
    g = active_graph()
    ctx: dict = {}
    out_data = op.forward(ctx, *arrays, **meta)
    out = Tensor._wrap(out_data, any(t.requires_grad for t in inputs))
    if g is not None:
        ma, pw = op.cost(out_data.shape, tuple(a.shape for a in arrays), meta)
        g.nodes.append(Node(op, tuple(inputs), out, meta, ctx, g.current_scope(), ma, pw))
        if g.check_finite and not np.all(np.isfinite(out_data)):
            raise ContractError(f"non-finite values produced by {op.__name__}")
    return out


def backward(graph: Graph, loss: Tensor) -> None:
    """Reverse traversal of the tape: fills .grad on every requires_grad
    tensor reachable from `loss`. Fan-out accumulates additively."""
    if loss.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    produced = {id(n.output) for n in graph.nodes}
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        g_out = node.output.grad
        if g_out is None:
            continue
        if any(t.requires_grad for t in node.inputs):
            grads = node.op.backward(node.ctx, g_out, **node.meta)
            for t, gi in zip(node.inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = gi if gi.flags.owndata else gi.copy()
                else:
                    t.grad = t.grad + gi
        if id(node.output) in produced:
            node.output.grad = None  # free intermediates; leaves keep theirs


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# op classes
# ---------------------------------------------------------------------------

class MatMul:
    """a(..., m, k) @ b(..., k, n); 1 mult-add per scalar product term.
    The (..., k) @ (k, n) layer case runs as one flattened GEMM."""

    @staticmethod
    def forward(ctx, a, b):
        if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
            raise DimensionError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
        ctx["a"], ctx["b"] = a, b
        if b.ndim == 2 and a.ndim > 2:
            k = a.shape[-1]
            return np.ascontiguousarray(
                (a.reshape(-1, k) @ b).reshape(a.shape[:-1] + (b.shape[1],)))
        return a @ b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx["a"], ctx["b"]
        if b.ndim == 2 and a.ndim >= 2:
            k, n = b.shape
            g2 = g.reshape(-1, n)
            ga = (g2 @ b.T).reshape(a.shape)
            gb = a.reshape(-1, k).T @ g2
            return ga, gb
        ga = _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)
        return ga, gb

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        k = in_shapes[0][-1]
        return int(np.prod(out_shape)) * k, 0


class Add:
    @staticmethod
    def forward(ctx, a, b):
        ctx["sa"], ctx["sb"] = a.shape, b.shape
        return a + b

    @staticmethod
    def backward(ctx, g):
        return _unbroadcast(g, ctx["sa"]), _unbroadcast(g, ctx["sb"])

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, int(np.prod(out_shape))


class Sub:
    @staticmethod
    def forward(ctx, a, b):
        ctx["sa"], ctx["sb"] = a.shape, b.shape
        return a - b

    @staticmethod
    def backward(ctx, g):
        return _unbroadcast(g, ctx["sa"]), _unbroadcast(-g, ctx["sb"])

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, int(np.prod(out_shape))


class Mul:
    @staticmethod
    def forward(ctx, a, b):
        ctx["a"], ctx["b"] = a, b
        return a * b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx["a"], ctx["b"]
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, int(np.prod(out_shape))


class Neg:
    @staticmethod
    def forward(ctx, a):
        return -a

    @staticmethod
    def backward(ctx, g):
        return (-g,)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, int(np.prod(out_shape))


class Scale:
    @staticmethod
    def forward(ctx, a, c):
        return a * c

    @staticmethod
    def backward(ctx, g, c):
        return (g * c,)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, int(np.prod(out_shape))


class Sum:
    @staticmethod
    def forward(ctx, a, axes, keepdims):
        ctx["shape"] = a.shape
        return a.sum(axis=axes, keepdims=keepdims)

    @staticmethod
    def backward(ctx, g, axes, keepdims):
        shape = ctx["shape"]
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, int(np.prod(in_shapes[0]))


class Mean:
    @staticmethod
    def forward(ctx, a, axes, keepdims):
        ctx["shape"] = a.shape
        return a.mean(axis=axes, keepdims=keepdims)

    @staticmethod
    def backward(ctx, g, axes, keepdims):
        shape = ctx["shape"]
        if axes is None:
            n = int(np.prod(shape))
        else:
            n = int(np.prod([shape[i] for i in axes]))
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, shape).copy(),)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, int(np.prod(in_shapes[0]))


class Reshape:
    @staticmethod
    def forward(ctx, a, shape):
        ctx["shape"] = a.shape
        return a.reshape(shape)

    @staticmethod
    def backward(ctx, g, shape):
        return (g.reshape(ctx["shape"]),)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, 0


class Transpose:
    @staticmethod
    def forward(ctx, a, axes):
        return np.ascontiguousarray(a.transpose(axes))

    @staticmethod
    def backward(ctx, g, axes):
        inv = np.argsort(axes)
        return (np.ascontiguousarray(g.transpose(inv)),)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, 0


class Concat:
    @staticmethod
    def forward(ctx, *arrays, axis):
        ctx["sizes"] = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    @staticmethod
    def backward(ctx, g, axis):
        splits = np.cumsum(ctx["sizes"])[:-1]
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, 0


class Slice:
    @staticmethod
    def forward(ctx, a, axis, start, stop):
        ctx["shape"] = a.shape
        key = [slice(None)] * a.ndim
        key[axis] = slice(start, stop)
        return np.ascontiguousarray(a[tuple(key)])

    @staticmethod
    def backward(ctx, g, axis, start, stop):
        out = np.zeros(ctx["shape"], dtype=g.dtype)
        key = [slice(None)] * out.ndim
        key[axis] = slice(start, stop)
        out[tuple(key)] = g
        return (out,)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, 0


class BroadcastTo:
    @staticmethod
    def forward(ctx, a, shape):
        ctx["shape"] = a.shape
        return np.broadcast_to(a, shape).copy()

    @staticmethod
    def backward(ctx, g, shape):
        return (_unbroadcast(g, ctx["shape"]),)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, 0


class Gather:
    """Row lookup out = table[ids]; ids is metadata, not differentiated."""

    @staticmethod
    def forward(ctx, table, ids):
        ctx["v"] = table.shape[0]
        return table[ids]

    @staticmethod
    def backward(ctx, g, ids):
        d = g.shape[-1]
        out = np.zeros((ctx["v"], d), dtype=g.dtype)
        np.add.at(out, np.asarray(ids).reshape(-1), g.reshape(-1, d))
        return (out,)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, 0


class Relu:
    @staticmethod
    def forward(ctx, a):
        ctx["mask"] = a > 0
        return np.maximum(a, 0.0)

    @staticmethod
    def backward(ctx, g):
        return (g * ctx["mask"],)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, int(np.prod(out_shape))


class Gelu:
    """Exact erf form: 0.5 x (1 + erf(x/sqrt(2)))."""

    @staticmethod
    def forward(ctx, a):
        ctx["a"] = a
        return 0.5 * a * (1.0 + erf(a * _INV_SQRT2))

    @staticmethod
    def backward(ctx, g):
        a = ctx["a"]
        d = 0.5 * (1.0 + erf(a * _INV_SQRT2)) + a * np.exp(-0.5 * a * a) * _INV_SQRT2PI
        return (g * d,)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, int(np.prod(out_shape))


class Tanh:
    @staticmethod
    def forward(ctx, a):
        y = np.tanh(a)
        ctx["y"] = y
        return y

    @staticmethod
    def backward(ctx, g):
        y = ctx["y"]
        return (g * (1.0 - y * y),)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, int(np.prod(out_shape))


class Sigmoid:
    @staticmethod
    def forward(ctx, a):
        y = 1.0 / (1.0 + np.exp(-a))
        ctx["y"] = y
        return y

    @staticmethod
    def backward(ctx, g):
        y = ctx["y"]
        return (g * y * (1.0 - y),)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, int(np.prod(out_shape))


class Exp:
    @staticmethod
    def forward(ctx, a):
        y = np.exp(a)
        ctx["y"] = y
        return y

    @staticmethod
    def backward(ctx, g):
        return (g * ctx["y"],)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, int(np.prod(out_shape))


class Log:
    @staticmethod
    def forward(ctx, a):
        ctx["a"] = a
        return np.log(a)

    @staticmethod
    def backward(ctx, g):
        return (g / ctx["a"],)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, int(np.prod(out_shape))


class Softmax:
    """Max-subtracted softmax along the last axis; 5 FLOPs/element."""

    @staticmethod
    def forward(ctx, a):
        y = np.exp(a - a.max(axis=-1, keepdims=True))
        y /= y.sum(axis=-1, keepdims=True)
        ctx["y"] = y
        return y

    @staticmethod
    def backward(ctx, g):
        y = ctx["y"]
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, 5 * int(np.prod(out_shape))


class LogSoftmax:
    """Max-subtracted log-softmax along the last axis; 5 FLOPs/element."""

    @staticmethod
    def forward(ctx, a):
        shifted = a - a.max(axis=-1, keepdims=True)
        y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        ctx["y"] = y
        return y

    @staticmethod
    def backward(ctx, g):
        y = ctx["y"]
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, 5 * int(np.prod(out_shape))


class LayerNormalize:
    """Normalize the last axis to mean 0 / variance 1 (pre-affine);
    6 FLOPs/element. The affine transform is applied by the layer."""

    @staticmethod
    def forward(ctx, a, eps):
        mu = a.mean(axis=-1, keepdims=True)
        xc = a - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        y = xc * inv
        ctx["y"], ctx["inv"] = y, inv
        return y

    @staticmethod
    def backward(ctx, g, eps):
        y, inv = ctx["y"], ctx["inv"]
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gym),)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, 6 * int(np.prod(out_shape))


class MaxPool2x2:
    """2x2/stride-2 max pooling over H, W of (B, T, H, W, C);
    3 compare FLOPs per output element. Ties route to the first element."""

    @staticmethod
    def forward(ctx, a):
        b, t, h, w, c = a.shape
        if h % 2 or w % 2:
            raise DimensionError(f"maxpool_spatial requires even H and W, got {h}x{w}")
        win = a.reshape(b, t, h // 2, 2, w // 2, 2, c)
        win = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 6, 3, 5)).reshape(
            b, t, h // 2, w // 2, c, 4)
        am = win.argmax(axis=-1)
        ctx["am"], ctx["shape"] = am, a.shape
        return np.take_along_axis(win, am[..., None], axis=-1)[..., 0]

    @staticmethod
    def backward(ctx, g):
        am, (b, t, h, w, c) = ctx["am"], ctx["shape"]
        win = np.zeros((b, t, h // 2, w // 2, c, 4), dtype=g.dtype)
        np.put_along_axis(win, am[..., None], g[..., None], axis=-1)
        win = win.reshape(b, t, h // 2, w // 2, c, 2, 2)
        return (np.ascontiguousarray(win.transpose(0, 1, 2, 5, 3, 6, 4)).reshape(b, t, h, w, c),)

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        return 0, 3 * int(np.prod(out_shape))


def _pad_axis(a: np.ndarray, axis: int, before: int, after: int) -> np.ndarray:
    pads = [(0, 0)] * a.ndim
    pads[axis] = (before, after)
    return np.pad(a, pads)


class ConvSpatial:
    """[1, kh, kw] convolution over (B, T, H, W, Cin) with zero same-padding,
    stride 1. Kernel layout (kh, kw, Cin, Cout). Executed as kh*kw shifted
    GEMMs to avoid materializing an im2col buffer."""

    @staticmethod
    def forward(ctx, x, k):
        b, t, h, w, cin = x.shape
        kh, kw, kcin, cout = k.shape
        if cin != kcin:
            raise DimensionError(f"conv_spatial channel mismatch: input {cin}, kernel {kcin}")
        ctx["x"], ctx["k"] = x, k
        ph, pw_ = (kh - 1) // 2, (kw - 1) // 2
        xp = _pad_axis(_pad_axis(x, 2, ph, kh - 1 - ph), 3, pw_, kw - 1 - pw_)
        out = np.zeros((b, t, h, w, cout), dtype=x.dtype)
        flat = out.reshape(-1, cout)
        for dy in range(kh):
            for dx in range(kw):
                sl = xp[:, :, dy:dy + h, dx:dx + w, :].reshape(-1, cin)
                flat += sl @ k[dy, dx]
        return out

    @staticmethod
    def backward(ctx, g):
        x, k = ctx["x"], ctx["k"]
        b, t, h, w, cin = x.shape
        kh, kw, _, cout = k.shape
        ph, pw_ = (kh - 1) // 2, (kw - 1) // 2
        xp = _pad_axis(_pad_axis(x, 2, ph, kh - 1 - ph), 3, pw_, kw - 1 - pw_)
        gf = g.reshape(-1, cout)
        dk = np.zeros_like(k)
        dxp = np.zeros_like(xp)
        for dy in range(kh):
            for dx in range(kw):
                sl = xp[:, :, dy:dy + h, dx:dx + w, :].reshape(-1, cin)
                dk[dy, dx] = sl.T @ gf
                dxp[:, :, dy:dy + h, dx:dx + w, :] += (gf @ k[dy, dx].T).reshape(b, t, h, w, cin)
        dx = dxp[:, :, ph:ph + h, pw_:pw_ + w, :]
        return np.ascontiguousarray(dx), dk

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        kh, kw, cin, cout = in_shapes[1]
        return int(np.prod(out_shape[:-1])) * kh * kw * cin * cout, 0


class ConvTemporal:
    """[kt, 1, 1] convolution along T of (B, T, H, W, Cin), stride 1, with
    edge-replicated same-padding (a constant clip stays constant in time,
    matching the tubelet-window boundary rule). Kernel layout (kt, Cin, Cout)."""

    @staticmethod
    def forward(ctx, x, k):
        b, t, h, w, cin = x.shape
        kt, kcin, cout = k.shape
        if cin != kcin:
            raise DimensionError(f"conv_temporal channel mismatch: input {cin}, kernel {kcin}")
        ctx["x"], ctx["k"] = x, k
        pt = (kt - 1) // 2
        xp = np.pad(x, [(0, 0), (pt, kt - 1 - pt), (0, 0), (0, 0), (0, 0)], mode="edge")
        out = np.zeros((b, t, h, w, cout), dtype=x.dtype)
        flat = out.reshape(-1, cout)
        for dt in range(kt):
            sl = xp[:, dt:dt + t, :, :, :].reshape(-1, cin)
            flat += sl @ k[dt]
        return out

    @staticmethod
    def backward(ctx, g):
        x, k = ctx["x"], ctx["k"]
        b, t, h, w, cin = x.shape
        kt, _, cout = k.shape
        pt = (kt - 1) // 2
        xp = np.pad(x, [(0, 0), (pt, kt - 1 - pt), (0, 0), (0, 0), (0, 0)], mode="edge")
        gf = g.reshape(-1, cout)
        dk = np.zeros_like(k)
        dxp = np.zeros_like(xp)
        for dt in range(kt):
            sl = xp[:, dt:dt + t, :, :, :].reshape(-1, cin)
            dk[dt] = sl.T @ gf
            dxp[:, dt:dt + t, :, :, :] += (gf @ k[dt].T).reshape(b, t, h, w, cin)
        dx = dxp[:, pt:pt + t, :, :, :].copy()
        # replicated edges fold their gradient back into the boundary frames
        dx[:, 0] += dxp[:, :pt].sum(axis=1)
        dx[:, t - 1] += dxp[:, pt + t:].sum(axis=1)
        return dx, dk

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        kt, cin, cout = in_shapes[1]
        return int(np.prod(out_shape[:-1])) * kt * cin * cout, 0


class LstmActivation:
    """Fused 4-gate LSTM cell activation. Input: pre-activation gates
    (B, 4H) in (i, f, g, o) order plus previous cell state (B, H). Output:
    concatenated [h'; c'] of shape (B, 2H). 9 FLOPs per hidden unit."""

    @staticmethod
    def forward(ctx, gates, c_prev):
        hdim = c_prev.shape[-1]
        if gates.shape[-1] != 4 * hdim:
            raise DimensionError(f"lstm gates last dim {gates.shape[-1]} != 4*{hdim}")
        i = 1.0 / (1.0 + np.exp(-gates[:, :hdim]))
        f = 1.0 / (1.0 + np.exp(-gates[:, hdim:2 * hdim]))
        g = np.tanh(gates[:, 2 * hdim:3 * hdim])
        o = 1.0 / (1.0 + np.exp(-gates[:, 3 * hdim:]))
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        ctx.update(i=i, f=f, g=g, o=o, c_prev=c_prev, tc=tc)
        return np.concatenate([h, c], axis=-1)

    @staticmethod
    def backward(ctx, grad):
        i, f, g, o = ctx["i"], ctx["f"], ctx["g"], ctx["o"]
        c_prev, tc = ctx["c_prev"], ctx["tc"]
        hdim = c_prev.shape[-1]
        dh, dc_out = grad[:, :hdim], grad[:, hdim:]
        do = dh * tc
        dc = dc_out + dh * o * (1.0 - tc * tc)
        df = dc * c_prev
        dc_prev = dc * f
        di = dc * g
        dg = dc * i
        dgates = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)],
            axis=-1)
        return dgates, dc_prev

    @staticmethod
    def cost(out_shape, in_shapes, meta):
        hdim = in_shapes[1][-1]
        batch = int(np.prod(in_shapes[1][:-1]))
        return 0, 9 * batch * hdim


# ---------------------------------------------------------------------------
# functional wrappers
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    return _apply(MatMul, (a, b))


def add(a: Tensor, b: Tensor) -> Tensor:
    return _apply(Add, (a, b))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _apply(Sub, (a, b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _apply(Mul, (a, b))


def neg(a: Tensor) -> Tensor:
    return _apply(Neg, (a,))


def scale(a: Tensor, c: float) -> Tensor:
    return _apply(Scale, (a,), c=c)


def tsum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    if isinstance(axes, int):
        axes = (axes,)
    return _apply(Sum, (a,), axes=axes, keepdims=keepdims)


def tmean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    if isinstance(axes, int):
        axes = (axes,)
    return _apply(Mean, (a,), axes=axes, keepdims=keepdims)


def reshape(a: Tensor, shape) -> Tensor:
    return _apply(Reshape, (a,), shape=tuple(shape))


def transpose(a: Tensor, axes) -> Tensor:
    return _apply(Transpose, (a,), axes=tuple(axes))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    return _apply(Concat, tuple(tensors), axis=axis)


def tslice(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    return _apply(Slice, (a,), axis=axis, start=start, stop=stop)


def broadcast_to(a: Tensor, shape) -> Tensor:
    return _apply(BroadcastTo, (a,), shape=tuple(shape))


def gather(table: Tensor, ids: np.ndarray) -> Tensor:
    return _apply(Gather, (table,), ids=np.asarray(ids, dtype=np.int64))


def relu(a: Tensor) -> Tensor:
    return _apply(Relu, (a,))


def gelu(a: Tensor) -> Tensor:
    return _apply(Gelu, (a,))


def tanh(a: Tensor) -> Tensor:
    return _apply(Tanh, (a,))


def sigmoid(a: Tensor) -> Tensor:
    return _apply(Sigmoid, (a,))


def exp(a: Tensor) -> Tensor:
    return _apply(Exp, (a,))


def log(a: Tensor) -> Tensor:
    return _apply(Log, (a,))


def softmax(a: Tensor) -> Tensor:
    if a.shape[-1] == 0:
        raise DimensionError("softmax over an empty feature axis")
    return _apply(Softmax, (a,))


def log_softmax(a: Tensor) -> Tensor:
    if a.shape[-1] == 0:
        raise DimensionError("log_softmax over an empty feature axis")
    return _apply(LogSoftmax, (a,))


def layer_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    if a.shape[-1] == 0:
        raise DimensionError("layer_norm over an empty feature axis")
    return _apply(LayerNormalize, (a,), eps=eps)


def maxpool_spatial(a: Tensor) -> Tensor:
    return _apply(MaxPool2x2, (a,))


def conv_spatial(x: Tensor, k: Tensor) -> Tensor:
    return _apply(ConvSpatial, (x, k))


def conv_temporal(x: Tensor, k: Tensor) -> Tensor:
    return _apply(ConvTemporal, (x, k))


def lstm_activation(gates: Tensor, c_prev: Tensor) -> Tensor:
    return _apply(LstmActivation, (gates, c_prev))
