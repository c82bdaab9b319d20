"""Dense double-precision tensors with a reverse-mode compute tape.

Every differentiable primitive in this module records itself on the active
:class:`Tape` (if any) together with a closure that maps the output gradient
to input gradients.  ``Tape.backward`` replays those records in exact reverse
order of recording.

Typical use::

    with Tape() as tape:
        loss = (x @ w).sum()
    tape.backward(loss)
    w.grad  # populated
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_node")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._node = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive operations.

    Tapes are thread-local: a tape entered on one thread never sees operations
    executed on another, so independent scenes may be differentiated
    concurrently as long as each worker owns its tape and leaf gradients are
    merged explicitly afterwards.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaves: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        node = _Node(out, inputs, backward)
        out._node = node
        for t in inputs:
            if t.requires_grad and t._node is None:
                self.leaves[id(t)] = t
        self.nodes.append(node)

    def backward(self, loss: Tensor, grad: np.ndarray | None = None) -> None:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every recorded leaf."""
        if grad is None:
            if loss.size != 1:
                raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
            grad = np.ones_like(loss.data)
        grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t._node is None:
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
                else:
                    key = id(t)
                    grads[key] = gi if key not in grads else grads[key] + gi
        for leaf in self.leaves.values():
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape = _active_tape()
        if tape is not None:
            tape.record(out, tuple(inputs), backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


class track_kinks:
    """Record the on/off pattern of every ReLU evaluated inside the block.

    Finite differences are only valid where no ReLU changes state between the
    perturbed evaluations; comparing the recorded patterns detects that.
    """

    def __enter__(self) -> list[bytes]:
        self.log: list[bytes] = []
        if not hasattr(_local, "kinks"):
            _local.kinks = []
        _local.kinks.append(self.log)
        return self.log

    def __exit__(self, *exc) -> None:
        _local.kinks.pop()


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    logs = getattr(_local, "kinks", None)
    if logs:
        logs[-1].append(np.packbits(mask).tobytes())
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split branches keep exp() from overflowing for large |x|
    z = np.exp(-np.abs(x.data))
    s = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data)
    return _make(e, (x,), lambda g: (g * e,))


def square(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    return _make(d * d, (x,), lambda g: (2.0 * g * d,))


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (x,), back)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([shape[a] for a in axes]))
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _make(out, (x,), back)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def index_select(x, index) -> Tensor:
    """Basic or fancy indexing; backward scatters with accumulation."""
    x = as_tensor(x)
    shape = x.shape
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, index, g)
        return (full,)

    return _make(x.data[index], (x,), back)


def take_rows(x, rows) -> Tensor:
    """Gather rows along axis 0 (row lookup); gradient scatters into the rows used."""
    x = as_tensor(x)
    rows = np.asarray(rows, dtype=np.int64)
    shape = x.shape

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, rows, g)
        return (full,)

    return _make(x.data[rows], (x,), back)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of an empty list")
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(
            d != r for i, (d, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise DimensionError(
                f"concat: shapes {ref} and {t.shape} differ off the join axis {axis}"
            )
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, back)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product; leading dimensions broadcast like ``numpy.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), back)


def outer(u, v) -> Tensor:
    """Outer product of two vectors (or batched rows): out[..., a, b] = u[..., a] * v[..., b]."""
    u, v = as_tensor(u), as_tensor(v)
    if u.shape[:-1] != v.shape[:-1]:
        raise DimensionError(f"outer: leading shapes differ, {u.shape} vs {v.shape}")
    return matmul(reshape(u, u.shape + (1,)), reshape(v, v.shape[:-1] + (1, v.shape[-1])))


# ---------------------------------------------------------------------------
# normalisation and probabilities


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), back)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _make(out, (x,), lambda g: (g - s * g.sum(axis=axis, keepdims=True),))


def layer_norm(x, gain=None, bias=None, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalise slices along ``axis`` to zero mean / unit variance, then apply gain and bias."""
    if eps <= 0:
        raise ValueError("layer_norm requires eps > 0")
    x = as_tensor(x)
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[axis]

    inputs = [x]
    gd = bd = None
    out = xhat
    if gain is not None:
        gain = as_tensor(gain)
        gd = gain.data
        out = out * gd
        inputs.append(gain)
    if bias is not None:
        bias = as_tensor(bias)
        bd = bias.data
        out = out + bd
        inputs.append(bias)

    def back(g):
        gx = g * gd if gd is not None else g
        dx = inv / n * (
            n * gx - gx.sum(axis=axis, keepdims=True) - xhat * (gx * xhat).sum(axis=axis, keepdims=True)
        )
        grads = [dx]
        if gd is not None:
            grads.append(_unbroadcast(g * xhat, gd.shape))
        if bd is not None:
            grads.append(_unbroadcast(g, bd.shape))
        return tuple(grads)

    return _make(out, inputs, back)


def onehot(index: int, n: int) -> Tensor:
    if not 0 <= index < n:
        raise IndexError(f"onehot index {index} outside [0, {n})")
    v = np.zeros(n, dtype=DTYPE)
    v[index] = 1.0
    return Tensor(v)


def onehot_rows(indices, n: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((indices.size, n), dtype=DTYPE)
    out[np.arange(indices.size), indices] = 1.0
    return out


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under row-wise softmax."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    logp = log_softmax(logits, axis=-1)
    picked = index_select(logp, (np.arange(targets.size), targets))
    return neg(mean(picked))


def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: shapes {pred.shape} and {target.shape} differ")
    return mean(square(sub(pred, target)))


# ---------------------------------------------------------------------------
# convolution and pooling


def conv2d(x, kernels, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip).

    ``x`` is ``c_in x h x w`` or batched ``b x c_in x h x w``; ``kernels`` is
    ``c_out x c_in x kh x kw``.  Output spatial size is
    ``floor((h + 2*padding - kh) / stride) + 1``.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(f"conv2d: bad ranks, input {x.shape}, kernels {kernels.shape}")
    b, cin, h, w = xd.shape
    cout, kcin, kh, kw = kernels.shape
    if kcin != cin:
        raise DimensionError(f"conv2d: input has {cin} channels, kernels {kernels.shape} expect {kcin}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # cols: (b*ho*wo, cin*kh*kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * ho * wo, cin * kh * kw)
    wmat = kernels.data.reshape(cout, -1)
    out = (cols @ wmat.T).reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)

    inputs = [x, kernels]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")
        out = out + bias.data[None, :, None, None]
        inputs.append(bias)
    out = np.ascontiguousarray(out)
    if unbatched:
        out = out[0]
    x_needs = x.requires_grad

    def back(g):
        g4 = g[None] if unbatched else g
        gmat = g4.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (gmat.T @ cols).reshape(kernels.shape)
        gx = None
        if x_needs:
            gcols = (gmat @ wmat).reshape(b, ho, wo, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            gcols = np.ascontiguousarray(gcols)  # (b, cin, kh, kw, ho, wo)
            gxp = np.zeros((b, cin, hp, wp), dtype=DTYPE)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += gcols[:, :, i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
            gx = np.ascontiguousarray(gx[0] if unbatched else gx)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make(out, inputs, back)


def mean_pool(x) -> Tensor:
    """Global average over the two trailing (spatial) axes."""
    return mean(x, axis=(-2, -1))


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
