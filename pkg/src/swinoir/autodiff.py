"""Dense tensors with tape-based reverse-mode differentiation.

Operations are recorded only while a :class:`Tape` is active and at least one
operand has ``requires_grad`` set. Outside a tape every op is a plain numpy
evaluation, which is what inference uses.

    >>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (x * x).sum()
    >>> tape.backward(loss)
    >>> x.grad
    array([2., 4., 6.])
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import erf

from .errors import ContractError, ShapeError

ArrayLike = Union[np.ndarray, float, int, Sequence]
Vjp = Callable[[np.ndarray], tuple]

_TAPES: list["Tape"] = []


class Tensor:
    """N-dimensional float array with an optional gradient slot.

    Tensors produced by ops are never mutated afterwards. Leaf tensors that
    hold trainable parameters are updated in place by the optimizer.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


# ---------------------------------------------------------------------------
# recording


@dataclass
class Entry:
    op: str
    inputs: tuple
    output: Tensor
    vjp: Vjp


class Tape:
    """Ordered record of the differentiable ops executed while it is active.

    Entries are appended in execution order, so the record is topologically
    sorted by construction. A tape belongs to one training step.
    """

    def __init__(self) -> None:
        self.entries: list[Entry] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.entries)

    def ops(self) -> list[str]:
        return [e.op for e in self.entries]

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


ComputationRecord = Tape


def _active_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


def _emit(op: str, data: np.ndarray, inputs: tuple, vjp: Vjp) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        tape.entries.append(Entry(op, inputs, out, vjp))
    return out


def backward(record: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every recorded leaf.

    Gradients add onto whatever is already stored; call :func:`zero_grad`
    between steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(e.output) for e in record.entries}
    if id(loss) not in produced:
        raise ContractError("loss was not produced by this record")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for entry in reversed(record.entries):
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        for t, gi in zip(entry.inputs, entry.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = t
    for key, leaf in leaves.items():
        g = grads[key].astype(leaf.dtype, copy=False)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    dtype = a.dtype if isinstance(a, Tensor) else b.dtype if isinstance(b, Tensor) else None
    return as_tensor(a, dtype), as_tensor(b, dtype)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _emit(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _emit(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _emit(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return _emit(
        "div",
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def tabs(x: Tensor) -> Tensor:
    return _emit("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _emit("sqrt", out, (x,), lambda g: (g * 0.5 / out,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _emit("exp", out, (x,), lambda g: (g * out,))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the erf-based normal CDF."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _emit("gelu", x.data * cdf, (x,), vjp)


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit("sum", np.asarray(out), (x,), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    count = x.size // max(np.asarray(out).size, 1)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _emit("mean", np.asarray(out), (x,), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    return _emit("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]} on axis {axis}") from exc
    return _emit("concat", out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def getitem(x: Tensor, index) -> Tensor:
    def vjp(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _emit("getitem", x.data[index], (x,), vjp)


def take(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of ``table`` by an integer index array of any shape."""
    index = np.asarray(index)

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, index, g)
        return (full,)

    return _emit("take", table.data[index], (table,), vjp)


# ---------------------------------------------------------------------------
# layer math


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``[..., p, q] @ [..., q, r]``."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions do not broadcast: {a.shape} @ {b.shape}") from exc

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit("matmul", out, (a, b), vjp)


def softmax_lastdim(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", out, (x,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm params {gamma.shape}/{beta.shape} do not match channels {x.shape[-1]}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    rstd = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * rstd
    out = xhat * gamma.data + beta.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gamma.data
        dx = rstd * (
            dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit("layer_norm", out, (x, gamma, beta), vjp)


def _im2col(xpad: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    n, c = xpad.shape[0], xpad.shape[-1]
    cols = np.empty((n, h, w, k * k, c), dtype=xpad.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i * k + j, :] = xpad[:, i : i + h, j : j + w, :]
    return cols.reshape(n, h, w, k * k * c)


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Same-size, stride-1, zero-padded cross-correlation.

    ``x`` is ``[H, W, Cin]`` or ``[N, H, W, Cin]``; ``kernel`` is
    ``[k, k, Cin, Cout]`` with odd ``k``.
    """
    k, k2, cin, cout = kernel.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {kernel.shape}")
    if x.shape[-1] != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias {bias.shape} does not match {cout} output channels")
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    n, h, w, _ = xd.shape
    p = (k - 1) // 2
    xpad = np.pad(xd, ((0, 0), (p, p), (p, p), (0, 0))) if p else xd
    cols = _im2col(xpad, k, h, w)
    kmat = kernel.data.reshape(k * k * cin, cout)
    out = cols @ kmat
    if bias is not None:
        out = out + bias.data

    def vjp(g):
        gb = g if batched else g[None]
        gk = (cols.reshape(-1, k * k * cin).T @ gb.reshape(-1, cout)).reshape(kernel.shape)
        dcols = (gb @ kmat.T).reshape(n, h, w, k * k, cin)
        dpad = np.zeros_like(xpad)
        for i in range(k):
            for j in range(k):
                dpad[:, i : i + h, j : j + w, :] += dcols[:, :, :, i * k + j, :]
        dx = dpad[:, p : p + h, p : p + w, :] if p else dpad
        grads = (dx if batched else dx[0], gk)
        if bias is not None:
            grads += (gb.sum(axis=(0, 1, 2)),)
        return grads

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _emit("conv2d", out if batched else out[0], inputs, vjp)


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    *lead, h, w, cr = a.shape
    c = cr // (r * r)
    a = a.reshape(*lead, h, w, c, r, r)
    nl = len(lead)
    axes = tuple(range(nl)) + tuple(nl + i for i in (0, 3, 1, 4, 2))
    return np.transpose(a, axes).reshape(*lead, h * r, w * r, c)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    *lead, hr, wr, c = a.shape
    h, w = hr // r, wr // r
    a = a.reshape(*lead, h, r, w, r, c)
    nl = len(lead)
    axes = tuple(range(nl)) + tuple(nl + i for i in (0, 2, 4, 1, 3))
    return np.transpose(a, axes).reshape(*lead, h, w, c * r * r)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange ``[..., H, W, C*r*r]`` into ``[..., H*r, W*r, C]``.

    ``out[y*r + dy, x*r + dx, c] == in[y, x, c*r*r + dy*r + dx]``.
    """
    if r < 1:
        raise ShapeError(f"upscale factor must be positive, got {r}")
    if x.shape[-1] % (r * r):
        raise ShapeError(f"channels {x.shape[-1]} not divisible by r^2 = {r * r}")
    return _emit("pixel_shuffle", _shuffle(x.data, r), (x,), lambda g: (_unshuffle(g, r),))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    if r < 1:
        raise ShapeError(f"downscale factor must be positive, got {r}")
    if x.shape[-3] % r or x.shape[-2] % r:
        raise ShapeError(f"spatial size {x.shape[-3:-1]} not divisible by {r}")
    return _emit("pixel_unshuffle", _unshuffle(x.data, r), (x,), lambda g: (_shuffle(g, r),))


# ---------------------------------------------------------------------------
# gradient checking


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-5, floor: float = 1e-6) -> float:
    """Largest elementwise relative error between analytic and central-difference gradients.

    ``fn`` maps ``inputs`` to a scalar tensor. Every input with
    ``requires_grad`` is checked. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    checked = [t for t in inputs if t.requires_grad]
    zero_grad(checked)
    with Tape() as tape:
        loss = fn(*inputs)
    tape.backward(loss)
    worst = 0.0
    for t in checked:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        numeric = numeric_gradient(fn, inputs, t, step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    zero_grad(checked)
    return worst


def numeric_gradient(fn: Callable[..., Tensor], inputs: Sequence[Tensor], wrt: Tensor, step: float = 1e-5) -> np.ndarray:
    flat = wrt.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        plus = float(fn(*inputs).data)
        flat[i] = orig - step
        minus = float(fn(*inputs).data)
        flat[i] = orig
        out[i] = (plus - minus) / (2.0 * step)
    return out.reshape(wrt.shape)


# ---------------------------------------------------------------------------
# debug dumps


def dump_tensor(t: Union[Tensor, np.ndarray], path) -> None:
    """Write a tensor as a ``.npy`` file (header with dtype and shape, then row-major values)."""
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    with open(Path(path), "wb") as fh:
        np.save(fh, np.ascontiguousarray(data), allow_pickle=False)


def load_tensor(path) -> Tensor:
    return Tensor(np.load(Path(path), allow_pickle=False))
