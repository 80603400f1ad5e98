"""Dense tensors with reverse-mode differentiation.

Every value flowing through the models is a :class:`Tensor`: a numpy array
plus an optional gradient accumulator.  Images and feature maps use the
``(batch, channel, height, width)`` layout; reductions and the attention
matmuls also produce lower- or higher-rank intermediates, which are allowed.

Operations record themselves on the fly.  ``Tensor.backward`` replays the
record in exact reverse execution order (ordered by a global sequence number)
and releases it afterwards, so a forward record supports one backward pass.
"""

from __future__ import annotations

import contextlib
import itertools
import struct
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

_counter = itertools.count()
_grad_enabled = True
_default_dtype: type = np.float32


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def precision(bits: int):
    """Temporarily switch the dtype new tensors are created with (32 or 64)."""
    global _default_dtype
    if bits not in (32, 64):
        raise ValueError(f"precision must be 32 or 64 bits, got {bits}")
    prev = _default_dtype
    _default_dtype = np.float64 if bits == 64 else np.float32
    try:
        yield
    finally:
        _default_dtype = prev


def default_dtype():
    return _default_dtype


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "_released")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype or _default_dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_counter)
        self._released = False

    # -- construction helpers ------------------------------------------------
    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward = None
        out._seq = next(_counter)
        out._released = False
        return out

    @staticmethod
    def zeros(shape, requires_grad=False) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    @staticmethod
    def ones(shape, requires_grad=False) -> "Tensor":
        return Tensor(np.ones(shape), requires_grad=requires_grad)

    # -- basic properties ------------------------------------------------------
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
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- differentiation -------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if self._released:
            raise RuntimeError("graph already consumed by a previous backward pass")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)

        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            if node._released:
                raise RuntimeError("graph already consumed by a previous backward pass")
            seen.add(id(node))
            nodes.append(node)
            stack.extend(p for p in node._parents if p.requires_grad)
        nodes.sort(key=lambda t: t._seq, reverse=True)

        pending = {id(self): grad}
        for node in nodes:
            g = pending.pop(id(node), None)
            if node._backward is None:
                if g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    pending[key] = pg if key not in pending else pending[key] + pg
            node._parents = ()
            node._backward = None
            node._released = True

    # -- operators -------------------------------------------------------------
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

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


TensorLike = Tensor | np.ndarray | float | int


def as_tensor(x: TensorLike) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor._wrap(np.asarray(data))
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic ------------------------------------------------------

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward)


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * out / b.data, b.shape)
        return ga, gb

    return _result(out, (a, b), backward)


def square(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    return _result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def abs_(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    return _result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def sqrt(x: TensorLike) -> Tensor:
    """Square root; the derivative at exactly 0 is taken as 0 instead of inf."""
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0),)

    return _result(out, (x,), backward)


def power(x: TensorLike, exponent: float) -> Tensor:
    x = as_tensor(x)
    if exponent == 1:
        return x
    out = x.data ** exponent
    return _result(out, (x,), lambda g: (g * exponent * x.data ** (exponent - 1),))


def exp(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


def leaky_relu_raw(x: TensorLike, slope: float) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data).astype(x.dtype, copy=False)
    return _result(out, (x,), lambda g: (np.where(pos, g, slope * g),))


def clip(x: TensorLike, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; subgradient is 1 strictly inside, 0 at or beyond the bounds."""
    x = as_tensor(x)
    out = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)
    return _result(out, (x,), lambda g: (np.where(inside, g, 0.0).astype(g.dtype, copy=False),))


# -- reductions ------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(out), (x,), backward)


def mean(x: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _result(np.asarray(out), (x,), backward)


# -- shape manipulation ----------------------------------------------------------

def reshape(x: TensorLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: TensorLike, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    inverse = np.argsort(axes)
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def concat_channels(tensors: Sequence[TensorLike]) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(ref) or t.shape[:1] + t.shape[2:] != ref[:1] + ref[2:]:
            raise ValueError(f"concat_channels: incompatible shapes {ref} and {t.shape}")
    bounds = np.cumsum([0] + [t.shape[1] for t in ts])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return _result(np.concatenate([t.data for t in ts], axis=1), ts, backward)


def slice_channels(x: TensorLike, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if not 0 <= start < stop <= x.shape[1]:
        raise ValueError(f"slice_channels: [{start}, {stop}) out of range for shape {x.shape}")

    def backward(g):
        full = np.zeros_like(x.data, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _result(x.data[:, start:stop], (x,), backward)


def slice_batch(x: TensorLike, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if not 0 <= start < stop <= x.shape[0]:
        raise ValueError(f"slice_batch: [{start}, {stop}) out of range for shape {x.shape}")

    def backward(g):
        full = np.zeros_like(x.data, dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return _result(x.data[start:stop], (x,), backward)


def concat_batch(tensors: Sequence[TensorLike]) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    for t in ts[1:]:
        if t.shape[1:] != ts[0].shape[1:]:
            raise ValueError(f"concat_batch: incompatible shapes {ts[0].shape} and {t.shape}")
    bounds = np.cumsum([0] + [t.shape[0] for t in ts])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return _result(np.concatenate([t.data for t in ts], axis=0), ts, backward)


# -- linear algebra --------------------------------------------------------------

def matmul_batched(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul_batched: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(np.matmul(a.data, b.data), (a, b), backward)


def softmax_rows(x: TensorLike) -> Tensor:
    """Softmax over the last axis."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), backward)


# -- convolution and friends -------------------------------------------------------

def _pad_pairs(padding) -> tuple[tuple[int, int], tuple[int, int]]:
    if isinstance(padding, (int, np.integer)):
        p = int(padding)
        return (p, p), (p, p)
    padding = tuple(padding)
    if len(padding) == 2 and all(isinstance(p, (int, np.integer)) for p in padding):
        return (int(padding[0]),) * 2, (int(padding[1]),) * 2
    (t, b), (l, r) = padding
    return (int(t), int(b)), (int(l), int(r))


def _reflect_index(n: int, before: int, after: int) -> np.ndarray:
    idx = np.arange(-before, n + after)
    idx = np.abs(idx)
    return np.where(idx >= n, 2 * (n - 1) - idx, idx)


def reflection_pad(x: TensorLike, padding) -> Tensor:
    """Mirror the border across the edge row/column without repeating it."""
    x = as_tensor(x)
    (t, b), (l, r) = _pad_pairs(padding)
    h, w = x.shape[-2:]
    if max(t, b) >= h or max(l, r) >= w or min(t, b, l, r) < 0:
        raise ValueError(f"reflection_pad: padding {(t, b, l, r)} must be smaller than extent {(h, w)}")
    if t == b == l == r == 0:
        return x
    rows = _reflect_index(h, t, b)
    cols = _reflect_index(w, l, r)
    out = x.data[..., rows, :][..., cols]

    def backward(g):
        # fold the mirrored border rows/columns back onto their sources
        gr = g[..., t:t + h, :].copy()
        for i in range(t):
            gr[..., rows[i], :] += g[..., i, :]
        for i in range(b):
            gr[..., rows[t + h + i], :] += g[..., t + h + i, :]
        gx = gr[..., l:l + w].copy()
        for j in range(l):
            gx[..., cols[j]] += gr[..., j]
        for j in range(r):
            gx[..., cols[l + w + j]] += gr[..., l + w + j]
        return (gx,)

    return _result(out, (x,), backward)


def zero_pad(x: TensorLike, padding) -> Tensor:
    x = as_tensor(x)
    (t, b), (l, r) = _pad_pairs(padding)
    if t == b == l == r == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(t, b), (l, r)]
    out = np.pad(x.data, widths)
    h, w = x.shape[-2:]
    return _result(out, (x,), lambda g: (g[..., t:t + h, l:l + w],))


def conv2d(
    x: TensorLike,
    weight: TensorLike,
    bias: TensorLike | None = None,
    stride: int = 1,
    padding=0,
    padding_mode: str = "zeros",
) -> Tensor:
    """2-D cross-correlation of ``x[n,ci,h,w]`` with ``weight[co,ci,kh,kw]``.

    ``padding`` is an int, ``(ph, pw)`` or ``((top, bottom), (left, right))``;
    ``padding_mode`` selects zero or reflection fill.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv2d: input shape {x.shape} does not match weight shape {weight.shape}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if padding_mode == "reflect":
        x = reflection_pad(x, padding)
    elif padding_mode == "zeros":
        x = zero_pad(x, padding)
    else:
        raise ValueError(f"conv2d: unknown padding_mode {padding_mode!r}")

    n, ci, h, w = x.shape
    co, _, kh, kw = weight.shape
    if kh > h or kw > w:
        raise ValueError(f"conv2d: kernel {weight.shape} larger than padded input {x.shape}")
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1

    if kh == kw == 1:
        cols = x.data[:, :, ::stride, ::stride][:, :, :ho, :wo]
        out = np.tensordot(weight.data[:, :, 0, 0], cols, axes=([1], [1])).transpose(1, 0, 2, 3)
    else:
        windows = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(2, 3))
        # im2col: rows are output pixels, columns are (ci, kh, kw)
        cols = np.ascontiguousarray(windows[:, :, ::stride, ::stride][:, :, :ho, :wo].transpose(0, 2, 3, 1, 4, 5))
        cols = cols.reshape(n * ho * wo, ci * kh * kw)
        out = (cols @ weight.data.reshape(co, -1).T).reshape(n, ho, wo, co).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    parents: list[Tensor] = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (co,):
            raise ValueError(f"conv2d: bias shape {bias.shape} does not match {co} output channels")
        out += bias.data.reshape(1, co, 1, 1)
        parents.append(bias)

    def backward(g):
        gx = gw = None
        if kh == kw == 1:
            if weight.requires_grad:
                gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
            if x.requires_grad:
                gx = np.zeros_like(x.data, dtype=g.dtype)
                gx[:, :, ::stride, ::stride][:, :, :ho, :wo] = np.tensordot(
                    weight.data[:, :, 0, 0], g, axes=([0], [1])
                ).transpose(1, 0, 2, 3)
        else:
            gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, co)
            if weight.requires_grad:
                gw = (gm.T @ cols).reshape(weight.shape)
            if x.requires_grad:
                # col2im in (ci, n, h, w) layout keeps each scattered slice contiguous
                dcols = (weight.data.reshape(co, -1).T @ gm.T).reshape(ci, kh, kw, n, ho, wo)
                gxt = np.zeros((ci, n, h, w), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxt[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += dcols[:, i, j]
                gx = gxt.transpose(1, 0, 2, 3)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _result(out, parents, backward)


def depth_to_space(x: TensorLike, r: int) -> Tensor:
    """Move channel blocks of size r*r into r x r spatial neighbourhoods.

    ``out[n, c, h*r + i, w*r + j] = x[n, c*r*r + i*r + j, h, w]``
    """
    x = as_tensor(x)
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise ValueError(f"depth_to_space: channels {c} not divisible by r^2={r * r}")
    co = c // (r * r)
    out = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)

    def backward(g):
        return (g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w),)

    return _result(out, (x,), backward)


def space_to_depth(x: TensorLike, r: int) -> Tensor:
    x = as_tensor(x)
    n, c, h, w = x.shape
    if r < 1 or h % r or w % r:
        raise ValueError(f"space_to_depth: spatial size {(h, w)} not divisible by r={r}")
    ho, wo = h // r, w // r
    out = x.data.reshape(n, c, ho, r, wo, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, ho, wo)

    def backward(g):
        return (g.reshape(n, c, r, r, ho, wo).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h, w),)

    return _result(out, (x,), backward)


# -- gradient oracle -------------------------------------------------------------

def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients of scalar ``f()`` against central differences.

    Returns the max over checked entries of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    With ``max_entries`` only a random subset of entries per parameter is
    perturbed (useful for whole models).  Run under ``precision(64)``.
    """
    for p in params:
        p.grad = None
    out = f()
    if out.size != 1:
        raise ValueError(f"finite_diff_check: f must be scalar-valued, got shape {out.shape}")
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("finite_diff_check: f returned a non-finite value")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        ga_flat = ga.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                fp = f().item()
            flat[i] = orig - eps
            with no_grad():
                fm = f().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("finite_diff_check: f returned a non-finite value")
            numeric = (fp - fm) / (2 * eps)
            a = float(ga_flat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# -- serialization ---------------------------------------------------------------

VTEN_MAGIC = b"VTEN"


def write_vten(path: str | Path, array: np.ndarray) -> None:
    """Write ``array`` as magic + 4 little-endian u32 dims + raw f32 data.

    Arrays with fewer than four dims are left-padded with ones.
    """
    arr = np.asarray(array)
    if arr.ndim > 4:
        raise ValueError(f"VTEN holds at most 4 dims, got shape {arr.shape}")
    shape = (1,) * (4 - arr.ndim) + arr.shape
    with open(path, "wb") as fh:
        fh.write(VTEN_MAGIC)
        fh.write(struct.pack("<4I", *shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_vten(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != VTEN_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {VTEN_MAGIC!r}")
    if len(raw) < 20:
        raise ValueError(f"{path}: truncated header")
    shape = struct.unpack("<4I", raw[4:20])
    count = int(np.prod(shape))
    if len(raw) != 20 + 4 * count:
        raise ValueError(f"{path}: payload has {len(raw) - 20} bytes, expected {4 * count}")
    return np.frombuffer(raw, dtype="<f4", offset=20).reshape(shape).astype(np.float32)
