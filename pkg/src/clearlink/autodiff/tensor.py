"""Reverse-mode autodiff on numpy arrays.

A Tensor wraps an ndarray plus an optional gradient buffer and a closure
that knows how to push its output gradient to its parents. backward() walks
the graph in iterative reverse topological order (no recursion, so deep
per-frame chains like LSTMs are safe). Only tensors created with
requires_grad=True, or descended from one, participate; everything else
stays out of the tape and never receives a grad buffer.

Gradients accumulate (+=) so shared subexpressions are handled naturally.
Every op output can be NaN-checked (on by default); a non-finite value
raises immediately, naming the op that produced it.

All ops broadcast like numpy; the generic unbroadcast folds gradient axes
back down. Double precision is the default; float32 buffers are preserved
if passed in explicitly (training speed mode).
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "grad_enabled",
    "set_nan_check",
    "concat",
    "matmul",
    "softmax",
    "prelu",
    "irfft_frames",
    "overlap_add",
]

_GRAD_ENABLED = True
_NAN_CHECK = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, FD probes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def set_nan_check(enabled: bool) -> None:
    """Toggle per-op non-finite detection (on by default)."""
    global _NAN_CHECK
    _NAN_CHECK = bool(enabled)


def _check_finite(data: np.ndarray, op: str) -> None:
    if _NAN_CHECK and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            raise TypeError("cannot wrap a Tensor in a Tensor")
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            arr = data
        else:
            arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    # -- construction of op results ---------------------------------------

    @staticmethod
    def _result(data, parents, backward, op: str) -> "Tensor":
        _check_finite(data, op)
        requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=requires)
        if requires:
            out._parents = tuple(parents)
            out._backward = backward
            out.name = op
        return out

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(np.asarray(g), self.data.shape)
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    # -- basic introspection -----------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}{tag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # -- backward ------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode pass from a scalar root."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        if not self.requires_grad:
            raise ValueError("loss does not require grad; nothing to do")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ------------------------------------------------------------

    @staticmethod
    def _wrap(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=np.float64))

    def __add__(self, other):
        a, b = self, Tensor._wrap(other)

        def bwd(g):
            a._accumulate(g)
            b._accumulate(g)

        return Tensor._result(a.data + b.data, (a, b), bwd, "add")

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, Tensor._wrap(other)

        def bwd(g):
            a._accumulate(g)
            b._accumulate(-g)

        return Tensor._result(a.data - b.data, (a, b), bwd, "sub")

    def __rsub__(self, other):
        return Tensor._wrap(other) - self

    def __neg__(self):
        a = self

        def bwd(g):
            a._accumulate(-g)

        return Tensor._result(-a.data, (a,), bwd, "neg")

    def __mul__(self, other):
        a, b = self, Tensor._wrap(other)

        def bwd(g):
            a._accumulate(g * b.data)
            b._accumulate(g * a.data)

        return Tensor._result(a.data * b.data, (a, b), bwd, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, Tensor._wrap(other)

        def bwd(g):
            a._accumulate(g / b.data)
            b._accumulate(-g * a.data / np.square(b.data))

        return Tensor._result(a.data / b.data, (a, b), bwd, "div")

    def __rtruediv__(self, other):
        return Tensor._wrap(other) / self

    def __pow__(self, p):
        if not np.isscalar(p):
            raise TypeError("only scalar exponents are supported")
        a = self

        def bwd(g):
            a._accumulate(g * p * np.power(a.data, p - 1))

        return Tensor._result(np.power(a.data, p), (a,), bwd, "pow")

    def __matmul__(self, other):
        return matmul(self, Tensor._wrap(other))

    def __rmatmul__(self, other):
        return matmul(Tensor._wrap(other), self)

    # -- shape ops ----------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.data.shape

        def bwd(g):
            a._accumulate(g.reshape(old))

        return Tensor._result(a.data.reshape(shape), (a,), bwd, "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        axes = axes or tuple(reversed(range(a.ndim)))
        inv = np.argsort(axes)

        def bwd(g):
            a._accumulate(g.transpose(inv))

        return Tensor._result(a.data.transpose(axes), (a,), bwd, "transpose")

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        a = self

        def bwd(g):
            if a.requires_grad:
                gx = np.zeros_like(a.data)
                np.add.at(gx, idx, g)
                a._accumulate(gx)

        return Tensor._result(a.data[idx], (a,), bwd, "slice")

    def pad(self, pad_width, value: float = 0.0):
        """Constant padding; pad_width follows np.pad convention."""
        a = self
        pw = tuple((int(lo), int(hi)) for lo, hi in pad_width)

        def bwd(g):
            crop = tuple(slice(lo, g.shape[i] - hi if hi else None) for i, (lo, hi) in enumerate(pw))
            a._accumulate(g[crop])

        return Tensor._result(
            np.pad(a.data, pw, mode="constant", constant_values=value), (a,), bwd, "pad"
        )

    # -- reductions -------------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def bwd(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape))

        return Tensor._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.data.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def cumsum(self, axis: int):
        a = self

        def bwd(g):
            a._accumulate(np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis))

        return Tensor._result(np.cumsum(a.data, axis=axis), (a,), bwd, "cumsum")

    # -- elementwise nonlinearities ------------------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def bwd(g):
            a._accumulate(g * out_data)

        return Tensor._result(out_data, (a,), bwd, "exp")

    def log(self):
        a = self

        def bwd(g):
            a._accumulate(g / a.data)

        return Tensor._result(np.log(a.data), (a,), bwd, "log")

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)

        def bwd(g):
            a._accumulate(g * 0.5 / out_data)

        return Tensor._result(out_data, (a,), bwd, "sqrt")

    def square(self):
        a = self

        def bwd(g):
            a._accumulate(g * 2.0 * a.data)

        return Tensor._result(np.square(a.data), (a,), bwd, "square")

    def tanh(self):
        a = self
        out_data = np.tanh(a.data)

        def bwd(g):
            a._accumulate(g * (1.0 - np.square(out_data)))

        return Tensor._result(out_data, (a,), bwd, "tanh")

    def sigmoid(self):
        a = self
        out_data = 1.0 / (1.0 + np.exp(-np.clip(a.data, -60.0, 60.0)))

        def bwd(g):
            a._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._result(out_data, (a,), bwd, "sigmoid")


# -- free-function ops -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy stacking semantics (batched when >2-D)."""
    if a.data.shape[-1] != b.data.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")

    def bwd(g):
        if b.ndim == 1:
            a._accumulate(np.outer(g, b.data) if a.ndim == 2 else g * b.data)
            b._accumulate(_unbroadcast(a.data.swapaxes(-1, -2) @ g if a.ndim > 1 else a.data * g, b.data.shape))
            return
        a._accumulate(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape))
        b._accumulate(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape))

    return Tensor._result(a.data @ b.data, (a, b), bwd, "matmul")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return Tensor._result(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd, "concat"
    )


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; the max shift is constant (detached)."""
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=axis, keepdims=True)

    def bwd(g):
        inner = np.sum(g * s, axis=axis, keepdims=True)
        x._accumulate(s * (g - inner))

    return Tensor._result(s, (x,), bwd, "softmax")


def prelu(x: Tensor, alpha: Tensor, channel_axis: int = 0) -> Tensor:
    """max(x, 0) + alpha * min(x, 0), alpha per channel.

    Subgradient convention at exactly 0: the negative-side slope (alpha).
    """
    if alpha.ndim != 1 or alpha.data.shape[0] != x.data.shape[channel_axis]:
        raise ValueError(
            f"prelu: alpha shape {alpha.data.shape} does not match "
            f"channel axis {channel_axis} of input {x.data.shape}"
        )
    bshape = [1] * x.ndim
    bshape[channel_axis] = -1
    a_b = alpha.data.reshape(bshape)
    pos = x.data > 0.0
    out_data = np.where(pos, x.data, a_b * x.data)

    def bwd(g):
        x._accumulate(g * np.where(pos, 1.0, a_b))
        if alpha.requires_grad:
            ga = g * x.data * (~pos)
            axes = tuple(i for i in range(x.ndim) if i != channel_axis)
            alpha._accumulate(ga.sum(axis=axes))

    return Tensor._result(out_data, (x, alpha), bwd, "prelu")


def irfft_frames(re: Tensor, im: Tensor, n: int) -> Tensor:
    """Inverse real FFT of half-spectrum frames: (T, n//2+1) x2 -> (T, n).

    The imaginary parts of bin 0 and the Nyquist bin do not influence the
    output (the half-complex format has no slot for them), so their
    gradients are exactly zero.
    """
    bins = n // 2 + 1
    if re.data.shape != im.data.shape or re.data.shape[-1] != bins:
        raise ValueError(
            f"irfft_frames: expected (*, {bins}) re/im, got {re.data.shape} and {im.data.shape}"
        )
    out_data = np.fft.irfft(re.data + 1j * im.data, n=n, axis=-1)
    scale = np.full(bins, 2.0)
    scale[0] = 1.0
    if n % 2 == 0:
        scale[-1] = 1.0

    def bwd(g):
        spec = np.fft.rfft(g, n=n, axis=-1)
        re._accumulate(scale / n * np.real(spec))
        g_im = scale / n * np.imag(spec)
        g_im[..., 0] = 0.0
        if n % 2 == 0:
            g_im[..., -1] = 0.0
        im._accumulate(g_im)

    return Tensor._result(out_data, (re, im), bwd, "irfft_frames")


def overlap_add(frames: Tensor, hop: int) -> Tensor:
    """Sum (T, L) frames at stride hop into a ((T-1)*hop + L,) signal."""
    t_frames, frame_len = frames.data.shape
    total = (t_frames - 1) * hop + frame_len
    out_data = np.zeros(total, dtype=frames.data.dtype)
    for t in range(t_frames):
        out_data[t * hop : t * hop + frame_len] += frames.data[t]

    def bwd(g):
        windows = np.lib.stride_tricks.sliding_window_view(g, frame_len)[:: hop]
        frames._accumulate(windows[:t_frames].copy())

    return Tensor._result(out_data, (frames,), bwd, "overlap_add")
