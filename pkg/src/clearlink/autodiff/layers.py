"""Parameterized layers over the Tensor engine.

Exactly the vocabulary the enhancement networks need: strided 2-D convs
(with a causal-time option), transposed 2-D convs, causal 1-D convs, linear,
LSTM, per-frame and cumulative layer norm, PReLU, and multi-head attention.
Convolutions run as im2col matmuls; their backward scatters per kernel
offset, so the kernel loops stay tiny (<= 9 iterations).

Initialization: Kaiming-uniform for conv/linear weights, orthogonal blocks
for LSTM recurrent weights, 0.25 for PReLU slopes. Every module takes an
np.random.Generator so model construction is seed-deterministic.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, concat, matmul, prelu, softmax

__all__ = [
    "Module",
    "Linear",
    "Conv2d",
    "ConvTranspose2d",
    "CausalConv1d",
    "LSTM",
    "FrameLayerNorm",
    "CumulativeLayerNorm",
    "PReLULayer",
    "MultiHeadAttention",
    "conv2d",
    "conv_transpose2d",
]

LN_EPS = 1e-5


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


# ---------------------------------------------------------------------------
# conv primitives
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b, stride, pad, name: str = "conv2d") -> Tensor:
    """x (C_in, T, F) * w (C_out, C_in, kt, kf) -> (C_out, T_out, F_out).

    pad is ((t_left, t_right), (f_left, f_right)); a causal time axis uses
    (kt-1, 0).
    """
    st, sf = stride
    (tl, tr), (fl, fr) = pad
    if x.ndim != 3 or w.ndim != 4:
        raise ValueError(f"{name}: expected 3-D input and 4-D weight")
    c_in, t_in, f_in = x.shape
    c_out, c_in_w, kt, kf = w.shape
    if c_in != c_in_w:
        raise ValueError(f"{name}: input has {c_in} channels, weight expects {c_in_w}")
    t_out = (t_in + tl + tr - kt) // st + 1
    f_out = (f_in + fl + fr - kf) // sf + 1
    if t_out <= 0 or f_out <= 0:
        raise ValueError(
            f"{name}: output collapses to {t_out}x{f_out} "
            f"for input {t_in}x{f_in}, kernel {kt}x{kf}, stride {st}x{sf}"
        )
    xp = np.pad(x.data, ((0, 0), (tl, tr), (fl, fr)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kt, kf), axis=(1, 2))
    win = win[:, ::st, ::sf]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(t_out * f_out, c_in * kt * kf)
    wmat = w.data.reshape(c_out, -1)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out_data = out.T.reshape(c_out, t_out, f_out)

    def bwd(g):
        g2 = g.reshape(c_out, -1).T
        if w.requires_grad:
            w._accumulate((g2.T @ cols).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(t_out, f_out, c_in, kt, kf)
            gxp = np.zeros_like(xp)
            for dt in range(kt):
                for df in range(kf):
                    gxp[:, dt : dt + st * t_out : st, df : df + sf * f_out : sf] += (
                        gcols[:, :, :, dt, df].transpose(2, 0, 1)
                    )
            x._accumulate(gxp[:, tl : tl + t_in, fl : fl + f_in])

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._result(out_data, parents, bwd, name)


def conv_transpose2d(
    x: Tensor, w: Tensor, b, stride, output_padding=(0, 0), name: str = "conv_transpose2d"
) -> Tensor:
    """x (C_in, T, F) * w (C_in, C_out, kt, kf) -> upsampled (C_out, T_out, F_out).

    T_out = (T-1)*st + kt + opad_t (same for frequency); output_padding rows
    and columns stay zero, resolving the stride ambiguity of the inverse map.
    """
    st, sf = stride
    ot, of = output_padding
    c_in, t_in, f_in = x.shape
    c_in_w, c_out, kt, kf = w.shape
    if c_in != c_in_w:
        raise ValueError(f"{name}: input has {c_in} channels, weight expects {c_in_w}")
    if ot >= st and st > 1 or of >= sf and sf > 1:
        raise ValueError(f"{name}: output_padding must be < stride")
    t_out = (t_in - 1) * st + kt + ot
    f_out = (f_in - 1) * sf + kf + of
    xmat = x.data.reshape(c_in, -1).T
    wmat = w.data.reshape(c_in, -1)
    colsr = (xmat @ wmat).reshape(t_in, f_in, c_out, kt, kf)
    out_data = np.zeros((c_out, t_out, f_out), dtype=x.data.dtype)
    for dt in range(kt):
        for df in range(kf):
            out_data[:, dt : dt + st * t_in : st, df : df + sf * f_in : sf] += (
                colsr[:, :, :, dt, df].transpose(2, 0, 1)
            )
    if b is not None:
        out_data = out_data + b.data[:, None, None]

    def bwd(g):
        gcols = np.empty((t_in, f_in, c_out, kt, kf), dtype=g.dtype)
        for dt in range(kt):
            for df in range(kf):
                gcols[:, :, :, dt, df] = g[
                    :, dt : dt + st * t_in : st, df : df + sf * f_in : sf
                ].transpose(1, 2, 0)
        gcols2 = gcols.reshape(t_in * f_in, -1)
        if w.requires_grad:
            w._accumulate((xmat.T @ gcols2).reshape(w.shape))
        if x.requires_grad:
            x._accumulate((gcols2 @ wmat.T).T.reshape(x.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(1, 2)))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._result(out_data, parents, bwd, name)


# ---------------------------------------------------------------------------
# modules
# ---------------------------------------------------------------------------

class Module:
    """Parameter container with recursive naming, shared by all layers."""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{prefix}{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{key}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{prefix}{key}.{i}"] = item
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ValueError(
                f"state dict mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, param in params.items():
            arr = np.asarray(state[name])
            if arr.shape != param.data.shape:
                raise ValueError(
                    f"{name}: checkpoint shape {arr.shape} != model shape {param.data.shape}"
                )
            param.data = arr.astype(param.data.dtype).copy()


class Linear(Module):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        bias: bool = True,
        zero_init: bool = False,
    ):
        if zero_init:
            w = np.zeros((in_features, out_features))
        else:
            w = _kaiming_uniform(rng, (in_features, out_features), in_features)
        self.weight = Tensor(w, requires_grad=True, name="linear.weight")
        self.bias = None
        if bias:
            b = np.zeros(out_features) if zero_init else rng.uniform(
                -1.0 / np.sqrt(in_features), 1.0 / np.sqrt(in_features), out_features
            )
            self.bias = Tensor(b, requires_grad=True, name="linear.bias")

    def forward(self, x: Tensor) -> Tensor:
        out = matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: tuple[int, int],
        stride: tuple[int, int],
        rng: np.random.Generator,
        pad: tuple[tuple[int, int], tuple[int, int]] = ((0, 0), (0, 0)),
        causal_time: bool = False,
        name: str = "conv2d",
    ):
        kt, kf = kernel
        if causal_time:
            pad = ((kt - 1, 0), pad[1])
        self.kernel = kernel
        self.stride = stride
        self.padding = pad
        self._name = name
        fan_in = in_channels * kt * kf
        self.weight = Tensor(
            _kaiming_uniform(rng, (out_channels, in_channels, kt, kf), fan_in),
            requires_grad=True,
        )
        self.bias = Tensor(
            rng.uniform(-1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), out_channels),
            requires_grad=True,
        )

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self._name)


class ConvTranspose2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: tuple[int, int],
        stride: tuple[int, int],
        rng: np.random.Generator,
        output_padding: tuple[int, int] = (0, 0),
        name: str = "conv_transpose2d",
    ):
        kt, kf = kernel
        self.stride = stride
        self.output_padding = output_padding
        self._name = name
        fan_in = in_channels * kt * kf
        self.weight = Tensor(
            _kaiming_uniform(rng, (in_channels, out_channels, kt, kf), fan_in),
            requires_grad=True,
        )
        self.bias = Tensor(
            rng.uniform(-1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), out_channels),
            requires_grad=True,
        )

    def forward(self, x: Tensor) -> Tensor:
        return conv_transpose2d(
            x, self.weight, self.bias, self.stride, self.output_padding, self._name
        )


class CausalConv1d(Module):
    """1-D convolution over (C, T) with left-only padding: no lookahead."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        name: str = "causal_conv1d",
    ):
        self._conv = Conv2d(
            in_channels,
            out_channels,
            kernel=(kernel, 1),
            stride=(1, 1),
            rng=rng,
            causal_time=True,
            name=name,
        )

    def forward(self, x: Tensor) -> Tensor:
        c, t = x.shape
        out = self._conv(x.reshape(c, t, 1))
        return out.reshape(out.shape[0], t)


class LSTM(Module):
    """Unidirectional LSTM over (T, input) -> (T, hidden), zero initial state.

    The input projection for all T steps runs as a single matmul; only the
    recurrence itself is a per-frame loop. Strictly causal by construction.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.hidden_size = hidden_size
        self.w_ih = Tensor(
            _kaiming_uniform(rng, (input_size, 4 * hidden_size), input_size),
            requires_grad=True,
        )
        blocks = [_orthogonal(rng, hidden_size) for _ in range(4)]
        self.w_hh = Tensor(np.concatenate(blocks, axis=1), requires_grad=True)
        bias = np.zeros(4 * hidden_size)
        bias[hidden_size : 2 * hidden_size] = 1.0  # forget gate bias
        self.bias = Tensor(bias, requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        t_len = x.shape[0]
        h_size = self.hidden_size
        xw = matmul(x, self.w_ih) + self.bias
        h = Tensor(np.zeros((1, h_size), dtype=x.data.dtype))
        c = Tensor(np.zeros((1, h_size), dtype=x.data.dtype))
        rows = []
        for t in range(t_len):
            gates = xw[t : t + 1] + matmul(h, self.w_hh)
            i = gates[:, 0:h_size].sigmoid()
            f = gates[:, h_size : 2 * h_size].sigmoid()
            g = gates[:, 2 * h_size : 3 * h_size].tanh()
            o = gates[:, 3 * h_size : 4 * h_size].sigmoid()
            c = f * c + i * g
            h = o * c.tanh()
            rows.append(h)
        return concat(rows, axis=0)


class FrameLayerNorm(Module):
    """Normalize each time frame over (channels, frequency), affine per (C, F)."""

    def __init__(self, channels: int, freq: int):
        self.gamma = Tensor(np.ones((channels, 1, freq)), requires_grad=True)
        self.beta = Tensor(np.zeros((channels, 1, freq)), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=(0, 2), keepdims=True)
        centered = x - mu
        var = centered.square().mean(axis=(0, 2), keepdims=True)
        return centered / (var + LN_EPS).sqrt() * self.gamma + self.beta


class CumulativeLayerNorm(Module):
    """Causal layer norm over (C, T): statistics use channels and frames <= t."""

    def __init__(self, channels: int):
        self.channels = channels
        self.gamma = Tensor(np.ones((channels, 1)), requires_grad=True)
        self.beta = Tensor(np.zeros((channels, 1)), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        c, t = x.shape
        counts = self.channels * np.arange(1, t + 1, dtype=x.data.dtype)
        cum_sum = x.sum(axis=0).cumsum(0)
        cum_sq = x.square().sum(axis=0).cumsum(0)
        mean = cum_sum * (1.0 / counts)
        var = cum_sq * (1.0 / counts) - mean.square()
        return (x - mean) / (var + LN_EPS).sqrt() * self.gamma + self.beta


class PReLULayer(Module):
    def __init__(self, channels: int, init: float = 0.25):
        self.alpha = Tensor(np.full(channels, init), requires_grad=True)

    def forward(self, x: Tensor, channel_axis: int = 0) -> Tensor:
        return prelu(x, self.alpha, channel_axis=channel_axis)


class MultiHeadAttention(Module):
    """Scaled dot-product attention of per-frame queries over a token bank."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator,
                 value_bias: bool = True):
        if d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(d_model, d_model, rng)
        # no key bias: softmax shifts rows uniformly, so it would be a dead parameter
        self.wk = Linear(d_model, d_model, rng, bias=False)
        # value_bias=False keeps the value path purely linear, so a zero token
        # bank maps to an exactly zero output
        self.wv = Linear(d_model, d_model, rng, bias=value_bias)
        self.wo = Linear(d_model, d_model, rng, bias=value_bias)

    def _split(self, x: Tensor, length: int) -> Tensor:
        return x.reshape(length, self.n_heads, self.d_head).transpose(1, 0, 2)

    def forward(self, query: Tensor, kv: Tensor) -> tuple[Tensor, Tensor]:
        """query (T, d), kv (M, d) -> output (T, d), attention (heads, T, M)."""
        t_len, m_len = query.shape[0], kv.shape[0]
        q = self._split(self.wq(query), t_len)
        k = self._split(self.wk(kv), m_len)
        v = self._split(self.wv(kv), m_len)
        scores = matmul(q, k.transpose(0, 2, 1)) * (1.0 / np.sqrt(self.d_head))
        attn = softmax(scores, axis=-1)
        ctx = matmul(attn, v).transpose(1, 0, 2).reshape(t_len, self.n_heads * self.d_head)
        return self.wo(ctx), attn
