"""The three generator-side networks and the two score discriminators.

Far-end denoising is a convolutional recurrent network over the real and
imaginary spectrogram channels: a strided conv encoder, a recurrent
bottleneck, and two transposed-conv decoders (with encoder skip connections)
that predict the real and imaginary parts of a complex ratio mask. Near-end
listening enhancement is a causal conv1d stack that maps the denoised
log-magnitude, the near-end noise PSD feature, and an optional noise
embedding to per-bin amplification factors alpha = exp(4*tanh(u)), applied
in the magnitude domain under a global equal-power constraint. The noise
token module encodes the noisy magnitude with strided convs and an LSTM,
then attends over a bank of trainable token vectors to produce a per-frame
noise embedding. Both discriminators map a two-channel spectrogram pair to
sigmoid scores, one per modeled metric.

Every generator-side module is strictly causal frame by frame; the single
exception is the utterance-level equal-power scalar of the LE stage, which
is applied after the causal gain field.

All forward graphs run over the in-package autodiff tensors; the module
functions at the bottom wrap them for spectrogram/waveform inference.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    CausalConv1d,
    Conv2d,
    ConvTranspose2d,
    CumulativeLayerNorm,
    FrameLayerNorm,
    Linear,
    LSTM,
    Module,
    MultiHeadAttention,
    PReLULayer,
    Tensor,
    concat,
    irfft_frames,
    load_checkpoint,
    no_grad,
    overlap_add,
    save_checkpoint,
)
from .dsp import ComplexSpectrogram, StftConfig, Waveform, istft, stft

__all__ = [
    "CrnConfig",
    "CrnDenoiser",
    "Discriminator",
    "DiscriminatorConfig",
    "LeGenConfig",
    "LeGenerator",
    "ModelBundle",
    "NoiseTokenConfig",
    "NoiseTokenEncoder",
    "apply_crm",
    "apply_le_gains",
    "crn_forward",
    "discriminator_forward",
    "istft_tensor",
    "le_forward",
    "load_bundle",
    "make_bundle",
    "noise_token_forward",
    "save_bundle",
]

# log compression offset for magnitude features
LOG_EPS = 1e-7

# keeps sqrt differentiable at silent bins when magnitudes are rebuilt
# from real/imaginary parts
_MAG_FLOOR_SQ = 1e-14

ALPHA_SPAN = 4.0  # alpha = exp(4 * tanh(u)) spans [e^-4, e^4]


def _safe_mag(re: Tensor, im: Tensor) -> Tensor:
    """sqrt(re^2 + im^2), floored only where the power underflows.

    The floor mask is a data-dependent constant (not differentiated), so
    ordinary bins keep their exact magnitude and gradient while silent bins
    avoid the infinite sqrt slope at zero.
    """
    power = re.square() + im.square()
    floor = np.where(power.data < _MAG_FLOOR_SQ, _MAG_FLOOR_SQ, 0.0)
    return (power + floor).sqrt()


def _per_frame(embedding: np.ndarray, frames: int) -> np.ndarray:
    """Broadcast a single embedding vector to one row per frame."""
    emb = np.asarray(embedding, dtype=np.float64)
    if emb.ndim == 1:
        emb = np.broadcast_to(emb, (frames, emb.shape[0])).copy()
    return emb


def _freq_step(f: int, kf: int, sf: int, pad: tuple[int, int]) -> int:
    return (f + pad[0] + pad[1] - kf) // sf + 1


@dataclass(frozen=True)
class CrnConfig:
    """Denoiser geometry. Defaults are the full-size profile.

    `decoder_channels` lists each decoder stage's input width after the skip
    concatenation, so every entry must be twice the mirrored encoder width.
    """

    bins: int = 257
    encoder_channels: tuple[int, ...] = (16, 32, 48, 64, 96, 128)
    decoder_channels: tuple[int, ...] = (256, 192, 128, 96, 64, 32)
    lstm_layers: int = 2
    lstm_nodes: int = 512
    kernel: tuple[int, int] = (1, 3)
    stride: tuple[int, int] = (1, 2)
    embedding_dim: int = 0
    scale_factor: int = 1

    def __post_init__(self):
        if len(self.encoder_channels) != len(self.decoder_channels):
            raise ValueError("encoder and decoder depth must match")
        if any(c < 1 for c in self.encoder_channels):
            raise ValueError("channel widths must be positive")
        mirrored = self.encoder_channels[::-1]
        for i, (dec, enc) in enumerate(zip(self.decoder_channels, mirrored)):
            if dec != 2 * enc:
                raise ValueError(
                    f"decoder stage {i} width {dec} must be twice the skip "
                    f"width {enc} (the skip concatenation doubles it)"
                )
        if self.lstm_layers < 1 or self.lstm_nodes < 1:
            raise ValueError("lstm_layers and lstm_nodes must be positive")
        if self.embedding_dim < 0:
            raise ValueError("embedding_dim must be >= 0")
        if min(self.freq_ladder()) < 1:
            raise ValueError(f"frequency ladder collapses: {self.freq_ladder()}")

    def freq_ladder(self) -> list[int]:
        """Bin counts through the encoder, input first (257 -> ... -> 3)."""
        _, kf = self.kernel
        _, sf = self.stride
        ladder = [self.bins]
        for _ in self.encoder_channels:
            ladder.append(_freq_step(ladder[-1], kf, sf, (0, 0)))
        return ladder


class CrnDenoiser(Module):
    """Complex-ratio-mask denoiser: conv encoder, LSTM bottleneck, dual decoders."""

    def __init__(self, config: CrnConfig, rng: np.random.Generator):
        self.config = config
        kt, kf = config.kernel
        ladder = config.freq_ladder()
        self.enc_convs: list[Conv2d] = []
        self.enc_norms: list[FrameLayerNorm] = []
        self.enc_acts: list[PReLULayer] = []
        in_ch = 2  # real and imaginary input channels
        for i, out_ch in enumerate(config.encoder_channels):
            self.enc_convs.append(
                Conv2d(
                    in_ch,
                    out_ch,
                    config.kernel,
                    config.stride,
                    rng,
                    causal_time=kt > 1,
                    name=f"enc{i}",
                )
            )
            self.enc_norms.append(FrameLayerNorm(out_ch, ladder[i + 1]))
            self.enc_acts.append(PReLULayer(out_ch))
            in_ch = out_ch

        bott = config.encoder_channels[-1] * ladder[-1]
        self._bott_shape = (config.encoder_channels[-1], ladder[-1])
        self.lstms: list[LSTM] = []
        lstm_in = bott + config.embedding_dim
        for _ in range(config.lstm_layers):
            self.lstms.append(LSTM(lstm_in, config.lstm_nodes, rng))
            lstm_in = config.lstm_nodes
        self.proj = Linear(config.lstm_nodes, bott, rng)

        # matching transposed strides; output padding recovers odd widths
        mirrored = config.encoder_channels[::-1]
        out_chs = list(mirrored[1:]) + [1]
        _, sf = config.stride
        self.dec_real, self.dec_imag = [], []
        self.dec_norms_real, self.dec_norms_imag = [], []
        self.dec_acts_real, self.dec_acts_imag = [], []
        for branch, convs, norms, acts in (
            ("real", self.dec_real, self.dec_norms_real, self.dec_acts_real),
            ("imag", self.dec_imag, self.dec_norms_imag, self.dec_acts_imag),
        ):
            for i, (in_w, out_ch) in enumerate(zip(config.decoder_channels, out_chs)):
                f_in, f_out = ladder[-1 - i], ladder[-2 - i]
                opad_f = f_out - ((f_in - 1) * sf + kf)
                if not 0 <= opad_f < sf:
                    raise ValueError(
                        f"stride {sf} cannot invert {f_in} -> {f_out} bins"
                    )
                convs.append(
                    ConvTranspose2d(
                        in_w,
                        out_ch,
                        config.kernel,
                        config.stride,
                        rng,
                        output_padding=(0, opad_f),
                        name=f"dec_{branch}{i}",
                    )
                )
                if i < len(config.decoder_channels) - 1:
                    norms.append(FrameLayerNorm(out_ch, f_out))
                    acts.append(PReLULayer(out_ch))

    def forward(
        self, x_re: Tensor, x_im: Tensor, embedding: Tensor | None = None
    ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """(T, bins) real/imag spectrogram -> (mask_re, mask_im, s_re, s_im)."""
        cfg = self.config
        t_len, bins = x_re.shape
        if x_im.shape != (t_len, bins) or bins != cfg.bins:
            raise ValueError(
                f"expected matching (T, {cfg.bins}) inputs, got "
                f"{x_re.shape} and {x_im.shape}"
            )
        if cfg.embedding_dim == 0:
            if embedding is not None:
                raise ValueError("model was built without an embedding input")
        else:
            if embedding is None or embedding.shape != (t_len, cfg.embedding_dim):
                raise ValueError(
                    f"expected (T, {cfg.embedding_dim}) embedding, got "
                    f"{None if embedding is None else embedding.shape}"
                )

        h = concat(
            [x_re.reshape(1, t_len, bins), x_im.reshape(1, t_len, bins)], axis=0
        )
        skips = []
        for conv, norm, act in zip(self.enc_convs, self.enc_norms, self.enc_acts):
            h = act(norm(conv(h)))
            skips.append(h)

        c_b, f_b = self._bott_shape
        flat = h.transpose(1, 0, 2).reshape(t_len, c_b * f_b)
        if embedding is not None:
            flat = concat([flat, embedding], axis=1)
        for lstm in self.lstms:
            flat = lstm(flat)
        bott = self.proj(flat).reshape(t_len, c_b, f_b).transpose(1, 0, 2)

        masks = []
        for convs, norms, acts in (
            (self.dec_real, self.dec_norms_real, self.dec_acts_real),
            (self.dec_imag, self.dec_norms_imag, self.dec_acts_imag),
        ):
            h = bott
            last = len(convs) - 1
            for i, conv in enumerate(convs):
                h = concat([h, skips[-1 - i]], axis=0)
                h = conv(h)
                if i < last:
                    h = acts[i](norms[i](h))
            masks.append(h.reshape(t_len, bins))
        mask_re, mask_im = masks

        s_re, s_im = apply_crm(mask_re, mask_im, x_re, x_im)
        return mask_re, mask_im, s_re, s_im


def apply_crm(
    mask_re: Tensor, mask_im: Tensor, x_re: Tensor, x_im: Tensor
) -> tuple[Tensor, Tensor]:
    """Complex ratio mask product (Mr + iMi)(Xr + iXi), in real arithmetic."""
    s_re = mask_re * x_re - mask_im * x_im
    s_im = mask_re * x_im + mask_im * x_re
    return s_re, s_im


@dataclass(frozen=True)
class LeGenConfig:
    """Listening-enhancement generator geometry.

    With `identity_init` the final projection starts at zero, so a fresh
    model emits u = 0 and alpha = 1 everywhere: the enhancer begins as a
    transparent pass-through and training moves it away from identity.
    """

    bins: int = 257
    conv_channels: int = 256
    conv_layers: int = 6
    kernel: int = 5
    embedding_dim: int = 0
    identity_init: bool = True
    scale_factor: int = 1

    def __post_init__(self):
        if self.conv_layers < 1 or self.conv_channels < 1 or self.kernel < 1:
            raise ValueError("conv_layers, conv_channels, kernel must be positive")
        if self.embedding_dim < 0:
            raise ValueError("embedding_dim must be >= 0")


class LeGenerator(Module):
    """Causal conv1d stack mapping features to per-bin amplification factors."""

    def __init__(self, config: LeGenConfig, rng: np.random.Generator):
        self.config = config
        in_ch = 2 * config.bins + config.embedding_dim
        self.convs: list[CausalConv1d] = []
        self.norms: list[CumulativeLayerNorm] = []
        self.acts: list[PReLULayer] = []
        for i in range(config.conv_layers):
            self.convs.append(
                CausalConv1d(
                    in_ch, config.conv_channels, config.kernel, rng, name=f"le{i}"
                )
            )
            self.norms.append(CumulativeLayerNorm(config.conv_channels))
            self.acts.append(PReLULayer(config.conv_channels))
            in_ch = config.conv_channels
        self.fc = Linear(
            config.conv_channels, config.bins, rng, zero_init=config.identity_init
        )

    def forward(
        self, s_mag: Tensor, near_feat: Tensor, embedding: Tensor | None = None
    ) -> tuple[Tensor, Tensor]:
        """(T, bins) magnitude + feature [+ (T, E)] -> (alpha, u), both (T, bins)."""
        cfg = self.config
        t_len, bins = s_mag.shape
        if near_feat.shape != (t_len, bins) or bins != cfg.bins:
            raise ValueError(
                f"expected matching (T, {cfg.bins}) inputs, got "
                f"{s_mag.shape} and {near_feat.shape}"
            )
        feats = [(s_mag + LOG_EPS).log(), near_feat]
        if cfg.embedding_dim == 0:
            if embedding is not None:
                raise ValueError("model was built without an embedding input")
        else:
            if embedding is None or embedding.shape != (t_len, cfg.embedding_dim):
                raise ValueError(
                    f"expected (T, {cfg.embedding_dim}) embedding, got "
                    f"{None if embedding is None else embedding.shape}"
                )
            feats.append(embedding)
        h = concat(feats, axis=1).transpose(1, 0)
        for conv, norm, act in zip(self.convs, self.norms, self.acts):
            h = act(norm(conv(h)))
        u = self.fc(h.transpose(1, 0))
        alpha = (u.tanh() * ALPHA_SPAN).exp()
        return alpha, u


def apply_le_gains(
    alpha: Tensor, s_re: Tensor, s_im: Tensor
) -> tuple[Tensor, Tensor, float, bool]:
    """Magnitude-domain gains with the global equal-power rescale.

    Returns (y_re, y_im, scale, passthrough). The phase is taken from the
    input spectrogram and treated as constant: gradients flow through the
    magnitude path only. A zero-energy input cannot be renormalized, so it
    passes through unchanged (with a warning).
    """
    s_mag = _safe_mag(s_re, s_im)
    energy_in = float(np.sum(np.square(s_re.data)) + np.sum(np.square(s_im.data)))
    if energy_in <= 0.0:
        warnings.warn("zero-energy input: enhancement passes through unchanged")
        return s_re, s_im, 1.0, True
    y_raw = alpha * s_mag
    scale = (s_mag.square().sum() / y_raw.square().sum()).sqrt()
    y_mag = y_raw * scale
    mag_const = np.maximum(np.abs(s_re.data + 1j * s_im.data), 1e-30)
    cos_phase = s_re.data / mag_const
    sin_phase = s_im.data / mag_const
    return y_mag * cos_phase, y_mag * sin_phase, float(scale.data), False


def istft_tensor(re: Tensor, im: Tensor, config: StftConfig, length: int) -> Tensor:
    """Differentiable inverse STFT, numerically identical to the dsp one."""
    frames = re.shape[0]
    segs = irfft_frames(re, im, config.fft_size)
    if config.window_len < config.fft_size:
        segs = segs[:, : config.window_len]
    segs = segs * config.window[None, :]
    total = (frames - 1) * config.hop + config.window_len
    norm = np.zeros(total)
    w2 = np.square(config.window)
    for t in range(frames):
        norm[t * config.hop : t * config.hop + config.window_len] += w2
    sig = overlap_add(segs, config.hop) / np.maximum(norm, 1e-12)
    pad = config.window_len // 2
    if pad + length > total:
        raise ValueError(f"length {length} exceeds the synthesized span")
    return sig[pad : pad + length]


@dataclass(frozen=True)
class NoiseTokenConfig:
    """Noise token encoder geometry."""

    bins: int = 257
    conv_channels: tuple[int, ...] = (32, 32, 64, 64, 128, 128)
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 2)
    freq_pad: tuple[int, int] = (1, 1)
    lstm_nodes: int = 256
    n_tokens: int = 16
    token_dim: int = 256
    n_heads: int = 8
    scale_factor: int = 1

    def __post_init__(self):
        if any(c < 1 for c in self.conv_channels):
            raise ValueError("channel widths must be positive")
        if self.n_tokens < 1:
            raise ValueError("n_tokens must be positive")
        if self.token_dim % self.n_heads != 0:
            raise ValueError("token_dim must be divisible by n_heads")
        if self.lstm_nodes != self.token_dim:
            raise ValueError(
                "the encoded representation is the attention query, so "
                "lstm_nodes must equal token_dim"
            )
        if min(self.freq_ladder()) < 1:
            raise ValueError(f"frequency ladder collapses: {self.freq_ladder()}")

    def freq_ladder(self) -> list[int]:
        _, kf = self.kernel
        _, sf = self.stride
        ladder = [self.bins]
        for _ in self.conv_channels:
            ladder.append(_freq_step(ladder[-1], kf, sf, self.freq_pad))
        return ladder


class NoiseTokenEncoder(Module):
    """Per-frame attention over a trainable token bank, queried by a conv+LSTM
    encoding of the noisy magnitude."""

    def __init__(self, config: NoiseTokenConfig, rng: np.random.Generator):
        self.config = config
        ladder = config.freq_ladder()
        self.convs: list[Conv2d] = []
        self.norms: list[FrameLayerNorm] = []
        self.acts: list[PReLULayer] = []
        in_ch = 1
        for i, out_ch in enumerate(config.conv_channels):
            self.convs.append(
                Conv2d(
                    in_ch,
                    out_ch,
                    config.kernel,
                    config.stride,
                    rng,
                    pad=((0, 0), config.freq_pad),
                    causal_time=True,
                    name=f"nt{i}",
                )
            )
            self.norms.append(FrameLayerNorm(out_ch, ladder[i + 1]))
            self.acts.append(PReLULayer(out_ch))
            in_ch = out_ch
        self.lstm = LSTM(config.conv_channels[-1] * ladder[-1], config.lstm_nodes, rng)
        bound = 1.0 / np.sqrt(config.token_dim)
        self.tokens = Tensor(
            rng.uniform(-bound, bound, (config.n_tokens, config.token_dim)),
            requires_grad=True,
            name="tokens",
        )
        # bias-free value path: zeroed tokens yield an exactly zero embedding,
        # which is what conditioning-off substitutes downstream
        self.attention = MultiHeadAttention(
            config.token_dim, config.n_heads, rng, value_bias=False
        )

    def forward(self, x_mag: Tensor) -> tuple[Tensor, Tensor]:
        """(T, bins) magnitude -> ((T, token_dim) embedding, (heads, T, tokens))."""
        t_len, bins = x_mag.shape
        if bins != self.config.bins:
            raise ValueError(f"expected {self.config.bins} bins, got {bins}")
        h = (x_mag + LOG_EPS).log().reshape(1, t_len, bins)
        for conv, norm, act in zip(self.convs, self.norms, self.acts):
            h = act(norm(conv(h)))
        flat = h.transpose(1, 0, 2).reshape(t_len, h.shape[0] * h.shape[2])
        query = self.lstm(flat)
        return self.attention(query, self.tokens)


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Score discriminator geometry: strided convs, pooled sigmoid head."""

    bins: int = 257
    channels: tuple[int, ...] = (16, 32, 48, 64, 80)
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (2, 2)
    out_dim: int = 1
    scale_factor: int = 1

    def __post_init__(self):
        if any(c < 1 for c in self.channels):
            raise ValueError("channel widths must be positive")
        if self.out_dim < 1:
            raise ValueError("out_dim must be >= 1")


class Discriminator(Module):
    """Maps a (signal, context) spectrogram pair to scores in (0, 1)."""

    def __init__(self, config: DiscriminatorConfig, rng: np.random.Generator):
        self.config = config
        self.convs: list[Conv2d] = []
        self.norms: list[FrameLayerNorm] = []
        self.acts: list[PReLULayer] = []
        in_ch = 2
        f = config.bins
        for i, out_ch in enumerate(config.channels):
            self.convs.append(
                Conv2d(
                    in_ch,
                    out_ch,
                    config.kernel,
                    config.stride,
                    rng,
                    pad=((1, 1), (1, 1)),
                    name=f"disc{i}",
                )
            )
            f = _freq_step(f, config.kernel[1], config.stride[1], (1, 1))
            self.norms.append(FrameLayerNorm(out_ch, f))
            self.acts.append(PReLULayer(out_ch))
            in_ch = out_ch
        self.head = Linear(config.channels[-1], config.out_dim, rng)

    def forward(self, sig_mag: Tensor, ctx_mag: Tensor) -> Tensor:
        """Two (T, bins) magnitudes -> (out_dim,) scores, all strictly in (0, 1)."""
        t_len, bins = sig_mag.shape
        if ctx_mag.shape != (t_len, bins) or bins != self.config.bins:
            raise ValueError(
                f"expected matching (T, {self.config.bins}) magnitudes, got "
                f"{sig_mag.shape} and {ctx_mag.shape}"
            )
        h = concat(
            [
                (sig_mag + LOG_EPS).log().reshape(1, t_len, bins),
                (ctx_mag + LOG_EPS).log().reshape(1, t_len, bins),
            ],
            axis=0,
        )
        for conv, norm, act in zip(self.convs, self.norms, self.acts):
            h = act(norm(conv(h)))
        pooled = h.mean(axis=(1, 2)).reshape(1, h.shape[0])
        return self.head(pooled).sigmoid().reshape(self.config.out_dim)


class ModelBundle(Module):
    """All networks of one system variant, checkpointable as a unit.

    `noise_token` is None for the variant without the token module; the denoiser
    and enhancer are then built without an embedding input, so the two
    variants have distinct parameter sets and checkpoints.
    """

    def __init__(
        self,
        crn: CrnDenoiser,
        le: LeGenerator,
        d_int: Discriminator,
        d_qua: Discriminator,
        noise_token: NoiseTokenEncoder | None = None,
        profile: str = "tiny",
    ):
        self.crn = crn
        self.le = le
        self.d_int = d_int
        self.d_qua = d_qua
        self.noise_token = noise_token
        self.profile = profile

    @property
    def uses_noise_token(self) -> bool:
        return self.noise_token is not None

    def generator_parameters(self) -> dict[str, Tensor]:
        out = self.crn.named_parameters("crn.")
        out.update(self.le.named_parameters("le."))
        if self.noise_token is not None:
            out.update(self.noise_token.named_parameters("noise_token."))
        return out

    def discriminator_parameters(self) -> dict[str, Tensor]:
        out = self.d_int.named_parameters("d_int.")
        out.update(self.d_qua.named_parameters("d_qua."))
        return out


_PROFILE_DIVISORS = {"tiny": 8, "full": 1}


def make_bundle(
    profile: str = "tiny",
    use_noise_token: bool = True,
    k_int: int | None = None,
    k_qua: int | None = None,
    seed: int = 0,
) -> ModelBundle:
    """Build a fresh model set. Profiles: tiny (widths / 8) or full.

    Score head widths default to 1 intelligibility + 2 quality targets on
    tiny, 3 + 3 on full.
    """
    profile = {"paper": "full"}.get(profile, profile)
    if profile not in _PROFILE_DIVISORS:
        raise ValueError(f"unknown profile {profile!r}; expected tiny or full")
    div = _PROFILE_DIVISORS[profile]
    if k_int is None:
        k_int = 1 if profile == "tiny" else 3
    if k_qua is None:
        k_qua = 2 if profile == "tiny" else 3
    rng = np.random.default_rng(seed)

    emb = (256 // div) if use_noise_token else 0
    crn = CrnDenoiser(
        CrnConfig(
            encoder_channels=tuple(c // div for c in (16, 32, 48, 64, 96, 128)),
            decoder_channels=tuple(c // div for c in (256, 192, 128, 96, 64, 32)),
            lstm_nodes=512 // div,
            embedding_dim=emb,
            scale_factor=div,
        ),
        rng,
    )
    le = LeGenerator(
        LeGenConfig(
            conv_channels=256 // div, embedding_dim=emb, scale_factor=div
        ),
        rng,
    )
    noise_token = None
    if use_noise_token:
        noise_token = NoiseTokenEncoder(
            NoiseTokenConfig(
                conv_channels=tuple(c // div for c in (32, 32, 64, 64, 128, 128)),
                lstm_nodes=256 // div,
                token_dim=256 // div,
                scale_factor=div,
            ),
            rng,
        )
    d_cfg = dict(
        channels=tuple(max(1, c // div) for c in (16, 32, 48, 64, 80)),
        scale_factor=div,
    )
    d_int = Discriminator(DiscriminatorConfig(out_dim=k_int, **d_cfg), rng)
    d_qua = Discriminator(DiscriminatorConfig(out_dim=k_qua, **d_cfg), rng)
    return ModelBundle(crn, le, d_int, d_qua, noise_token, profile)


def save_bundle(bundle: ModelBundle, path: str, meta: dict | None = None) -> None:
    """Checkpoint the bundle with the metadata needed to rebuild it blind."""
    info = {
        "profile": bundle.profile,
        "use_noise_token": bundle.uses_noise_token,
        "k_int": bundle.d_int.config.out_dim,
        "k_qua": bundle.d_qua.config.out_dim,
    }
    if meta:
        info.update(meta)
    save_checkpoint(path, bundle.state_dict(), info)


def load_bundle(path: str) -> tuple[ModelBundle, dict]:
    """Rebuild a bundle from a checkpoint written by save_bundle."""
    arrays, meta = load_checkpoint(path)
    for key in ("profile", "use_noise_token", "k_int", "k_qua"):
        if key not in meta:
            raise ValueError(f"checkpoint {path} is missing bundle metadata '{key}'")
    bundle = make_bundle(
        profile=meta["profile"],
        use_noise_token=bool(meta["use_noise_token"]),
        k_int=int(meta["k_int"]),
        k_qua=int(meta["k_qua"]),
    )
    bundle.load_state_dict(arrays)
    return bundle, meta


def noise_token_forward(model: NoiseTokenEncoder, x_magnitude) -> np.ndarray:
    """(T, bins) noisy magnitude -> (T, token_dim) embedding, inference mode."""
    mag = x_magnitude.data if isinstance(x_magnitude, Tensor) else np.asarray(x_magnitude)
    with no_grad():
        emb, _ = model(Tensor(np.asarray(mag, dtype=np.float64)))
    return emb.data


def crn_forward(
    model: CrnDenoiser,
    x_spec: ComplexSpectrogram,
    noise_embedding: np.ndarray | None = None,
):
    """Denoise one spectrogram: (mask_re, mask_im, denoised spec, waveform)."""
    with no_grad():
        emb = None
        if noise_embedding is not None:
            emb = Tensor(_per_frame(noise_embedding, x_spec.frames))
        mask_re, mask_im, s_re, s_im = model(
            Tensor(x_spec.data.real.copy()), Tensor(x_spec.data.imag.copy()), emb
        )
    s_spec = x_spec.replace_data(s_re.data + 1j * s_im.data)
    return mask_re.data, mask_im.data, s_spec, istft(s_spec)


def le_forward(
    model: LeGenerator,
    s_spec: ComplexSpectrogram,
    near_psd_feature,
    noise_embedding: np.ndarray | None = None,
):
    """Enhance one denoised spectrogram: (alpha, enhanced spec, waveform)."""
    feat = (
        near_psd_feature.data
        if isinstance(near_psd_feature, Tensor)
        else np.asarray(near_psd_feature)
    )
    with no_grad():
        s_re = Tensor(s_spec.data.real.copy())
        s_im = Tensor(s_spec.data.imag.copy())
        s_mag = _safe_mag(s_re, s_im)
        emb = None
        if noise_embedding is not None:
            emb = Tensor(_per_frame(noise_embedding, s_spec.frames))
        alpha, _ = model(s_mag, Tensor(feat), emb)
        y_re, y_im, _, _ = apply_le_gains(alpha, s_re, s_im)
    y_spec = s_spec.replace_data(y_re.data + 1j * y_im.data)
    return alpha.data, y_spec, istft(y_spec)


def discriminator_forward(model: Discriminator, y: Waveform, context: Waveform):
    """Score an (output, conditioning) waveform pair; returns (out_dim,) floats."""
    with no_grad():
        scores = model(
            Tensor(np.abs(stft(y).data)), Tensor(np.abs(stft(context).data))
        )
    return scores.data
