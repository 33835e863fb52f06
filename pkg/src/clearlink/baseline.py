"""Classical disjoint enhancement chain: Wiener noise reduction + SSDRC.

The comparison system the learned models are measured against. Far-end noise
is suppressed with a decision-directed Wiener filter fed by the streaming
noise tracker; near-end audibility is boosted by a simplified SSDRC: spectral
shaping (fixed high-frequency tilt flattening plus adaptive local-peak
sharpening) followed by an envelope-follower dynamic range compressor, then
one global equal-power rescale.

Both stages are causal with zero frames of look-ahead; the only exception is
the single equal-power scalar applied over the whole utterance at the end of
the SSDRC stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import StftConfig, Waveform, istft, stft
from .noisepsd import EstimatorParams, NoisePsd, estimate_noise_psd

__all__ = [
    "SsdrcParams",
    "WienerState",
    "dsppipe",
    "ssdrc",
    "wiener_enhance",
    "wiener_gain",
]

_PSD_EPS = 1e-12
_MAG_EPS = 1e-12

# shaping gains are capped so near-silent frames cannot be amplified into
# artifacts by the ratio term
_SHAPE_GAIN_LIMIT_DB = 20.0

_LOCAL_MEAN_BINS = 9  # ~280 Hz at the 16 kHz / 512-point geometry

# the compressor input is gain-staged to this RMS (-6 dBFS) so the static
# curve bites at the intended depth regardless of incoming level; the final
# equal-power rescale undoes the level shift
_DRC_REF_RMS = 0.5


def wiener_gain(prior_snr):
    """Wiener gain xi / (1 + xi), before flooring. Monotone, -> 1 as xi grows."""
    prior_snr = np.asarray(prior_snr, dtype=np.float64)
    return prior_snr / (1.0 + prior_snr)


class WienerState:
    """Streaming decision-directed Wiener gain computer (one consumer).

    The a-priori SNR blends the previous frame's enhanced power with the
    maximum-likelihood estimate from the current frame, so the gain at frame
    t depends only on frames <= t.
    """

    def __init__(self, bins: int, beta_dd: float = 0.98, g_min: float = 0.1):
        if not 0.0 < beta_dd < 1.0:
            raise ValueError("beta_dd must be in (0, 1)")
        if not 0.0 < g_min <= 1.0:
            raise ValueError("g_min must be in (0, 1]")
        self.bins = bins
        self.beta_dd = beta_dd
        self.g_min = g_min
        self._prev_enh_pow: np.ndarray | None = None

    def step(self, noisy_row: np.ndarray, noise_row: np.ndarray):
        """One frame: complex spectrum + noise PSD row -> (enhanced row, gains)."""
        noisy_row = np.asarray(noisy_row, dtype=np.complex128)
        noise_row = np.asarray(noise_row, dtype=np.float64)
        if noisy_row.shape != (self.bins,) or noise_row.shape != (self.bins,):
            raise ValueError(
                f"expected ({self.bins},) rows, got {noisy_row.shape} / {noise_row.shape}"
            )
        lam = np.maximum(noise_row, _PSD_EPS)
        gamma = np.square(np.abs(noisy_row)) / lam
        ml = np.maximum(gamma - 1.0, 0.0)
        if self._prev_enh_pow is None:
            xi = ml
        else:
            xi = self.beta_dd * (self._prev_enh_pow / lam) + (1.0 - self.beta_dd) * ml
        gains = np.clip(wiener_gain(xi), self.g_min, 1.0)
        enhanced = gains * noisy_row
        self._prev_enh_pow = np.square(np.abs(enhanced))
        return enhanced, gains


def wiener_enhance(
    x: Waveform,
    noise: NoisePsd | None = None,
    est_params: EstimatorParams | None = None,
    beta_dd: float = 0.98,
    g_min: float = 0.1,
) -> Waveform:
    """Wiener-filter the far-end signal; output length equals input length.

    `noise` overrides the tracker with an externally supplied PSD (oracle
    runs, ablations); by default the floor is tracked from `x` itself.
    """
    if x.sample_rate != 16000:
        raise ValueError(f"expected 16 kHz input, got {x.sample_rate}")
    spec = stft(x)
    if noise is None:
        noise = estimate_noise_psd(spec, est_params)
    if noise.psd.shape != (spec.frames, spec.bins):
        raise ValueError(
            f"noise PSD shape {noise.psd.shape} does not match "
            f"spectrogram ({spec.frames}, {spec.bins})"
        )
    state = WienerState(spec.bins, beta_dd=beta_dd, g_min=g_min)
    rows = [state.step(spec.data[t], noise.psd[t])[0] for t in range(spec.frames)]
    data = np.stack(rows) if rows else np.zeros((0, spec.bins), dtype=np.complex128)
    return istft(spec.replace_data(data))


@dataclass(frozen=True)
class SsdrcParams:
    """Spectral shaping and compressor knobs.

    `curve` is the static compression map as (input dBFS, output dBFS)
    breakpoints; below the first breakpoint the compressor is the identity.
    The default realizes 3:1 above -20 dBFS.
    """

    sharpen: float = 0.3  # local-peak sharpening exponent
    tilt_weight: float = 0.5  # blend weight on the +6 dB/octave pre-emphasis curve
    attack_ms: float = 2.0
    release_ms: float = 20.0
    curve: tuple[tuple[float, float], ...] = ((-20.0, -20.0), (40.0, 0.0))

    def __post_init__(self):
        if self.sharpen < 0.0:
            raise ValueError("sharpen must be >= 0")
        if self.tilt_weight < 0.0:
            raise ValueError("tilt_weight must be >= 0")
        if not 0.0 < self.attack_ms < self.release_ms:
            raise ValueError("need 0 < attack_ms < release_ms")
        if len(self.curve) < 2:
            raise ValueError("curve needs at least two breakpoints")
        xs = [p[0] for p in self.curve]
        ys = [p[1] for p in self.curve]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("curve inputs must be strictly increasing")
        if any(b < a for a, b in zip(ys, ys[1:])):
            raise ValueError("curve must be monotone non-decreasing")


def _local_freq_mean(mag: np.ndarray) -> np.ndarray:
    """Per-frame boxcar average across frequency, edge-renormalized."""
    n = mag.shape[1]
    win = np.ones(min(_LOCAL_MEAN_BINS, n))
    norm = np.convolve(np.ones(n), win, mode="same")
    out = np.empty_like(mag)
    for t in range(mag.shape[0]):
        out[t] = np.convolve(mag[t], win, mode="same") / norm
    return out


def _shaping_gains(mag: np.ndarray, config: StftConfig, params: SsdrcParams):
    freqs = np.arange(config.bins) * config.sample_rate / config.fft_size
    tilt_db = 6.0 * np.log2(np.maximum(freqs, 1.0) / 1000.0)
    tilt_db = params.tilt_weight * np.maximum(tilt_db, 0.0)  # flat below 1 kHz
    ratio = (mag + _MAG_EPS) / (_local_freq_mean(mag) + _MAG_EPS)
    sharp_db = params.sharpen * 20.0 * np.log10(ratio)
    gain_db = np.clip(
        tilt_db[None, :] + sharp_db, -_SHAPE_GAIN_LIMIT_DB, _SHAPE_GAIN_LIMIT_DB
    )
    return np.power(10.0, gain_db / 20.0)


def _envelope_drc(x: np.ndarray, sample_rate: int, params: SsdrcParams) -> np.ndarray:
    a_att = np.exp(-1.0 / (params.attack_ms * 1e-3 * sample_rate))
    a_rel = np.exp(-1.0 / (params.release_ms * 1e-3 * sample_rate))
    env = np.empty_like(x)
    level = 0.0
    for t, a in enumerate(np.abs(x)):
        coef = a_att if a > level else a_rel
        level = coef * level + (1.0 - coef) * a
        env[t] = level
    env_db = 20.0 * np.log10(env + _MAG_EPS)
    xs = np.array([p[0] for p in params.curve])
    ys = np.array([p[1] for p in params.curve])
    # identity below the first breakpoint, piecewise-linear static curve above
    gain_db = np.where(env_db > xs[0], np.interp(env_db, xs, ys) - env_db, 0.0)
    return x * np.power(10.0, gain_db / 20.0)


def ssdrc(x: Waveform, params: SsdrcParams | None = None) -> Waveform:
    """Listening enhancement: spectral shaping, envelope DRC, equal-power out.

    Output power matches input power to 1e-6 relative (zero input stays zero).
    """
    if x.sample_rate != 16000:
        raise ValueError(f"expected 16 kHz input, got {x.sample_rate}")
    params = params or SsdrcParams()
    spec = stft(x)
    gains = _shaping_gains(np.abs(spec.data), spec.config, params)
    shaped = istft(spec.replace_data(spec.data * gains)).samples
    rms = float(np.sqrt(np.mean(np.square(shaped))))
    if rms > 0.0:
        shaped = shaped * (_DRC_REF_RMS / rms)
    out = _envelope_drc(shaped, x.sample_rate, params)
    p_in = float(np.mean(np.square(x.samples)))
    p_out = float(np.mean(np.square(out)))
    scale = np.sqrt(p_in / p_out) if p_out > 0.0 else 0.0
    return Waveform(out * scale, x.sample_rate)


def dsppipe(
    x: Waveform,
    noise: NoisePsd | None = None,
    est_params: EstimatorParams | None = None,
    beta_dd: float = 0.98,
    g_min: float = 0.1,
    ssdrc_params: SsdrcParams | None = None,
) -> Waveform:
    """The disjoint classical pipeline: ssdrc(wiener_enhance(x))."""
    cleaned = wiener_enhance(
        x, noise=noise, est_params=est_params, beta_dd=beta_dd, g_min=g_min
    )
    return ssdrc(cleaned, ssdrc_params)
