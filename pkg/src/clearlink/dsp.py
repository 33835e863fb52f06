"""STFT analysis/synthesis, resampling, and third-octave band analysis.

Every other module builds on the two types defined here: `Waveform` for
time-domain signals and `ComplexSpectrogram` for frames-by-bins STFT data.

Conventions (fixed, and checked by the round-trip tests):
  * periodic Hann window, 512 samples / 128 hop at 16 kHz in the default
    profile, FFT size equal to the window length (257 bins);
  * reflect padding of window_len/2 at both ends, so frame t is centered
    at sample t*hop and the frame count is 1 + len//hop;
  * unnormalized forward transform; inverse divided by the FFT size with
    overlap-added squared-window compensation, so istft(stft(w))
    reconstructs w exactly up to float64 round-off.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

__all__ = [
    "Waveform",
    "StftConfig",
    "ComplexSpectrogram",
    "DEFAULT_STFT",
    "hann_periodic",
    "stft",
    "istft",
    "resample",
    "third_octave_band_matrix",
    "third_octave_bands",
]


def hann_periodic(n: int) -> np.ndarray:
    """Periodic (DFT-even) Hann window; the variant whose squared sum is COLA."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class Waveform:
    """Mono sampled signal. Samples are stored as float64, nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be mono 1-D, got shape {samples.shape}")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def power(self) -> float:
        """Mean squared amplitude over the whole signal."""
        return float(np.mean(np.square(self.samples))) if len(self) else 0.0

    def rms(self) -> float:
        return float(np.sqrt(self.power()))

    def crest_factor(self) -> float:
        """Peak absolute amplitude over RMS."""
        r = self.rms()
        return float(np.max(np.abs(self.samples)) / r) if r > 0.0 else 0.0


@dataclass(frozen=True)
class StftConfig:
    """Analysis frame geometry plus the window vector.

    hop must divide window_len; fft_size must be >= window_len (they are
    equal in the default 16 kHz profile: 512 samples / 128 hop, 257 bins).
    """

    window_len: int = 512
    hop: int = 128
    fft_size: int = 512
    sample_rate: int = 16000

    def __post_init__(self):
        if self.window_len <= 0 or self.hop <= 0:
            raise ValueError("window_len and hop must be positive")
        if self.window_len % self.hop != 0:
            raise ValueError(
                f"hop ({self.hop}) must divide window_len ({self.window_len})"
            )
        if self.fft_size < self.window_len:
            raise ValueError("fft_size must be >= window_len")

    @property
    def window(self) -> np.ndarray:
        return hann_periodic(self.window_len)

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    def frame_count(self, n_samples: int) -> int:
        return 1 + n_samples // self.hop

    def cola_deviation(self) -> float:
        """Max relative deviation of the overlap-added squared window from constant.

        Evaluated over an interior span long enough that every sample sees the
        full set of overlapping windows.
        """
        reps = 4 * (self.window_len // self.hop)
        total = self.window_len + reps * self.hop
        acc = np.zeros(total)
        w2 = np.square(self.window)
        for t in range(reps + 1):
            s = t * self.hop
            acc[s : s + self.window_len] += w2
        interior = acc[self.window_len : reps * self.hop]
        mean = float(np.mean(interior))
        return float(np.max(np.abs(interior - mean)) / mean)


DEFAULT_STFT = StftConfig()


@dataclass(frozen=True)
class ComplexSpectrogram:
    """(frames, bins) complex STFT values plus the config that produced them.

    n_samples records the originating waveform length so istft can trim the
    reconstruction exactly; None means "span of the hop grid".
    """

    data: np.ndarray
    config: StftConfig
    n_samples: int | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 2:
            raise ValueError(f"spectrogram data must be 2-D, got shape {data.shape}")
        if data.shape[1] != self.config.bins:
            raise ValueError(
                f"expected {self.config.bins} bins, got {data.shape[1]}"
            )
        object.__setattr__(self, "data", data)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def bins(self) -> int:
        return self.data.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)

    def replace_data(self, data: np.ndarray) -> "ComplexSpectrogram":
        """Same geometry, new values (masking, gain application, ...)."""
        return ComplexSpectrogram(data=data, config=self.config, n_samples=self.n_samples)


def stft(w: Waveform, config: StftConfig | None = None) -> ComplexSpectrogram:
    """Forward STFT with reflect center padding.

    Frame t covers padded samples [t*hop, t*hop + window_len), i.e. it is
    centered at original sample t*hop. Linear in the input.
    """
    config = config or DEFAULT_STFT
    if w.sample_rate != config.sample_rate:
        raise ValueError(
            f"waveform rate {w.sample_rate} != config rate {config.sample_rate}"
        )
    n = len(w)
    if n == 0:
        raise ValueError("cannot transform an empty waveform")
    pad = config.window_len // 2
    # reflect needs at least pad+1 samples; very short inputs fall back to zeros
    mode = "reflect" if n > pad else "constant"
    padded = np.pad(w.samples, pad, mode=mode)
    frames = config.frame_count(n)
    idx = config.hop * np.arange(frames)[:, None] + np.arange(config.window_len)[None, :]
    segs = padded[idx] * config.window[None, :]
    data = np.fft.rfft(segs, n=config.fft_size, axis=1)
    return ComplexSpectrogram(data=data, config=config, n_samples=n)


def istft(spec: ComplexSpectrogram, length: int | None = None) -> Waveform:
    """Inverse STFT by normalized overlap-add.

    Reconstruction divides by the actually accumulated squared window, so the
    round trip is exact wherever at least one window covers a sample.
    """
    c = spec.config
    frames = spec.frames
    if frames == 0:
        raise ValueError("cannot invert an empty spectrogram")
    segs = np.fft.irfft(spec.data, n=c.fft_size, axis=1)[:, : c.window_len]
    segs = segs * c.window[None, :]
    total = (frames - 1) * c.hop + c.window_len
    acc = np.zeros(total)
    norm = np.zeros(total)
    w2 = np.square(c.window)
    for t in range(frames):
        s = t * c.hop
        acc[s : s + c.window_len] += segs[t]
        norm[s : s + c.window_len] += w2
    acc /= np.maximum(norm, 1e-12)
    pad = c.window_len // 2
    if length is None:
        length = spec.n_samples if spec.n_samples is not None else (frames - 1) * c.hop
    if length < 0 or pad + length > total:
        raise ValueError(
            f"requested length {length} exceeds the synthesized span {total - pad}"
        )
    return Waveform(acc[pad : pad + length], c.sample_rate)


def resample(w: Waveform, target_rate: int, taps: int = 64) -> Waveform:
    """Band-limited resampling with a windowed-sinc kernel.

    Output length is round(len * target/source). Each output sample is a
    normalized 64-tap Hann-windowed sinc interpolation of the input, with the
    cutoff at the lower of the two Nyquist rates; per-sample normalization
    makes DC signals pass through exactly.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), target_rate)
    n = len(w)
    ratio = target_rate / w.sample_rate
    n_out = int(np.floor(n * ratio + 0.5))
    if n_out == 0:
        return Waveform(np.zeros(0), target_rate)
    half = taps // 2
    cutoff = min(1.0, ratio)
    centers = np.arange(n_out) / ratio
    base = np.ceil(centers).astype(np.int64) - half
    k = base[:, None] + np.arange(taps)[None, :]
    t = k - centers[:, None]
    kern = cutoff * np.sinc(cutoff * t)
    kern *= 0.5 + 0.5 * np.cos(np.pi * np.clip(t / half, -1.0, 1.0))
    kern /= np.sum(kern, axis=1, keepdims=True)
    xp = np.pad(w.samples, (half, half), mode="edge")
    out = np.sum(xp[k + half] * kern, axis=1)
    return Waveform(out, target_rate)


def third_octave_band_matrix(
    sample_rate: int, fft_size: int, n_bands: int = 15, min_center: float = 150.0
):
    """0/1 matrix mapping FFT bins to third-octave bands, plus center freqs.

    Band k is centered at min_center * 2^(k/3) with edges a sixth-octave to
    either side, snapped to the nearest FFT bin. Adjacent bands share an edge
    frequency, so the snapped ranges never overlap.
    """
    bins = fft_size // 2 + 1
    f = np.arange(bins) * (sample_rate / fft_size)
    k = np.arange(n_bands, dtype=np.float64)
    cf = min_center * 2.0 ** (k / 3.0)
    f_lo = min_center * 2.0 ** ((2.0 * k - 1.0) / 6.0)
    f_hi = min_center * 2.0 ** ((2.0 * k + 1.0) / 6.0)
    if f_hi[-1] > sample_rate / 2.0:
        raise ValueError(
            f"sample rate {sample_rate} too low for the top band edge {f_hi[-1]:.0f} Hz"
        )
    obm = np.zeros((n_bands, bins))
    for i in range(n_bands):
        lo = int(np.argmin(np.square(f - f_lo[i])))
        hi = int(np.argmin(np.square(f - f_hi[i])))
        obm[i, lo:hi] = 1.0
    return obm, cf


def third_octave_bands(
    spec_magnitude: np.ndarray,
    sample_rate: int,
    n_bands: int = 15,
    min_center: float = 150.0,
) -> np.ndarray:
    """Per-frame third-octave band magnitudes.

    spec_magnitude is (frames, bins) non-negative; the band value is the root
    of the summed squared bin magnitudes inside each band.
    """
    mag = np.asarray(spec_magnitude, dtype=np.float64)
    if mag.ndim != 2:
        raise ValueError("spec_magnitude must be (frames, bins)")
    if np.any(mag < 0):
        raise ValueError("magnitudes must be non-negative")
    fft_size = 2 * (mag.shape[1] - 1)
    obm, _ = third_octave_band_matrix(sample_rate, fft_size, n_bands, min_center)
    return np.sqrt(np.square(mag) @ obm.T)
