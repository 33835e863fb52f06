"""Objective scores: SI-SNR, ESTOI, segmental SNR, log-spectral distance.

All comparison metrics take (est, ref) waveforms of equal length. ESTOI
follows the published short-time intelligibility recipe: 10 kHz front end,
clean-driven silent-frame removal, 15 third-octave bands from 150 Hz,
row/column-normalized 30-frame segment correlations. A parametric logistic
squashes raw scores into (0, 1) so every metric lives on the range of a
sigmoid output; its midpoint/slope are fit once per metric (median and IQR)
and frozen thereafter.

Numeric edges are deterministic by design: norm guards use fixed epsilons,
never random dither, so estoi(x, x) is exactly 1 up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import Waveform, hann_periodic, resample, third_octave_bands

__all__ = [
    "MetricScore",
    "si_snr",
    "estoi",
    "seg_snr",
    "log_spectral_distance",
    "logistic_normalize",
    "fit_logistic",
]

SI_SNR_CAP_DB = 60.0
SEG_SNR_FLOOR_DB = -10.0
SEG_SNR_CEIL_DB = 35.0
SEG_SNR_FRAME_S = 0.032
LSD_FLOOR = 1e-10

ESTOI_FS = 10000
ESTOI_FRAME = 256
ESTOI_HOP = 128
ESTOI_FFT = 512
ESTOI_N_BANDS = 15
ESTOI_MIN_CENTER_HZ = 150.0
ESTOI_SEG_FRAMES = 30
ESTOI_DYN_RANGE_DB = 40.0

_EPS = 1e-30


def _check_pair(est: Waveform, ref: Waveform) -> None:
    if len(est) != len(ref):
        raise ValueError(f"length mismatch: {len(est)} vs {len(ref)}")
    if est.sample_rate != ref.sample_rate:
        raise ValueError("sample rate mismatch")


# ---------------------------------------------------------------------------
# SI-SNR
# ---------------------------------------------------------------------------

def si_snr(est: Waveform, ref: Waveform) -> float:
    """Scale-invariant SNR in dB, capped at +-60.

    Both signals are zero-meaned; the estimate is projected onto the
    reference, and the ratio of projected power to residual power is
    returned. Identical signals hit the +60 cap (the true value is infinite);
    a zero projection hits the -60 floor.
    """
    _check_pair(est, ref)
    e = est.samples - np.mean(est.samples)
    r = ref.samples - np.mean(ref.samples)
    r_energy = float(np.dot(r, r))
    if r_energy <= 0.0:
        raise ValueError("reference has zero power")
    s_target = (np.dot(e, r) / r_energy) * r
    noise = e - s_target
    ratio = (float(np.dot(s_target, s_target)) + _EPS) / (
        float(np.dot(noise, noise)) + _EPS
    )
    return float(np.clip(10.0 * np.log10(ratio), -SI_SNR_CAP_DB, SI_SNR_CAP_DB))


# ---------------------------------------------------------------------------
# segmental SNR and LSD
# ---------------------------------------------------------------------------

def seg_snr(est: Waveform, ref: Waveform) -> float:
    """Mean per-frame SNR over non-overlapping 32 ms frames, clamped [-10, 35].

    The per-frame ratio is estimate power over error power, so a perfect
    estimate saturates at the +35 cap and a silent estimate against active
    reference hits the -10 floor.
    """
    _check_pair(est, ref)
    frame = int(round(SEG_SNR_FRAME_S * est.sample_rate))
    n_frames = len(est) // frame
    if n_frames == 0:
        raise ValueError(f"need at least one {frame}-sample frame")
    e = est.samples[: n_frames * frame].reshape(n_frames, frame)
    r = ref.samples[: n_frames * frame].reshape(n_frames, frame)
    num = np.sum(np.square(e), axis=1) + _EPS
    den = np.sum(np.square(e - r), axis=1) + _EPS
    per_frame = np.clip(10.0 * np.log10(num / den), SEG_SNR_FLOOR_DB, SEG_SNR_CEIL_DB)
    return float(np.mean(per_frame))


def log_spectral_distance(est: Waveform, ref: Waveform) -> float:
    """Mean over STFT frames of the RMS log-magnitude spectral difference (dB)."""
    from .dsp import StftConfig, stft

    _check_pair(est, ref)
    config = StftConfig(sample_rate=est.sample_rate)
    log_e = 20.0 * np.log10(np.maximum(stft(est, config).magnitude(), LSD_FLOOR))
    log_r = 20.0 * np.log10(np.maximum(stft(ref, config).magnitude(), LSD_FLOOR))
    return float(np.mean(np.sqrt(np.mean(np.square(log_e - log_r), axis=1))))


# ---------------------------------------------------------------------------
# ESTOI
# ---------------------------------------------------------------------------

def _frame_signal(x: np.ndarray) -> np.ndarray:
    """(frames, 256) windowed frames at 128 hop, no centering, tail dropped."""
    n_frames = (len(x) - ESTOI_FRAME) // ESTOI_HOP + 1
    if n_frames <= 0:
        return np.zeros((0, ESTOI_FRAME))
    idx = ESTOI_HOP * np.arange(n_frames)[:, None] + np.arange(ESTOI_FRAME)[None, :]
    return x[idx] * hann_periodic(ESTOI_FRAME)[None, :]


def _overlap_add(frames: np.ndarray) -> np.ndarray:
    """Rebuild a signal from windowed frames, dividing out the window sum."""
    n = (frames.shape[0] - 1) * ESTOI_HOP + ESTOI_FRAME
    acc = np.zeros(n)
    wsum = np.zeros(n)
    w = hann_periodic(ESTOI_FRAME)
    for t in range(frames.shape[0]):
        s = t * ESTOI_HOP
        acc[s : s + ESTOI_FRAME] += frames[t]
        wsum[s : s + ESTOI_FRAME] += w
    return acc / np.maximum(wsum, 1e-12)


def _remove_silent_frames(ref: np.ndarray, est: np.ndarray):
    """Drop frames whose clean energy is 40 dB under the loudest clean frame."""
    ref_frames = _frame_signal(ref)
    est_frames = _frame_signal(est)
    if ref_frames.shape[0] == 0:
        raise ValueError("input shorter than one analysis frame")
    energies = 20.0 * np.log10(np.linalg.norm(ref_frames, axis=1) + _EPS)
    keep = energies > np.max(energies) - ESTOI_DYN_RANGE_DB
    return _overlap_add(ref_frames[keep]), _overlap_add(est_frames[keep])


def _band_envelope(x: np.ndarray) -> np.ndarray:
    """(frames, 15) third-octave magnitudes of 256-frame / 512-FFT spectra."""
    frames = _frame_signal(x)
    spec = np.fft.rfft(frames, n=ESTOI_FFT, axis=1)
    return third_octave_bands(
        np.abs(spec), ESTOI_FS, n_bands=ESTOI_N_BANDS, min_center=ESTOI_MIN_CENTER_HZ
    )


def _row_col_normalize(seg: np.ndarray) -> np.ndarray:
    """Center and unit-normalize rows (per band), then columns (per frame)."""
    out = seg - np.mean(seg, axis=1, keepdims=True)
    out = out / np.maximum(np.linalg.norm(out, axis=1, keepdims=True), 1e-12)
    out = out - np.mean(out, axis=0, keepdims=True)
    out = out / np.maximum(np.linalg.norm(out, axis=0, keepdims=True), 1e-12)
    return out


def estoi(est: Waveform, ref: Waveform) -> float:
    """Extended short-time intelligibility score in [-1, 1].

    Pipeline: resample to 10 kHz, drop clean-silent frames, compute
    third-octave band envelopes, then average the segment correlations of
    row/column-normalized 15-band x 30-frame patches. The clean signal
    (`ref`) drives the silence mask; `est` follows it, and a sign flip of
    either signal is invisible to the magnitude front end.
    """
    _check_pair(est, ref)
    if est.sample_rate != ESTOI_FS:
        est = resample(est, ESTOI_FS)
        ref = resample(ref, ESTOI_FS)
    ref_active, est_active = _remove_silent_frames(ref.samples, est.samples)
    ref_bands = _band_envelope(ref_active)
    est_bands = _band_envelope(est_active)
    n_frames = ref_bands.shape[0]
    if n_frames < ESTOI_SEG_FRAMES:
        raise ValueError(
            f"need at least {ESTOI_SEG_FRAMES} active frames "
            f"({ESTOI_SEG_FRAMES * ESTOI_HOP / ESTOI_FS:.3f} s), got {n_frames}"
        )
    scores = []
    for m in range(ESTOI_SEG_FRAMES, n_frames + 1):
        r_seg = _row_col_normalize(ref_bands[m - ESTOI_SEG_FRAMES : m].T)
        e_seg = _row_col_normalize(est_bands[m - ESTOI_SEG_FRAMES : m].T)
        scores.append(float(np.sum(r_seg * e_seg)) / ESTOI_SEG_FRAMES)
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# logistic normalization
# ---------------------------------------------------------------------------

def logistic_normalize(raw, m: float, k: float):
    """1 / (1 + exp(-k * (raw - m))); strictly increasing in raw for k > 0."""
    z = np.clip(k * (np.asarray(raw, dtype=np.float64) - m), -500.0, 500.0)
    out = 1.0 / (1.0 + np.exp(-z))
    return float(out) if np.isscalar(raw) or np.ndim(raw) == 0 else out


def fit_logistic(sample_scores) -> tuple[float, float]:
    """Midpoint = sample median, slope = 2 / IQR.

    Maps the sample median to exactly 0.5 and the quartiles to moderate
    confidence either side. A degenerate sample (zero IQR) is an error.
    """
    scores = np.asarray(sample_scores, dtype=np.float64)
    if scores.size < 2:
        raise ValueError("need at least two sample scores")
    if not np.all(np.isfinite(scores)):
        raise ValueError("sample scores must be finite")
    m = float(np.median(scores))
    q75, q25 = np.percentile(scores, [75.0, 25.0])
    iqr = float(q75 - q25)
    if iqr <= 0.0:
        raise ValueError("degenerate sample: zero interquartile range")
    return m, 2.0 / iqr


@dataclass(frozen=True)
class MetricScore:
    """A named raw score plus its logistic-normalized value and parameters."""

    name: str
    raw: float
    normalized: float
    m: float
    k: float

    def __post_init__(self):
        if self.k <= 0.0:
            raise ValueError("slope k must be positive")
        expected = logistic_normalize(self.raw, self.m, self.k)
        if abs(self.normalized - expected) > 1e-9:
            raise ValueError(
                f"normalized value {self.normalized} inconsistent with "
                f"logistic({self.raw}; m={self.m}, k={self.k}) = {expected}"
            )

    @classmethod
    def from_raw(cls, name: str, raw: float, m: float, k: float) -> "MetricScore":
        return cls(name=name, raw=float(raw), normalized=logistic_normalize(raw, m, k), m=m, k=k)
