"""Causal noise PSD tracking from the near-end reference microphone.

A minima-controlled recursive averager: the noisy periodogram is smoothed
per bin, a sliding window of subwindow minima tracks the noise floor, a
speech-presence probability (driven by the smoothed-to-floor ratio) gates
the recursive noise update, and the result is clamped to the bias-compensated
floor. Everything is strictly causal: frame t of the output depends only on
input frames <= t, which is what lets the same tracker run in streaming and
batch form with bit-identical results.

An oracle mode computes the "estimate" directly from the true noise signal
(recursively smoothed), for ablations that isolate downstream behavior from
estimator error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import ComplexSpectrogram

__all__ = [
    "EstimatorParams",
    "NoisePsd",
    "NoiseTracker",
    "estimate_noise_psd",
    "oracle_noise_psd",
    "psd_feature",
]

PSD_LOG_EPS = 1e-10


_FREQ_WIN = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

# windowed minima of the smoothed periodogram land below the true level even
# on stationary noise; this folds the standard minimum-statistics correction
# into the tracked floor before the safety factor applies
MIN_COMPENSATION = 1.2

# per-frame decay of the sustained-presence probability once its indicator
# drops; keeps the gate closed across gaps between syllables
_PRESENCE_HANGOVER = 0.85

# presence thresholds as fractions of delta * bias * floor: the onset path
# looks at the instantaneous (frequency-smoothed) frame, the sustained path
# at its running average
_FAST_GATE_FRAC = 0.4
_SLOW_GATE_FRAC = 0.5


def _freq_smooth(p: np.ndarray) -> np.ndarray:
    """5-bin binomial smoothing across frequency, renormalized at the edges."""
    n = p.shape[0]
    if n < 2:
        return p.copy()
    out = np.convolve(p, _FREQ_WIN, mode="same")
    # weight mass actually inside the spectrum, per position
    norm = np.convolve(np.ones(n), _FREQ_WIN, mode="same")
    return out / norm


@dataclass(frozen=True)
class EstimatorParams:
    """Tracker knobs; defaults follow the documented desk profile."""

    alpha_s: float = 0.9  # periodogram smoothing
    min_window: int = 96  # frames covered by the sliding minimum
    bias: float = 1.5  # minima bias compensation
    subwindows: int = 8  # sliding-minimum resolution
    alpha_p: float = 0.2  # presence-probability smoothing
    alpha_d: float = 0.97  # noise-update base smoothing
    delta: float = 3.0  # presence threshold over the compensated floor

    def __post_init__(self):
        if not 0.0 < self.alpha_s < 1.0:
            raise ValueError("alpha_s must be in (0, 1)")
        if self.min_window < 1:
            raise ValueError("min_window must be >= 1")
        if self.bias < 1.0:
            raise ValueError("bias must be >= 1")
        if self.subwindows < 1 or self.min_window % self.subwindows != 0:
            raise ValueError("subwindows must divide min_window")
        for name in ("alpha_p", "alpha_d"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")


@dataclass(frozen=True)
class NoisePsd:
    """Per-frame noise PSD estimates (linear power) plus the tracker state.

    `psd` is (frames, bins), all finite and >= 0; row t was produced from
    input frames <= t only. `tracker` is the live state and can keep
    consuming frames.
    """

    psd: np.ndarray
    tracker: "NoiseTracker | None" = field(default=None, compare=False)

    def __post_init__(self):
        psd = np.asarray(self.psd, dtype=np.float64)
        if psd.ndim != 2:
            raise ValueError(f"psd must be (frames, bins), got {psd.shape}")
        if not np.all(np.isfinite(psd)):
            raise ValueError("psd contains non-finite values")
        if np.any(psd < 0):
            raise ValueError("psd contains negative values")
        object.__setattr__(self, "psd", psd)

    @property
    def frames(self) -> int:
        return self.psd.shape[0]


class NoiseTracker:
    """Streaming minima-controlled noise floor tracker (one consumer)."""

    def __init__(self, bins: int, params: EstimatorParams | None = None):
        self.params = params or EstimatorParams()
        self.bins = bins
        self._sub_len = self.params.min_window // self.params.subwindows
        self._smooth: np.ndarray | None = None
        self._smooth2: np.ndarray | None = None
        self._noise: np.ndarray | None = None
        self._presence_fast = np.zeros(bins)
        self._presence_slow = np.zeros(bins)
        self._prev_fast_hit = np.zeros(bins, dtype=bool)
        self._sub_minima: list[np.ndarray] = []
        self._cur_min: np.ndarray | None = None
        self._count = 0

    def step(self, frame_power: np.ndarray) -> np.ndarray:
        """Consume one periodogram frame |X_t|^2, return the noise estimate row."""
        p = self.params
        frame_power = np.asarray(frame_power, dtype=np.float64)
        if frame_power.shape != (self.bins,):
            raise ValueError(f"expected ({self.bins},) frame, got {frame_power.shape}")
        if not np.all(np.isfinite(frame_power)):
            raise ValueError("non-finite periodogram frame")

        # minima and presence run on a frequency-smoothed periodogram: raw
        # minima over a 96-frame window dip far enough below the mean that the
        # bias factor cannot recover them
        sf = _freq_smooth(frame_power)

        if self._smooth is None:
            self._smooth = sf.copy()
            self._smooth2 = sf.copy()
            self._noise = frame_power.copy()
            self._cur_min = sf.copy()
        else:
            self._smooth = p.alpha_s * self._smooth + (1.0 - p.alpha_s) * sf
            # second smoothing stage for the minima only: minima of the
            # single-stage sequence dip too deep for the bias factor
            self._smooth2 = p.alpha_s * self._smooth2 + (1.0 - p.alpha_s) * self._smooth
            np.minimum(self._cur_min, self._smooth2, out=self._cur_min)

        floor = self._cur_min
        for sub in self._sub_minima:
            floor = np.minimum(floor, sub)
        floor = MIN_COMPENSATION * floor

        # dual presence decision. the onset path fires on the instantaneous
        # frame but only after two consecutive hits: single-frame excursions
        # of stationary noise are almost never back to back, so requiring
        # confirmation stops the gate from censoring the upper tail of the
        # noise distribution, while a syllable stays above threshold long
        # enough to fire from its second frame on. the sustained path runs
        # on the smoothed trace and carries the hangover.
        thresh = p.delta * p.bias * floor
        fast_hit = sf > _FAST_GATE_FRAC * thresh
        ind_fast = (fast_hit & self._prev_fast_hit).astype(np.float64)
        self._prev_fast_hit = fast_hit
        ind_slow = (self._smooth > _SLOW_GATE_FRAC * thresh).astype(np.float64)
        self._presence_fast = (
            p.alpha_p * self._presence_fast + (1.0 - p.alpha_p) * ind_fast
        )
        up = p.alpha_p * self._presence_slow + (1.0 - p.alpha_p) * ind_slow
        self._presence_slow = np.maximum(up, _PRESENCE_HANGOVER * self._presence_slow)
        presence = np.maximum(self._presence_fast, self._presence_slow)
        alpha_eff = p.alpha_d + (1.0 - p.alpha_d) * presence
        # power above the presence threshold is speech by the gate's own
        # definition, so it never enters the update: this caps what a syllable
        # onset can inject during the frames before the presence gate closes
        self._noise = alpha_eff * self._noise + (1.0 - alpha_eff) * np.minimum(
            frame_power, thresh
        )

        self._count += 1
        if self._count == self._sub_len:
            self._sub_minima.append(self._cur_min.copy())
            if len(self._sub_minima) > p.subwindows:
                self._sub_minima.pop(0)
            self._cur_min = self._smooth2.copy()
            self._count = 0

        # the clamp bounds the output, not the recursive state: feeding the
        # clamped value back would restart the averager from every floor dip
        # and bias the whole estimate low
        return np.minimum(self._noise, p.bias * floor)

    def floor(self) -> np.ndarray:
        """Current bias-compensated minimum; the estimate never exceeds it."""
        if self._cur_min is None:
            return np.zeros(self.bins)
        floor = self._cur_min
        for sub in self._sub_minima:
            floor = np.minimum(floor, sub)
        return self.params.bias * MIN_COMPENSATION * floor


def estimate_noise_psd(
    noisy: ComplexSpectrogram, params: EstimatorParams | None = None
) -> NoisePsd:
    """Track the noise floor of a noisy spectrogram, frame by frame."""
    if not np.all(np.isfinite(noisy.data)):
        raise ValueError("spectrogram contains non-finite values")
    tracker = NoiseTracker(noisy.bins, params)
    power = np.square(np.abs(noisy.data))
    rows = [tracker.step(power[t]) for t in range(noisy.frames)]
    psd = np.stack(rows) if rows else np.zeros((0, noisy.bins))
    return NoisePsd(psd=psd, tracker=tracker)


def oracle_noise_psd(
    noise: ComplexSpectrogram, params: EstimatorParams | None = None
) -> NoisePsd:
    """PSD from the true noise signal: causally smoothed periodogram.

    Bypasses floor tracking entirely; used to ablate estimator error.
    """
    params = params or EstimatorParams()
    if not np.all(np.isfinite(noise.data)):
        raise ValueError("spectrogram contains non-finite values")
    power = np.square(np.abs(noise.data))
    psd = np.empty_like(power)
    acc = None
    for t in range(noise.frames):
        acc = power[t] if acc is None else params.alpha_s * acc + (1 - params.alpha_s) * power[t]
        psd[t] = acc
    return NoisePsd(psd=psd)


def psd_feature(psd: NoisePsd, companion: ComplexSpectrogram | None = None):
    """Log-compressed PSD rows, log(psd + 1e-10), as a network input tensor.

    When `companion` (the spectrogram the feature will ride along with) is
    given, the frame counts must agree.
    """
    from .autodiff import Tensor

    if companion is not None and companion.frames != psd.frames:
        raise ValueError(
            f"frame mismatch: psd has {psd.frames}, companion has {companion.frames}"
        )
    return Tensor(np.log(psd.psd + PSD_LOG_EPS), requires_grad=False)
