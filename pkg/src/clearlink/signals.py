"""The communication-chain signal model and desk-scale signal synthesis.

The chain is: clean speech s, far-end noise u, far-end mixture x = s + u,
denoised speech, listening-enhanced speech y, near-end noise v, and the
observed playback o = y + v. Mixing is SNR-exact: the noise is scaled so the
realized utterance-level SNR matches the request, and the speech is never
rescaled (the clean reference stays fixed).

Synthetic stand-ins replace recorded corpora: a pitch-modulated harmonic
source with slowly wandering formant resonances, noise bursts, and syllabic
(4 Hz) amplitude modulation for speech; white/pink/babble/hum plus two
held-out textures ("cafe", "announce") for noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sig

from .dsp import Waveform

__all__ = [
    "SceneCondition",
    "Scene",
    "mix_at_snr",
    "observe",
    "synth_speech",
    "make_noise",
    "NOISE_GENERATORS",
]


def mix_at_snr(signal: Waveform, noise: Waveform, snr_db: float):
    """Scale `noise` so that 10*log10(P(signal)/P(noise_scaled)) == snr_db.

    Returns (mixture, scaled_noise). Power is the mean squared amplitude over
    the full utterance.
    """
    if len(signal) != len(noise):
        raise ValueError(f"length mismatch: {len(signal)} vs {len(noise)}")
    if signal.sample_rate != noise.sample_rate:
        raise ValueError("sample rate mismatch")
    p_s = signal.power()
    p_n = noise.power()
    if p_s <= 0.0:
        raise ValueError("signal has zero power")
    if p_n <= 0.0:
        raise ValueError("noise has zero power")
    scale = np.sqrt(p_s / p_n) * 10.0 ** (-snr_db / 20.0)
    scaled = noise.samples * scale
    return (
        Waveform(signal.samples + scaled, signal.sample_rate),
        Waveform(scaled, signal.sample_rate),
    )


def observe(y: Waveform, v: Waveform) -> Waveform:
    """Playback as heard by the listener: elementwise y + v."""
    if len(y) != len(v):
        raise ValueError(f"length mismatch: {len(y)} vs {len(v)}")
    if y.sample_rate != v.sample_rate:
        raise ValueError("sample rate mismatch")
    return Waveform(y.samples + v.samples, y.sample_rate)


# ---------------------------------------------------------------------------
# synthetic sources
# ---------------------------------------------------------------------------

def _slow_noise(rng: np.random.Generator, n: int, sample_rate: int, rate_hz: float):
    """Smooth random contour: coarse gaussian points, linearly interpolated."""
    k = max(int(np.ceil(n / sample_rate * rate_hz)) + 2, 4)
    pts = rng.standard_normal(k)
    return np.interp(np.linspace(0.0, k - 1.0, n), np.arange(k), pts)


def _resonator(x: np.ndarray, center_hz: np.ndarray, sample_rate: int, r: float = 0.97):
    """Second-order resonator with a chunkwise-varying center frequency."""
    chunk = 640
    out = np.empty_like(x)
    zi = np.zeros(2)
    for start in range(0, len(x), chunk):
        stop = min(start + chunk, len(x))
        theta = 2.0 * np.pi * center_hz[start] / sample_rate
        b = np.array([1.0 - r])
        a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
        out[start:stop], zi = sig.lfilter(b, a, x[start:stop], zi=zi)
    return out


def synth_speech(
    duration_s: float,
    sample_rate: int,
    rng: np.random.Generator,
    return_parts: bool = False,
):
    """Speech-like test signal.

    A harmonic source follows a wandering pitch contour and is shaped by three
    slowly moving formant resonances; high-passed noise bursts stand in for
    consonants; the sum is modulated by a syllabic ~4 Hz envelope with
    inter-syllable dips, which keeps the crest factor well above that of the
    white-noise excitation.
    """
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate

    f0 = rng.uniform(105.0, 225.0) * (1.0 + 0.06 * _slow_noise(rng, n, sample_rate, 2.0))
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    n_harm = max(int(3800.0 / float(np.max(f0))), 3)
    voiced = np.zeros(n)
    for k in range(1, n_harm + 1):
        voiced += np.cos(k * phase + 0.05 * k * k) / k

    formant_ranges = ((350.0, 800.0), (900.0, 2200.0), (2300.0, 3200.0))
    gains = (1.0, 0.6, 0.35)
    shaped = np.zeros(n)
    for (lo, hi), g in zip(formant_ranges, gains):
        center = lo + (hi - lo) * (
            0.5 + 0.23 * np.clip(_slow_noise(rng, n, sample_rate, 1.3), -2.0, 2.0)
        )
        shaped += g * _resonator(voiced, center, sample_rate)
    # keep some of the raw source so low harmonics survive the resonators
    shaped = shaped + 0.15 * voiced

    excitation = rng.standard_normal(n)
    hp = excitation - np.concatenate(([0.0], 0.95 * excitation[:-1]))
    burst_gate = (_slow_noise(rng, n, sample_rate, 6.0) > 0.9).astype(np.float64)
    burst_gate = sig.lfilter([0.02], [1.0, -0.98], burst_gate)
    unvoiced = hp * burst_gate

    syllable = (0.5 + 0.5 * np.sin(2.0 * np.pi * 4.0 * t + rng.uniform(0, 2 * np.pi))) ** 2
    env = (0.08 + 0.92 * syllable) * (
        1.0 + 0.25 * np.clip(_slow_noise(rng, n, sample_rate, 0.7), -2.0, 2.0)
    )
    env = np.maximum(env, 0.02)

    raw = (0.85 * shaped + 0.6 * unvoiced) * env
    rms = np.sqrt(np.mean(np.square(raw)))
    raw *= 0.05 / max(rms, 1e-12)
    speech = Waveform(raw, sample_rate)
    if return_parts:
        return speech, {"excitation": Waveform(excitation, sample_rate)}
    return speech


def _norm_rms(x: np.ndarray, target: float = 1.0) -> np.ndarray:
    rms = np.sqrt(np.mean(np.square(x)))
    return x * (target / max(rms, 1e-12))


def _noise_white(duration_s, sample_rate, rng):
    n = int(round(duration_s * sample_rate))
    return _norm_rms(rng.standard_normal(n))


def _noise_pink(duration_s, sample_rate, rng):
    n = int(round(duration_s * sample_rate))
    white = rng.standard_normal(n)
    # classic 1/f approximation filter
    b = [0.049922035, -0.095993537, 0.050612699, -0.004408786]
    a = [1.0, -2.494956002, 2.017265875, -0.522189400]
    return _norm_rms(sig.lfilter(b, a, white))


def _noise_hum(duration_s, sample_rate, rng):
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    wobble = 0.2 * np.sin(2.0 * np.pi * 0.3 * t + rng.uniform(0, 2 * np.pi))
    phase = 2.0 * np.pi * 50.0 * t + wobble
    amp = 1.0 + 0.2 * _slow_noise(rng, n, sample_rate, 0.5)
    hum = amp * (np.sin(phase) + 0.5 * np.sin(3 * phase) + 0.25 * np.sin(5 * phase))
    hum += 0.05 * rng.standard_normal(n)
    return _norm_rms(hum)


def _noise_babble(duration_s, sample_rate, rng, voices: int = 6):
    n = int(round(duration_s * sample_rate))
    acc = np.zeros(n)
    for _ in range(voices):
        child = np.random.default_rng(rng.integers(0, 2**63))
        acc += synth_speech(duration_s, sample_rate, child).samples
    return _norm_rms(acc)


def _noise_cafe(duration_s, sample_rate, rng):
    """Held-out far-end texture: dense babble plus transient clatter."""
    n = int(round(duration_s * sample_rate))
    base = _noise_babble(duration_s, sample_rate, rng, voices=10)
    clatter = np.zeros(n)
    n_hits = max(int(duration_s * 3), 1)
    for _ in range(n_hits):
        start = int(rng.integers(0, max(n - 400, 1)))
        width = int(rng.integers(80, 360))
        burst = rng.standard_normal(width)
        burst -= np.concatenate(([0.0], 0.7 * burst[:-1]))
        clatter[start : start + width] += burst * np.hanning(width) * 3.0
    return _norm_rms(base + 0.3 * clatter)


def _noise_announce(duration_s, sample_rate, rng):
    """Held-out near-end texture: gated speech-like bursts over low rumble."""
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    child = np.random.default_rng(rng.integers(0, 2**63))
    talker = synth_speech(duration_s, sample_rate, child).samples
    gate = 1.0 / (1.0 + np.exp(-6.0 * np.sin(2.0 * np.pi * 0.4 * t + rng.uniform(0, 2 * np.pi))))
    rumble = sig.lfilter([0.02], [1.0, -0.99], rng.standard_normal(n))
    return _norm_rms(_norm_rms(talker) * gate + 0.4 * _norm_rms(rumble))


NOISE_GENERATORS = {
    "white": _noise_white,
    "pink": _noise_pink,
    "babble": _noise_babble,
    "hum": _noise_hum,
    "cafe": _noise_cafe,
    "announce": _noise_announce,
}


def make_noise(noise_id: str, duration_s: float, sample_rate: int, rng) -> Waveform:
    try:
        gen = NOISE_GENERATORS[noise_id]
    except KeyError:
        raise ValueError(
            f"unknown noise {noise_id!r}; known: {sorted(NOISE_GENERATORS)}"
        ) from None
    return Waveform(gen(duration_s, sample_rate, rng), sample_rate)


# ---------------------------------------------------------------------------
# scenes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneCondition:
    """Everything that determines one scene: SNRs, noise ids, and the seed."""

    far_snr_db: float
    near_snr_db: float
    far_noise_id: str
    near_noise_id: str
    seed: int

    def __post_init__(self):
        if not (np.isfinite(self.far_snr_db) and np.isfinite(self.near_snr_db)):
            raise ValueError("SNRs must be finite")


@dataclass(frozen=True)
class Scene:
    """One synthesized utterance: s (clean), u (far noise), v (near noise), x = s+u."""

    s: Waveform
    u: Waveform
    v: Waveform
    x: Waveform
    condition: SceneCondition | None = None

    def __post_init__(self):
        lens = {len(self.s), len(self.u), len(self.v), len(self.x)}
        if len(lens) != 1:
            raise ValueError(f"scene components differ in length: {sorted(lens)}")


def make_scene(
    condition: SceneCondition, duration_s: float, sample_rate: int
) -> Scene:
    """Deterministically synthesize a scene from its condition.

    The near-end SNR is defined against the clean speech power, which also
    fixes the playback level thanks to the equal-power constraint downstream.
    """
    root = np.random.SeedSequence(condition.seed)
    rng_s, rng_u, rng_v = [np.random.default_rng(s) for s in root.spawn(3)]
    s = synth_speech(duration_s, sample_rate, rng_s)
    u0 = make_noise(condition.far_noise_id, duration_s, sample_rate, rng_u)
    v0 = make_noise(condition.near_noise_id, duration_s, sample_rate, rng_v)
    x, u = mix_at_snr(s, u0, condition.far_snr_db)
    _, v = mix_at_snr(s, v0, condition.near_snr_db)
    return Scene(s=s, u=u, v=v, x=x, condition=condition)
