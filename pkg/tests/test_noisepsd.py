"""Noise floor tracker: convergence against a long-run periodogram oracle,
causality, the bias-compensated floor bound, oracle mode, and the log feature.
"""

import numpy as np
import pytest

from clearlink.dsp import ComplexSpectrogram, StftConfig, Waveform, stft
from clearlink.noisepsd import (
    EstimatorParams,
    NoisePsd,
    NoiseTracker,
    estimate_noise_psd,
    oracle_noise_psd,
    psd_feature,
)
from clearlink.signals import make_noise, mix_at_snr, synth_speech

SR = 16000
CFG = StftConfig()


def _spec(w):
    if not isinstance(w, Waveform):
        w = Waveform(np.asarray(w, dtype=np.float64), SR)
    return stft(w, CFG)


def test_stationary_white_noise_converges_within_2db():
    rng = np.random.default_rng(0)
    noise = make_noise("white", 10.0, SR, rng)
    spec = _spec(noise)
    est = estimate_noise_psd(spec)
    true_psd = np.mean(np.square(np.abs(spec.data)), axis=0)  # long-run average
    tail = est.psd[-250:]  # last 2 s
    ratio_db = 10.0 * np.log10(np.mean(tail, axis=0) / true_psd)
    assert np.all(np.abs(ratio_db) <= 2.0), (
        f"worst bin {np.max(np.abs(ratio_db)):.2f} dB"
    )


def test_zeros_in_zeros_out():
    spec = ComplexSpectrogram(np.zeros((40, 257), dtype=np.complex128), CFG, SR)
    est = estimate_noise_psd(spec)
    assert est.psd.shape == (40, 257)
    assert np.all(est.psd == 0.0)


def _speech_with_pauses(rng, bursts=4, on_s=0.6, off_s=0.6):
    """Speech bursts separated by silences, the cadence floor tracking assumes."""
    parts = [np.zeros(int(0.3 * SR))]
    for _ in range(bursts):
        parts.append(synth_speech(on_s, SR, rng).samples)
        parts.append(np.zeros(int(off_s * SR)))
    return Waveform(np.concatenate(parts), SR)


def _speech_shaped_noise(speech, rng):
    """Stationary noise colored by the utterance's RMS spectrum."""
    env = np.sqrt(np.mean(np.square(np.abs(_spec(speech).data)), axis=0))
    env = np.maximum(env, 1e-4 * env.max())
    n = len(speech.samples)
    white = np.fft.rfft(rng.standard_normal(n))
    bin_hz = np.arange(env.shape[0]) * SR / CFG.fft_size
    white *= np.interp(np.fft.rfftfreq(n, 1.0 / SR), bin_hz, env)
    return Waveform(np.fft.irfft(white, n), SR)


def test_estimate_stays_below_longrun_noisy_power_at_0db():
    # speech in stationary speech-shaped noise at 0 dB: the tracker must ride
    # the noise floor, not the speech. Compared per cell against the per-bin
    # long-run average of the noisy periodogram (a single periodogram
    # realization dips below any converged estimate far too often to be a
    # meaningful bound). The speech has real pauses; a 96-frame minimum
    # window is blind to a talker who never stops.
    rng = np.random.default_rng(21)
    speech = _speech_with_pauses(rng)
    noise = _speech_shaped_noise(speech, rng)
    noisy, _ = mix_at_snr(speech, noise, 0.0)
    spec = _spec(noisy)
    est = estimate_noise_psd(spec)
    avg_power = np.mean(np.square(np.abs(spec.data)), axis=0)
    warm = est.psd[96:]
    frac_ok = np.mean(warm <= avg_power[None, :])
    assert frac_ok >= 0.99, f"only {frac_ok:.4f} of cells below the long-run power"


def test_causality_truncation_is_bit_exact():
    rng = np.random.default_rng(2)
    noisy, _ = mix_at_snr(
        synth_speech(2.0, SR, rng), make_noise("pink", 2.0, SR, rng), 5.0
    )
    spec = _spec(noisy)
    full = estimate_noise_psd(spec)
    t = 137  # deliberately not a subwindow boundary
    cut = ComplexSpectrogram(spec.data[:t], CFG, SR)
    partial = estimate_noise_psd(cut)
    assert np.array_equal(full.psd[:t], partial.psd)


def test_streaming_matches_batch():
    rng = np.random.default_rng(3)
    spec = _spec(make_noise("cafe", 1.0, SR, rng))
    batch = estimate_noise_psd(spec)
    tracker = NoiseTracker(spec.bins)
    power = np.square(np.abs(spec.data))
    rows = np.stack([tracker.step(power[t]) for t in range(spec.frames)])
    assert np.array_equal(batch.psd, rows)


def test_estimate_never_exceeds_bias_compensated_floor():
    rng = np.random.default_rng(4)
    noisy, _ = mix_at_snr(
        synth_speech(3.0, SR, rng), make_noise("white", 3.0, SR, rng), 0.0
    )
    spec = _spec(noisy)
    power = np.square(np.abs(spec.data))
    tracker = NoiseTracker(spec.bins)
    for t in range(spec.frames):
        row = tracker.step(power[t])
        assert np.all(row <= tracker.floor() * (1.0 + 1e-12)), f"frame {t}"


def test_rejects_non_finite_input():
    data = np.zeros((10, 257), dtype=np.complex128)
    data[3, 5] = np.nan
    spec = ComplexSpectrogram.__new__(ComplexSpectrogram)
    object.__setattr__(spec, "data", data)
    object.__setattr__(spec, "config", CFG)
    object.__setattr__(spec, "sample_rate", SR)
    with pytest.raises(ValueError, match="finite"):
        estimate_noise_psd(spec)
    with pytest.raises(ValueError):
        NoiseTracker(257).step(np.full(257, np.inf))


def test_param_validation():
    with pytest.raises(ValueError, match="alpha_s"):
        EstimatorParams(alpha_s=1.0)
    with pytest.raises(ValueError, match="min_window"):
        EstimatorParams(min_window=0)
    with pytest.raises(ValueError, match="bias"):
        EstimatorParams(bias=0.5)
    with pytest.raises(ValueError, match="subwindows"):
        EstimatorParams(min_window=96, subwindows=7)
    with pytest.raises(ValueError, match="alpha_d"):
        EstimatorParams(alpha_d=-0.1)
    with pytest.raises(ValueError, match="delta"):
        EstimatorParams(delta=0.0)


def test_psd_type_validation():
    with pytest.raises(ValueError, match="negative"):
        NoisePsd(psd=np.full((3, 4), -1.0))
    with pytest.raises(ValueError, match="finite"):
        NoisePsd(psd=np.full((3, 4), np.nan))
    with pytest.raises(ValueError, match="frames, bins"):
        NoisePsd(psd=np.zeros(5))


def test_oracle_mode_is_smoothed_true_periodogram():
    rng = np.random.default_rng(5)
    spec = _spec(make_noise("hum", 1.0, SR, rng))
    params = EstimatorParams()
    out = oracle_noise_psd(spec, params)
    power = np.square(np.abs(spec.data))
    acc = power[0].copy()
    assert np.array_equal(out.psd[0], acc)
    for t in range(1, spec.frames):
        acc = params.alpha_s * acc + (1 - params.alpha_s) * power[t]
        assert np.allclose(out.psd[t], acc, rtol=0, atol=1e-15)


def test_oracle_mode_constant_input_is_identity():
    data = np.full((30, 257), 2.0 + 0.0j)
    spec = ComplexSpectrogram(data, CFG, SR)
    out = oracle_noise_psd(spec)
    assert np.allclose(out.psd, 4.0, rtol=1e-12)


def test_psd_feature_log_contract():
    ones = NoisePsd(psd=np.ones((6, 257)))
    feat = psd_feature(ones)
    assert feat.shape == (6, 257)
    assert not feat.requires_grad
    assert np.all(np.abs(feat.data) < 1e-9)

    zeros = NoisePsd(psd=np.zeros((4, 257)))
    assert np.allclose(psd_feature(zeros).data, np.log(1e-10), rtol=1e-12)

    rng = np.random.default_rng(6)
    base = NoisePsd(psd=rng.uniform(0.5, 2.0, (5, 257)))
    scaled = NoisePsd(psd=base.psd * 10.0)
    shift = psd_feature(scaled).data - psd_feature(base).data
    assert np.allclose(shift, np.log(10.0), atol=1e-9)


def test_psd_feature_companion_frame_mismatch():
    psd = NoisePsd(psd=np.ones((6, 257)))
    companion = ComplexSpectrogram(np.zeros((7, 257), dtype=np.complex128), CFG, SR)
    with pytest.raises(ValueError, match="frame mismatch"):
        psd_feature(psd, companion)
    ok = ComplexSpectrogram(np.zeros((6, 257), dtype=np.complex128), CFG, SR)
    assert psd_feature(psd, ok).shape == (6, 257)
