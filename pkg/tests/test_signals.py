"""Signal model: SNR-exact mixing, synthetic speech and noise properties."""

import numpy as np
import pytest

from clearlink.dsp import Waveform
from clearlink.signals import (
    NOISE_GENERATORS,
    SceneCondition,
    make_noise,
    make_scene,
    mix_at_snr,
    observe,
    synth_speech,
)

FS = 16000


def _measured_snr_db(sig: Waveform, noi: Waveform) -> float:
    return 10.0 * np.log10(sig.power() / noi.power())


# --- mixing -------------------------------------------------------------------

def test_mix_hits_requested_snr_exactly():
    rng = np.random.default_rng(0)
    s = Waveform(0.1 * rng.standard_normal(8000), FS)
    for snr in (-11.0, -3.0, 0.0, 4.0, 12.0):
        n = Waveform(rng.standard_normal(8000), FS)
        mix, scaled = mix_at_snr(s, n, snr)
        assert abs(_measured_snr_db(s, scaled) - snr) < 1e-9
        assert np.allclose(mix.samples - scaled.samples, s.samples, atol=1e-12)


def test_mix_scale_matches_closed_form():
    # equal-power inputs at +6 dB: noise scale is 10^(-6/20) ~= 0.501187
    t = np.arange(8000) / FS
    s = Waveform(np.sin(2 * np.pi * 450 * t), FS)
    n = Waveform(np.cos(2 * np.pi * 1333 * t), FS)
    _, scaled = mix_at_snr(s, n, 6.0)
    ratio = scaled.samples[100] / n.samples[100]
    assert ratio == pytest.approx(10 ** (-6.0 / 20.0), rel=1e-9)


def test_mix_never_touches_the_signal():
    rng = np.random.default_rng(1)
    raw = 0.1 * rng.standard_normal(4000)
    s = Waveform(raw, FS)
    mix_at_snr(s, Waveform(rng.standard_normal(4000), FS), 3.0)
    assert np.array_equal(s.samples, raw)


def test_mix_validation():
    s = Waveform(np.ones(100) * 0.1, FS)
    with pytest.raises(ValueError, match="length"):
        mix_at_snr(s, Waveform(np.ones(99), FS), 0.0)
    with pytest.raises(ValueError, match="rate"):
        mix_at_snr(s, Waveform(np.ones(100), 8000), 0.0)
    with pytest.raises(ValueError, match="zero power"):
        mix_at_snr(s, Waveform(np.zeros(100), FS), 0.0)
    with pytest.raises(ValueError, match="zero power"):
        mix_at_snr(Waveform(np.zeros(100), FS), s, 0.0)


def test_observe_is_elementwise_sum():
    rng = np.random.default_rng(2)
    y = Waveform(rng.standard_normal(500) * 0.1, FS)
    v = Waveform(rng.standard_normal(500) * 0.1, FS)
    o = observe(y, v)
    assert np.array_equal(o.samples, y.samples + v.samples)
    with pytest.raises(ValueError):
        observe(y, Waveform(np.zeros(400), FS))


# --- synthetic speech ------------------------------------------------------------

def test_speech_crest_exceeds_white_excitation():
    # amplitude-modulated harmonic pulses are peakier than gaussian noise
    for seed in range(10):
        rng = np.random.default_rng(seed)
        speech, parts = synth_speech(1.0, FS, rng, return_parts=True)
        assert speech.crest_factor() > parts["excitation"].crest_factor()


def test_speech_level_and_length():
    speech = synth_speech(1.5, FS, np.random.default_rng(3))
    assert len(speech) == 24000
    assert speech.rms() == pytest.approx(0.05, rel=1e-6)
    assert np.all(np.isfinite(speech.samples))


def test_speech_energy_is_mostly_below_4khz():
    speech = synth_speech(1.0, FS, np.random.default_rng(4))
    spec = np.abs(np.fft.rfft(speech.samples)) ** 2
    freqs = np.fft.rfftfreq(len(speech), 1.0 / FS)
    low = np.sum(spec[freqs < 4000])
    assert low / np.sum(spec) > 0.8


def test_speech_is_deterministic_per_seed():
    a = synth_speech(0.5, FS, np.random.default_rng(7))
    b = synth_speech(0.5, FS, np.random.default_rng(7))
    c = synth_speech(0.5, FS, np.random.default_rng(8))
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


# --- noise generators -------------------------------------------------------------

@pytest.mark.parametrize("noise_id", sorted(NOISE_GENERATORS))
def test_noise_generators_basic_contract(noise_id):
    w = make_noise(noise_id, 0.7, FS, np.random.default_rng(11))
    assert len(w) == int(0.7 * FS)
    assert np.all(np.isfinite(w.samples))
    assert w.rms() == pytest.approx(1.0, rel=1e-6)
    again = make_noise(noise_id, 0.7, FS, np.random.default_rng(11))
    assert np.array_equal(w.samples, again.samples)


def test_unknown_noise_id():
    with pytest.raises(ValueError, match="unknown noise"):
        make_noise("brownian", 1.0, FS, np.random.default_rng(0))


def _octave_power_db(w: Waveform, lo: float, hi: float) -> float:
    spec = np.abs(np.fft.rfft(w.samples)) ** 2
    freqs = np.fft.rfftfreq(len(w), 1.0 / w.sample_rate)
    band = spec[(freqs >= lo) & (freqs < hi)]
    return 10.0 * np.log10(np.mean(band))


def test_pink_noise_tilts_down():
    rng = np.random.default_rng(5)
    pink = make_noise("pink", 2.0, FS, rng)
    low = _octave_power_db(pink, 100, 400)
    high = _octave_power_db(pink, 2000, 8000)
    assert low - high > 6.0
    white = make_noise("white", 2.0, FS, np.random.default_rng(5))
    assert abs(_octave_power_db(white, 100, 400) - _octave_power_db(white, 2000, 8000)) < 3.0


def test_hum_peaks_at_mains_frequency():
    hum = make_noise("hum", 2.0, FS, np.random.default_rng(6))
    spec = np.abs(np.fft.rfft(hum.samples))
    freqs = np.fft.rfftfreq(len(hum), 1.0 / FS)
    peak = freqs[np.argmax(spec)]
    assert 48.0 < peak < 52.0


# --- scenes -----------------------------------------------------------------------

def test_make_scene_invariants():
    cond = SceneCondition(
        far_snr_db=8.0, near_snr_db=-7.0, far_noise_id="pink",
        near_noise_id="babble", seed=123,
    )
    scene = make_scene(cond, 1.0, FS)
    assert len(scene.s) == len(scene.u) == len(scene.v) == len(scene.x) == FS
    assert np.allclose(scene.x.samples, scene.s.samples + scene.u.samples, atol=1e-12)
    assert abs(_measured_snr_db(scene.s, scene.u) - 8.0) < 0.01
    assert abs(_measured_snr_db(scene.s, scene.v) - (-7.0)) < 0.01


def test_make_scene_deterministic():
    cond = SceneCondition(4.0, -3.0, "white", "hum", seed=99)
    a = make_scene(cond, 0.5, FS)
    b = make_scene(cond, 0.5, FS)
    assert np.array_equal(a.x.samples, b.x.samples)
    assert np.array_equal(a.v.samples, b.v.samples)


def test_scene_condition_validation():
    with pytest.raises(ValueError):
        SceneCondition(np.inf, 0.0, "white", "white", 0)
