"""WAV round trips and format enforcement."""

import numpy as np
import pytest
from scipy.io import wavfile

from clearlink.audio_io import wav_read, wav_write
from clearlink.dsp import Waveform

FS = 16000


def test_float32_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, 4000).astype(np.float32).astype(np.float64)
    p = tmp_path / "a.wav"
    wav_write(Waveform(x, FS), p)
    back = wav_read(p)
    assert back.sample_rate == FS
    assert np.array_equal(back.samples, x)


def test_pcm16_roundtrip_quantization(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.uniform(-0.9, 0.9, 4000)
    p = tmp_path / "b.wav"
    wav_write(Waveform(x, FS), p, encoding="pcm16")
    back = wav_read(p)
    assert np.max(np.abs(back.samples - x)) <= 0.5 / 32767 + 1e-12
    # full-scale values survive exactly with the symmetric 32767 scale
    wav_write(Waveform(np.array([-1.0, 0.0, 1.0]), FS), p, encoding="pcm16")
    assert np.array_equal(wav_read(p).samples, [-1.0, 0.0, 1.0])


def test_pcm16_clips_out_of_range(tmp_path):
    p = tmp_path / "c.wav"
    wav_write(Waveform(np.array([1.5, -2.0, 0.5]), FS), p, encoding="pcm16")
    back = wav_read(p)
    assert back.samples[0] == 1.0
    assert back.samples[1] == -1.0


def test_rejects_stereo(tmp_path):
    p = tmp_path / "stereo.wav"
    wavfile.write(p, FS, np.zeros((100, 2), dtype=np.float32))
    with pytest.raises(ValueError, match="mono"):
        wav_read(p)


def test_rejects_unsupported_dtype(tmp_path):
    p = tmp_path / "i32.wav"
    wavfile.write(p, FS, np.zeros(100, dtype=np.int32))
    with pytest.raises(ValueError, match="encoding"):
        wav_read(p)


def test_rejects_malformed_file(tmp_path):
    p = tmp_path / "junk.wav"
    p.write_bytes(b"this is not RIFF data at all")
    with pytest.raises(ValueError, match="cannot read"):
        wav_read(p)


def test_rejects_unknown_encoding(tmp_path):
    with pytest.raises(ValueError, match="encoding"):
        wav_write(Waveform(np.zeros(4), FS), tmp_path / "d.wav", encoding="mp3")
