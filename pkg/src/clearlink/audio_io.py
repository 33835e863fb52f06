"""Mono WAV file reading and writing (PCM16 and IEEE float32).

RIFF parsing is delegated to scipy.io.wavfile; this wrapper enforces the
mono contract, normalizes PCM16 to [-1, 1] symmetrically (divide by 32767,
matching the rounding used on write), and keeps float32 round trips
bit-exact.
"""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from .dsp import Waveform

__all__ = ["wav_read", "wav_write"]

_PCM16_SCALE = 32767.0


def wav_read(path) -> Waveform:
    """Read a mono PCM16 or float32 WAV file."""
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise ValueError(f"cannot read WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise ValueError(
            f"{path}: only mono supported, got {data.shape[1]} channels"
        )
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / _PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    elif data.dtype == np.float64:
        samples = data
    else:
        raise ValueError(f"{path}: unsupported sample encoding {data.dtype}")
    return Waveform(samples, rate)


def wav_write(w: Waveform, path, encoding: str = "float32") -> None:
    """Write a waveform as float32 (default, lossless) or PCM16."""
    if encoding == "float32":
        wavfile.write(path, w.sample_rate, w.samples.astype(np.float32))
    elif encoding == "pcm16":
        clipped = np.clip(w.samples, -1.0, 1.0)
        ints = np.round(clipped * _PCM16_SCALE).astype(np.int16)
        wavfile.write(path, w.sample_rate, ints)
    else:
        raise ValueError(f"unknown encoding {encoding!r} (float32 or pcm16)")
