"""Joint far-end noise reduction and near-end listening enhancement.

Library layout:

- `dsp`: waveform/spectrogram types, STFT/iSTFT, resampling, band analysis
- `audio_io`: float32/PCM16 WAV read and write
- `signals`: signal model, synthetic speech and noise, SNR-exact mixing
- `dataset`: scene grids, WAV layout, manifest
- `noisepsd`: causal noise PSD tracking
- `metrics`: SI-SNR, ESTOI, segmental SNR, LSD, logistic normalization
- `baseline`: Wiener far end, spectral-shaping + DRC near end
- `autodiff`: numpy reverse-mode engine, layers, optimizer, checkpoints
- `models`: mask-based denoiser, listening enhancer, noise conditioner,
  discriminators
- `training`: joint adversarial training loop and enhancement entry points
- `evaluate`: per-scene metric reports and aggregate tables
- `cli`: `clearlink` command line
"""

__version__ = "0.1.0"
