"""Joint adversarial training of the enhancement stack.

One generator (noise-token encoder, denoiser, listening enhancer) trains
against two frozen-in-turn discriminators that regress normalized metric
scores. Per scene the schedule is strictly alternating: one discriminator
step with the generator frozen, then one generator step with the
discriminators frozen. The generator objective is

    L = L_int + alpha * L_qua + beta * L_sisnr

where L_int and L_qua are squared residuals of the discriminator scores
against the maximum normalized targets, and L_sisnr is the negated
scale-invariant SNR of the denoised signal (negated so that minimizing the
loss raises SI-SNR; the raw metric is a reward).

Runs are deterministic given the seed. Every run writes a manifest - a
line-delimited key=value log of the config, the frozen logistic
normalizers, loss curves, validation summaries, and checkpoint paths -
sufficient to reproduce the run bit for bit from the same dataset.

`enhance` routes a noisy input through any of the seven supported system
compositions, from plain passthrough to the fully conditioned joint model.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from typing import Iterable

import numpy as np

from .autodiff import Adam, Tensor, concat, no_grad
from .baseline import dsppipe, wiener_enhance
from .dataset import Scene, SceneRecord, read_manifest
from .dsp import ComplexSpectrogram, StftConfig, Waveform, istft, stft
from .metrics import (
    estoi,
    fit_logistic,
    log_spectral_distance,
    logistic_normalize,
    seg_snr,
    si_snr,
)
from .models import (
    ModelBundle,
    _safe_mag,
    apply_le_gains,
    crn_forward,
    istft_tensor,
    le_forward,
    load_bundle,
    make_bundle,
    noise_token_forward,
    save_bundle,
)
from .noisepsd import estimate_noise_psd, psd_feature

__all__ = [
    "SYSTEMS",
    "TrainConfig",
    "RunManifest",
    "si_snr_loss",
    "disc_loss",
    "joint_loss",
    "fit_normalizers",
    "train",
    "enhance",
    "compose_neuralpipe",
    "read_run_manifest",
    "write_run_manifest",
]

SYSTEMS = ("noisy", "noisy+nr", "noisy+le", "dsppipe", "neuralpipe", "joint", "joint+nt")

_MODES = ("joint", "nr", "le")

# keeps the SI-SNR ratio finite when the residual vanishes (perfect
# reconstruction); the metric-side implementation clamps instead, which
# would kill the gradient here
_SISNR_EPS = 1e-8

_INIT_SCHEME = (
    "kaiming-uniform conv and linear weights, orthogonal lstm recurrence "
    "with unit forget-gate bias, zero-initialized le output head"
)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters and run controls for one training run.

    alpha weighs the quality-discriminator residual, beta the negated
    SI-SNR term. t_int and t_qua are the score targets the generator is
    pushed toward (1 = maximum normalized score). mode selects what is
    trained: the full joint system, the denoiser alone (SI-SNR only), or
    the listening enhancer alone on clean input.
    """

    steps: int
    seed: int = 0
    alpha: float = 0.6
    beta: float = 0.005
    lr_gen: float = 2e-4
    lr_disc: float = 1e-4
    batch: int = 1
    profile: str = "tiny"
    mode: str = "joint"
    use_noise_token: bool = True
    t_int: float = 1.0
    t_qua: float = 1.0
    val_every: int = 500
    crop_s: float | None = None
    fit_scenes: int = 32

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.alpha < 0.0 or self.beta < 0.0:
            raise ValueError("loss weights alpha and beta must be >= 0")
        if self.lr_gen <= 0.0 or self.lr_disc <= 0.0:
            raise ValueError("learning rates must be > 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {_MODES}")
        if self.profile not in ("tiny", "full", "paper"):
            raise ValueError(f"unknown profile {self.profile!r}; expected tiny or paper")
        if self.val_every < 0:
            raise ValueError("val_every must be >= 0 (0 disables periodic validation)")
        if self.crop_s is not None and self.crop_s <= 0.0:
            raise ValueError("crop_s must be positive when set")
        if self.fit_scenes < 2:
            raise ValueError("fit_scenes must be >= 2")

    def snapshot(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = repr(v) if isinstance(v, float) else str(v)
        return out


# ---------------------------------------------------------------------------
# run manifest
# ---------------------------------------------------------------------------


@dataclass
class RunManifest:
    """Everything needed to reproduce and audit one run.

    Serialized as line-delimited key=value records: single facts as one
    `key=value` per line, loss-curve records as tab-joined fields starting
    with `step=`, validation records starting with `val_step=`.
    """

    config: dict[str, str]
    logistic: dict[str, tuple[float, float]] = field(default_factory=dict)
    init_scheme: str = _INIT_SCHEME
    loss_curve: list[dict[str, float]] = field(default_factory=list)
    val_records: list[dict[str, float]] = field(default_factory=list)
    checkpoints: dict[str, str] = field(default_factory=dict)
    reports: dict[str, str] = field(default_factory=dict)
    status: str = "complete"
    last_good_step: int = 0


def _fmt(v) -> str:
    return repr(float(v))


def write_run_manifest(manifest: RunManifest, path: str) -> None:
    lines = [
        f"run.status={manifest.status}",
        f"run.last_good_step={manifest.last_good_step}",
        f"init.scheme={manifest.init_scheme}",
    ]
    for k, v in manifest.config.items():
        lines.append(f"config.{k}={v}")
    for name, (m, k) in manifest.logistic.items():
        lines.append(f"logistic.{name}.m={_fmt(m)}")
        lines.append(f"logistic.{name}.k={_fmt(k)}")
    for label, rel in manifest.checkpoints.items():
        lines.append(f"checkpoint.{label}={rel}")
    for label, rel in manifest.reports.items():
        lines.append(f"report.{label}={rel}")
    for rec in manifest.loss_curve:
        parts = [f"step={int(rec['step'])}"]
        parts += [f"{k}={_fmt(v)}" for k, v in rec.items() if k != "step"]
        lines.append("\t".join(parts))
    for rec in manifest.val_records:
        parts = [f"val_step={int(rec['step'])}"]
        parts += [f"{k}={_fmt(v)}" for k, v in rec.items() if k != "step"]
        lines.append("\t".join(parts))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_run_manifest(path: str) -> RunManifest:
    manifest = RunManifest(config={})
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("step="):
                rec = {}
                for part in line.split("\t"):
                    k, v = part.split("=", 1)
                    rec[k] = float(v)
                manifest.loss_curve.append(rec)
                continue
            if line.startswith("val_step="):
                rec = {}
                for part in line.split("\t"):
                    k, v = part.split("=", 1)
                    rec["step" if k == "val_step" else k] = float(v)
                manifest.val_records.append(rec)
                continue
            key, value = line.split("=", 1)
            if key == "run.status":
                manifest.status = value
            elif key == "run.last_good_step":
                manifest.last_good_step = int(value)
            elif key == "init.scheme":
                manifest.init_scheme = value
            elif key.startswith("config."):
                manifest.config[key[len("config."):]] = value
            elif key.startswith("logistic."):
                _, name, param = key.split(".")
                m, k = manifest.logistic.get(name, (0.0, 0.0))
                if param == "m":
                    manifest.logistic[name] = (float(value), k)
                else:
                    manifest.logistic[name] = (m, float(value))
            elif key.startswith("checkpoint."):
                manifest.checkpoints[key[len("checkpoint."):]] = value
            elif key.startswith("report."):
                manifest.reports[key[len("report."):]] = value
            else:
                raise ValueError(f"unrecognized manifest line: {line}")
    return manifest


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def si_snr_loss(est: Tensor, ref: np.ndarray) -> Tensor:
    """Negated scale-invariant SNR in dB, differentiable in `est`.

    Matches the metric-side definition (zero-mean both, project the
    estimate onto the reference) but regularizes with a small epsilon
    instead of clamping, so the gradient never dies at the caps.
    """
    ref = np.asarray(ref, dtype=np.float64)
    ref = ref - ref.mean()
    est = est - est.mean()
    denom = float(np.dot(ref, ref)) + _SISNR_EPS
    ref_t = Tensor(ref)
    proj = (est * ref_t).sum() * (1.0 / denom)
    target = proj * ref_t
    resid = est - target
    ratio = (target.square().sum() + _SISNR_EPS) / (resid.square().sum() + _SISNR_EPS)
    return ratio.log() * (-10.0 / np.log(10.0))


def disc_loss(predictions: Tensor, truths) -> Tensor:
    """Mean squared error between discriminator scores and true scores."""
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.shape != truths.shape:
        raise ValueError(
            f"prediction shape {predictions.shape} does not match truths {truths.shape}"
        )
    return (predictions - Tensor(truths)).square().mean()


def _require_finite(name: str, t: Tensor) -> None:
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"{name} is non-finite")


def joint_loss(
    d_int,
    d_qua,
    y_mag: Tensor,
    s_tilde: Tensor,
    s: np.ndarray,
    v_mag: Tensor,
    s_mag: Tensor,
    config: TrainConfig,
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Joint objective: (L, L_int, L_qua, L_sisnr).

    The played signal y enters as its magnitude spectrogram (the
    discriminator input domain), conditioned on the near-end noise
    magnitude for intelligibility and on the clean magnitude for quality.
    s_tilde is the time-domain denoised signal scored against the clean
    reference s. Each component is checked finite before composing; a
    non-finite component aborts naming itself.
    """
    l_int = (d_int(y_mag, v_mag) - config.t_int).square().sum()
    l_qua = (d_qua(y_mag, s_mag) - config.t_qua).square().sum()
    l_sisnr = si_snr_loss(s_tilde, s)
    _require_finite("L_int", l_int)
    _require_finite("L_qua", l_qua)
    _require_finite("L_sisnr", l_sisnr)
    total = l_int + config.alpha * l_qua + config.beta * l_sisnr
    return total, l_int, l_qua, l_sisnr


# ---------------------------------------------------------------------------
# normalizer fitting
# ---------------------------------------------------------------------------

_NORM_METRICS = ("estoi", "seg_snr", "neg_lsd")


def fit_normalizers(
    records: list[SceneRecord], sample_count: int = 32
) -> dict[str, tuple[float, float]]:
    """Freeze logistic normalizers for the three discriminator targets.

    Per sampled scene the raw metrics are taken over three quality rungs -
    the noisy mix, a Wiener-denoised mix, and clean speech - so the fitted
    midpoint sits inside the span training will actually visit. Fit once,
    record in the run manifest, never refit.
    """
    sample = records[: min(sample_count, len(records))]
    if len(sample) < 1:
        raise ValueError("no scenes available to fit normalizers")
    buckets: dict[str, list[float]] = {name: [] for name in _NORM_METRICS}
    for rec in sample:
        scene = rec.load()
        sr = scene.s.sample_rate
        for cand in (scene.x, wiener_enhance(scene.x), scene.s):
            observed = Waveform(cand.samples + scene.v.samples, sr)
            buckets["estoi"].append(estoi(observed, scene.s))
            buckets["seg_snr"].append(seg_snr(cand, scene.s))
            buckets["neg_lsd"].append(-log_spectral_distance(cand, scene.s))
    return {name: fit_logistic(scores) for name, scores in buckets.items()}


def _norm_score(norms, name: str, raw: float) -> float:
    m, k = norms[name]
    return logistic_normalize(raw, m, k)


# ---------------------------------------------------------------------------
# per-scene working set
# ---------------------------------------------------------------------------


@dataclass
class _ScenePack:
    """Float views of one scene, ready to wrap as constant tensors."""

    scene_id: str
    sr: int
    n: int
    cfg: StftConfig
    s_t: np.ndarray
    x_t: np.ndarray
    v_t: np.ndarray
    x_re: np.ndarray
    x_im: np.ndarray
    s_re: np.ndarray
    s_im: np.ndarray
    x_mag: np.ndarray
    s_mag: np.ndarray
    v_mag: np.ndarray
    near_feat: np.ndarray


def _crop_scene(scene: Scene, crop_s: float, rng: np.random.Generator) -> Scene:
    n = scene.s.samples.shape[0]
    target = min(n, int(round(crop_s * scene.s.sample_rate)))
    start = int(rng.integers(0, n - target + 1))
    sl = slice(start, start + target)
    sr = scene.s.sample_rate
    return Scene(
        s=Waveform(scene.s.samples[sl], sr),
        u=Waveform(scene.u.samples[sl], sr),
        v=Waveform(scene.v.samples[sl], sr),
        x=Waveform(scene.x.samples[sl], sr),
        condition=scene.condition,
    )


def _prepare_scene(
    rec: SceneRecord,
    feat_cache: dict[str, np.ndarray] | None = None,
    crop_s: float | None = None,
    crop_rng: np.random.Generator | None = None,
) -> _ScenePack:
    scene = rec.load()
    if crop_s is not None:
        scene = _crop_scene(scene, crop_s, crop_rng)
    sr = scene.s.sample_rate
    cfg = StftConfig(sample_rate=sr)
    x_spec = stft(scene.x, cfg)
    s_spec = stft(scene.s, cfg)
    cacheable = feat_cache is not None and crop_s is None
    if cacheable and rec.scene_id in feat_cache:
        near_feat = feat_cache[rec.scene_id]
    else:
        near_feat = psd_feature(estimate_noise_psd(stft(scene.v, cfg))).data
        if cacheable:
            feat_cache[rec.scene_id] = near_feat
    return _ScenePack(
        scene_id=rec.scene_id,
        sr=sr,
        n=scene.s.samples.shape[0],
        cfg=cfg,
        s_t=scene.s.samples,
        x_t=scene.x.samples,
        v_t=scene.v.samples,
        x_re=np.ascontiguousarray(x_spec.data.real),
        x_im=np.ascontiguousarray(x_spec.data.imag),
        s_re=np.ascontiguousarray(s_spec.data.real),
        s_im=np.ascontiguousarray(s_spec.data.imag),
        x_mag=np.abs(x_spec.data),
        s_mag=np.abs(s_spec.data),
        v_mag=np.abs(stft(scene.v, cfg).data),
        near_feat=near_feat,
    )


@dataclass
class _GenGraph:
    """Live tensors of one generator forward pass."""

    s_re: Tensor
    s_im: Tensor
    s_mag: Tensor
    y_re: Tensor | None = None
    y_im: Tensor | None = None
    y_mag: Tensor | None = None
    s_tilde: Tensor | None = None
    le_scale: float = 1.0


def _generator_graph(
    bundle: ModelBundle, pack: _ScenePack, mode: str, need_time: bool
) -> _GenGraph:
    """Compose the generator on one scene.

    joint: noise token -> denoiser -> listening enhancer.
    nr: denoiser only (no enhancement head).
    le: listening enhancer on the clean signal (denoiser bypassed).
    """
    emb = None
    if mode == "le":
        s_re, s_im = Tensor(pack.s_re), Tensor(pack.s_im)
        s_mag = _safe_mag(s_re, s_im)
    else:
        if bundle.uses_noise_token:
            emb, _ = bundle.noise_token(Tensor(pack.x_mag))
        _, _, s_re, s_im = bundle.crn(Tensor(pack.x_re), Tensor(pack.x_im), emb)
        s_mag = _safe_mag(s_re, s_im)
    graph = _GenGraph(s_re=s_re, s_im=s_im, s_mag=s_mag)
    if mode != "nr":
        alpha, _ = bundle.le(s_mag, Tensor(pack.near_feat), emb)
        y_re, y_im, scale, _ = apply_le_gains(alpha, s_re, s_im)
        graph.y_re, graph.y_im = y_re, y_im
        graph.y_mag = _safe_mag(y_re, y_im)
        graph.le_scale = scale
    if need_time:
        graph.s_tilde = istft_tensor(s_re, s_im, pack.cfg, pack.n)
    return graph


def _np_wave(re: np.ndarray, im: np.ndarray, pack: _ScenePack) -> Waveform:
    spec = ComplexSpectrogram(re + 1j * im, pack.cfg, pack.n)
    return istft(spec)


# ---------------------------------------------------------------------------
# training steps
# ---------------------------------------------------------------------------

# reference signals rotated through discriminator updates for score
# diversity: clean, noisy, current denoised
_D_REFS = ("clean", "noisy", "denoised")


def _candidate_truths(wave: Waveform, pack: _ScenePack, norms) -> tuple[np.ndarray, np.ndarray]:
    s_ref = Waveform(pack.s_t, pack.sr)
    observed = Waveform(wave.samples + pack.v_t, pack.sr)
    t_int = np.array([_norm_score(norms, "estoi", estoi(observed, s_ref))])
    t_qua = np.array(
        [
            _norm_score(norms, "seg_snr", seg_snr(wave, s_ref)),
            _norm_score(norms, "neg_lsd", -log_spectral_distance(wave, s_ref)),
        ]
    )
    return t_int, t_qua


def _disc_step(
    bundle: ModelBundle,
    opt_d: Adam,
    packs: list[_ScenePack],
    step_index: int,
    config: TrainConfig,
    norms,
) -> float:
    """One discriminator update on the current generator output plus one
    rotating reference signal per scene. The generator stays frozen (its
    forward runs without gradients)."""
    opt_d.zero_grad()
    preds_int, preds_qua, truth_int, truth_qua = [], [], [], []
    for pack in packs:
        with no_grad():
            g = _generator_graph(bundle, pack, config.mode, need_time=False)
        candidates = [(g.y_mag.data, _np_wave(g.y_re.data, g.y_im.data, pack))]
        ref = _D_REFS[step_index % len(_D_REFS)]
        if ref == "clean":
            candidates.append((pack.s_mag, Waveform(pack.s_t, pack.sr)))
        elif ref == "noisy":
            candidates.append((pack.x_mag, Waveform(pack.x_t, pack.sr)))
        else:
            candidates.append(
                (g.s_mag.data, _np_wave(g.s_re.data, g.s_im.data, pack))
            )
        v_mag_t = Tensor(pack.v_mag)
        s_mag_t = Tensor(pack.s_mag)
        for mag, wave in candidates:
            t_int, t_qua = _candidate_truths(wave, pack, norms)
            cand_t = Tensor(mag)
            preds_int.append(bundle.d_int(cand_t, v_mag_t))
            preds_qua.append(bundle.d_qua(cand_t, s_mag_t))
            truth_int.append(t_int)
            truth_qua.append(t_qua)
    loss = disc_loss(concat(preds_int), np.concatenate(truth_int)) + disc_loss(
        concat(preds_qua), np.concatenate(truth_qua)
    )
    _require_finite("discriminator loss", loss)
    loss.backward()
    opt_d.step()
    return float(loss.data)


def _gen_step(
    bundle: ModelBundle,
    opt_g: Adam,
    packs: list[_ScenePack],
    config: TrainConfig,
) -> dict[str, float]:
    """One generator update; discriminators contribute gradients to the
    generator only (their own parameters are stepped solely by the
    discriminator optimizer)."""
    opt_g.zero_grad()
    sums: dict[str, float] = {}
    for pack in packs:
        if config.mode == "nr":
            g = _generator_graph(bundle, pack, "nr", need_time=True)
            l_sisnr = si_snr_loss(g.s_tilde, pack.s_t)
            _require_finite("L_sisnr", l_sisnr)
            total = l_sisnr
            parts = {"l_sisnr": float(l_sisnr.data)}
        elif config.mode == "le":
            g = _generator_graph(bundle, pack, "le", need_time=False)
            l_int = (bundle.d_int(g.y_mag, Tensor(pack.v_mag)) - config.t_int).square().sum()
            l_qua = (bundle.d_qua(g.y_mag, Tensor(pack.s_mag)) - config.t_qua).square().sum()
            _require_finite("L_int", l_int)
            _require_finite("L_qua", l_qua)
            total = l_int + config.alpha * l_qua
            parts = {"l_int": float(l_int.data), "l_qua": float(l_qua.data)}
        else:
            g = _generator_graph(bundle, pack, "joint", need_time=True)
            total, l_int, l_qua, l_sisnr = joint_loss(
                bundle.d_int,
                bundle.d_qua,
                g.y_mag,
                g.s_tilde,
                pack.s_t,
                Tensor(pack.v_mag),
                Tensor(pack.s_mag),
                config,
            )
            parts = {
                "l_int": float(l_int.data),
                "l_qua": float(l_qua.data),
                "l_sisnr": float(l_sisnr.data),
            }
        total.backward()
        for k, v in parts.items():
            sums[k] = sums.get(k, 0.0) + v
    if len(packs) > 1:
        inv = 1.0 / len(packs)
        for p in opt_g.params.values():
            if p.grad is not None:
                p.grad *= inv
    opt_g.step()
    means = {k: v / len(packs) for k, v in sums.items()}
    if config.mode == "nr":
        means["loss"] = means["l_sisnr"]
    elif config.mode == "le":
        means["loss"] = means["l_int"] + config.alpha * means["l_qua"]
    else:
        means["loss"] = (
            means["l_int"]
            + config.alpha * means["l_qua"]
            + config.beta * means["l_sisnr"]
        )
    return means


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _validate(
    bundle: ModelBundle,
    val_recs: list[SceneRecord],
    config: TrainConfig,
    norms,
    step: int,
    feat_cache: dict[str, np.ndarray],
) -> dict[str, float]:
    """Summary metrics on the validation split at one checkpoint.

    Records mean SI-SNR of the denoised signal, mean observed ESTOI before
    and after enhancement, and the intelligibility discriminator's
    regression MSE next to the constant-mean predictor it must beat.
    """
    si_sums, e_st_sums, e_y_sums = [], [], []
    sq_err, truths = [], []
    for rec in val_recs:
        pack = _prepare_scene(rec, feat_cache)
        with no_grad():
            g = _generator_graph(bundle, pack, config.mode, need_time=False)
        s_ref = Waveform(pack.s_t, pack.sr)
        stilde = _np_wave(g.s_re.data, g.s_im.data, pack)
        si_sums.append(si_snr(stilde, s_ref))
        e_st_sums.append(estoi(Waveform(stilde.samples + pack.v_t, pack.sr), s_ref))
        if g.y_mag is not None:
            y_wave = _np_wave(g.y_re.data, g.y_im.data, pack)
            observed = Waveform(y_wave.samples + pack.v_t, pack.sr)
            e_y_sums.append(estoi(observed, s_ref))
            if norms:
                truth = _norm_score(norms, "estoi", e_y_sums[-1])
                with no_grad():
                    pred = bundle.d_int(Tensor(g.y_mag.data), Tensor(pack.v_mag))
                sq_err.append(float((pred.data[0] - truth) ** 2))
                truths.append(truth)
    rec_out: dict[str, float] = {
        "step": float(step),
        "si_snr_stilde": float(np.mean(si_sums)),
        "estoi_stilde": float(np.mean(e_st_sums)),
    }
    if e_y_sums:
        rec_out["estoi_y"] = float(np.mean(e_y_sums))
    if truths:
        t = np.asarray(truths)
        rec_out["d_int_mse"] = float(np.mean(sq_err))
        rec_out["d_int_const_mse"] = float(np.mean((t - t.mean()) ** 2))
    return rec_out


def _write_val_report(
    bundle: ModelBundle,
    val_recs: list[SceneRecord],
    config: TrainConfig,
    norms,
    step: int,
    out_dir: str,
) -> str:
    from . import evaluate as _evaluate

    if config.mode == "nr":
        systems = ("noisy", "noisy+nr")
    elif config.mode == "le":
        systems = ("noisy", "noisy+le")
    else:
        systems = ("noisy", "joint+nt" if bundle.uses_noise_token else "joint")
    report = _evaluate.evaluate_records(
        val_recs, systems, bundle=bundle, norms=norms or None
    )
    rel = f"val_step_{step:06d}.csv"
    report.write(os.path.join(out_dir, rel))
    return rel


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------


def _scene_stream(recs: list[SceneRecord], rng: np.random.Generator):
    while True:
        for i in rng.permutation(len(recs)):
            yield recs[int(i)]


def _save(bundle: ModelBundle, out_dir: str, label: str, step: int,
          manifest: RunManifest, config: TrainConfig) -> None:
    rel = f"{label}.ckpt"
    save_bundle(
        bundle,
        os.path.join(out_dir, rel),
        {"step": step, "mode": config.mode, "seed": config.seed},
    )
    manifest.checkpoints[label] = rel


def train(dataset, config: TrainConfig, out_dir: str) -> RunManifest:
    """Run one training job; returns the manifest after writing it to disk.

    `dataset` is a scene-manifest path or a list of scene records. The
    run directory receives checkpoints (`init`, periodic `step_NNNNNN`,
    `final`), per-checkpoint validation reports, and `run_manifest.txt`.
    A non-finite loss aborts the run: the manifest records the last good
    step and a `last_good` checkpoint is written before the error is
    re-raised.
    """
    records = read_manifest(dataset) if isinstance(dataset, str) else list(dataset)
    train_recs = [r for r in records if r.split == "train"]
    val_recs = [r for r in records if r.split == "val"]
    if not train_recs:
        raise ValueError("dataset has no training scenes")

    os.makedirs(out_dir, exist_ok=True)
    use_nt = config.use_noise_token and config.mode == "joint"
    bundle = make_bundle(
        profile=config.profile,
        use_noise_token=use_nt,
        k_int=1,
        k_qua=2,
        seed=config.seed,
    )
    opt_g = Adam(bundle.generator_parameters(), lr=config.lr_gen)
    opt_d = None
    norms: dict[str, tuple[float, float]] = {}
    if config.mode != "nr":
        opt_d = Adam(bundle.discriminator_parameters(), lr=config.lr_disc)
        norms = fit_normalizers(train_recs, config.fit_scenes)

    manifest = RunManifest(config=config.snapshot(), logistic=dict(norms))
    manifest_path = os.path.join(out_dir, "run_manifest.txt")
    feat_cache: dict[str, np.ndarray] = {}

    order_rng = np.random.default_rng([config.seed, 0x5CE])
    crop_rng = np.random.default_rng([config.seed, 0xC20])
    stream = _scene_stream(train_recs, order_rng)

    _save(bundle, out_dir, "init", 0, manifest, config)
    if val_recs:
        manifest.val_records.append(
            _validate(bundle, val_recs, config, norms, 0, feat_cache)
        )

    step = 0
    try:
        for step in range(1, config.steps + 1):
            batch = [next(stream) for _ in range(config.batch)]
            packs = [
                _prepare_scene(rec, feat_cache, config.crop_s, crop_rng)
                for rec in batch
            ]
            rec_out: dict[str, float] = {"step": float(step)}
            if opt_d is not None:
                rec_out["d_loss"] = _disc_step(
                    bundle, opt_d, packs, step - 1, config, norms
                )
            rec_out.update(_gen_step(bundle, opt_g, packs, config))
            manifest.loss_curve.append(rec_out)
            manifest.last_good_step = step

            at_cadence = config.val_every and step % config.val_every == 0
            if at_cadence and step != config.steps:
                label = f"step_{step:06d}"
                _save(bundle, out_dir, label, step, manifest, config)
                if val_recs:
                    manifest.val_records.append(
                        _validate(bundle, val_recs, config, norms, step, feat_cache)
                    )
                    manifest.reports[label] = _write_val_report(
                        bundle, val_recs, config, norms, step, out_dir
                    )
    except FloatingPointError as err:
        manifest.status = f"aborted at step {step}: {err}"
        manifest.last_good_step = step - 1
        _save(bundle, out_dir, "last_good", step - 1, manifest, config)
        write_run_manifest(manifest, manifest_path)
        raise RuntimeError(
            f"training aborted at step {step} ({err}); manifest at {manifest_path}"
        ) from err

    _save(bundle, out_dir, "final", config.steps, manifest, config)
    if val_recs:
        if config.steps > 0:
            manifest.val_records.append(
                _validate(bundle, val_recs, config, norms, config.steps, feat_cache)
            )
        manifest.reports["final"] = _write_val_report(
            bundle, val_recs, config, norms, config.steps, out_dir
        )
    write_run_manifest(manifest, manifest_path)
    return manifest


# ---------------------------------------------------------------------------
# inference-time system routing
# ---------------------------------------------------------------------------


def _fit_length(samples: np.ndarray, n: int) -> np.ndarray:
    """Trim or cyclically extend a noise reference to n samples."""
    if samples.shape[0] >= n:
        return samples[:n]
    reps = int(np.ceil(n / samples.shape[0]))
    return np.tile(samples, reps)[:n]


def _near_feature(v_ref: Waveform, x: Waveform, cfg: StftConfig) -> np.ndarray:
    v = Waveform(_fit_length(v_ref.samples, x.samples.shape[0]), x.sample_rate)
    return psd_feature(estimate_noise_psd(stft(v, cfg))).data


def _zeros_embedding(bundle: ModelBundle) -> np.ndarray | None:
    dim = bundle.crn.config.embedding_dim
    return np.zeros(dim) if dim else None


def enhance(
    x: Waveform,
    v_ref: Waveform | None,
    bundle: ModelBundle | None = None,
    system: str = "noisy",
) -> Waveform:
    """Run one noisy utterance through the chosen system composition.

    v_ref is the near-end noise reference; only the listening-enhancement
    systems consult it. joint and joint+nt share one model: joint
    substitutes a zero conditioning embedding where joint+nt feeds the
    noise-token encoder's output.
    """
    if system not in SYSTEMS:
        raise ValueError(
            f"unknown system {system!r}; valid systems: {', '.join(SYSTEMS)}"
        )
    if system == "noisy":
        return Waveform(x.samples.copy(), x.sample_rate)
    if system == "dsppipe":
        return dsppipe(x)
    if bundle is None:
        raise ValueError(f"system {system!r} needs a model checkpoint")
    cfg = StftConfig(sample_rate=x.sample_rate)
    x_spec = stft(x, cfg)

    if system == "joint+nt":
        if not bundle.uses_noise_token:
            raise ValueError(
                "bundle has no noise-token module; use system 'joint' or train with "
                "the noise token enabled"
            )
        emb = noise_token_forward(bundle.noise_token, x_spec.magnitude())
    else:
        emb = _zeros_embedding(bundle)

    if system == "noisy+nr":
        _, _, _, s_wave = crn_forward(bundle.crn, x_spec, emb)
        return s_wave

    if v_ref is None:
        raise ValueError(f"system {system!r} needs a near-end noise reference")
    feat = _near_feature(v_ref, x, cfg)

    if system == "noisy+le":
        _, _, y_wave = le_forward(bundle.le, x_spec, feat, emb)
        return y_wave

    # neuralpipe / joint / joint+nt: denoise, then enhance
    _, _, s_spec, _ = crn_forward(bundle.crn, x_spec, emb)
    _, _, y_wave = le_forward(bundle.le, s_spec, feat, emb)
    return y_wave


def compose_neuralpipe(nr_ckpt: str, le_ckpt: str) -> ModelBundle:
    """Frozen composition of separately pretrained denoiser and enhancer.

    Takes the denoiser weights from the first checkpoint and the enhancer
    weights from the second; the two must share profile and architecture.
    """
    nr_bundle, nr_meta = load_bundle(nr_ckpt)
    le_bundle, le_meta = load_bundle(le_ckpt)
    if nr_meta["profile"] != le_meta["profile"]:
        raise ValueError(
            f"profile mismatch: NR checkpoint is {nr_meta['profile']!r}, "
            f"LE checkpoint is {le_meta['profile']!r}"
        )
    state = nr_bundle.state_dict()
    le_state = le_bundle.state_dict()
    for key in state:
        if key.startswith("le."):
            if key not in le_state:
                raise ValueError(
                    f"LE checkpoint does not provide parameter {key!r}"
                )
            state[key] = le_state[key]
    nr_bundle.load_state_dict(state)
    return nr_bundle
