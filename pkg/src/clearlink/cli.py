"""Command line front end: synth, train, enhance, evaluate, gradcheck.

Every command is deterministic given its config file and seed. Contract
violations (bad config keys, unknown systems, missing checkpoints or
manifests, failed gradient checks) exit nonzero with a one-line error;
argparse handles unknown flags and invalid choices itself, also nonzero.

`gradcheck` doubles as the numerical test harness for the autodiff
stack: it checks every layer type against central differences at 1e-4
and the complete generator-to-discriminator composition on a six-frame
toy scene at 1e-3.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .audio_io import wav_read, wav_write
from .autodiff import Tensor, check_gradients
from .autodiff.layers import (
    CausalConv1d,
    Conv2d,
    ConvTranspose2d,
    CumulativeLayerNorm,
    FrameLayerNorm,
    Linear,
    LSTM,
    MultiHeadAttention,
    PReLULayer,
)
from .config import (
    dataset_spec_from,
    load_experiment,
    read_config,
    resolve_output_dir,
    train_config_from,
)
from .dataset import read_manifest, synthesize_dataset
from .dsp import StftConfig
from .models import (
    CrnConfig,
    CrnDenoiser,
    Discriminator,
    DiscriminatorConfig,
    LeGenConfig,
    LeGenerator,
    NoiseTokenConfig,
    NoiseTokenEncoder,
    _safe_mag,
    apply_le_gains,
    istft_tensor,
    load_bundle,
    make_bundle,
)
from .training import SYSTEMS, compose_neuralpipe, enhance, joint_loss, train
from .training import TrainConfig
from . import evaluate as evaluate_mod

__all__ = ["gradcheck_suite", "main"]

LAYER_TOL = 1e-4
END_TO_END_TOL = 1e-3

# systems that consume a trained checkpoint (neuralpipe takes two)
_CKPT_SYSTEMS = ("noisy+nr", "noisy+le", "joint", "joint+nt")


# ---------------------------------------------------------------------------
# gradient checks
# ---------------------------------------------------------------------------


class _Cotangent:
    """Fixed random output weights, drawn lazily per shape.

    check_gradients re-runs the loss for every probe, so the weighting
    must be a pure function of the outputs; fresh draws per call would
    turn the finite differences into noise.
    """

    def __init__(self, seed: int):
        self._rng = np.random.default_rng(seed)
        self._weights: dict[tuple, np.ndarray] = {}

    def __call__(self, out: Tensor, tag: str = "") -> Tensor:
        key = (tag, out.shape)
        if key not in self._weights:
            self._weights[key] = self._rng.standard_normal(out.shape)
        return (out * self._weights[key]).sum()


def _run_check(module, inputs: dict[str, Tensor], fn, tol: float, sample: int):
    tensors = dict(module.named_parameters()) if module is not None else {}
    tensors.update(inputs)
    return check_gradients(
        fn, tensors, tolerance=tol, sample_per_tensor=sample,
        rng=np.random.default_rng(99),
    )


def _check_linear():
    rng = np.random.default_rng(101)
    layer = Linear(5, 4, rng)
    x = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    w = _Cotangent(1)
    return _run_check(layer, {"x": x}, lambda: w(layer(x)), LAYER_TOL, 6)


def _check_conv2d():
    rng = np.random.default_rng(102)
    layer = Conv2d(2, 3, (2, 3), (1, 2), rng, pad=((1, 0), (1, 1)))
    x = Tensor(rng.standard_normal((2, 5, 8)), requires_grad=True)
    w = _Cotangent(2)
    return _run_check(layer, {"x": x}, lambda: w(layer(x)), LAYER_TOL, 6)


def _check_conv_transpose2d():
    rng = np.random.default_rng(103)
    layer = ConvTranspose2d(3, 2, (1, 3), (1, 2), rng, output_padding=(0, 1))
    x = Tensor(rng.standard_normal((3, 4, 5)), requires_grad=True)
    w = _Cotangent(3)
    return _run_check(layer, {"x": x}, lambda: w(layer(x)), LAYER_TOL, 6)


def _check_causal_conv1d():
    rng = np.random.default_rng(104)
    layer = CausalConv1d(3, 4, 3, rng)
    x = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
    w = _Cotangent(4)
    return _run_check(layer, {"x": x}, lambda: w(layer(x)), LAYER_TOL, 6)


def _check_lstm():
    rng = np.random.default_rng(105)
    layer = LSTM(4, 6, rng)
    x = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    w = _Cotangent(5)
    return _run_check(layer, {"x": x}, lambda: w(layer(x)), LAYER_TOL, 6)


def _check_frame_norm():
    rng = np.random.default_rng(106)
    layer = FrameLayerNorm(3, 4)
    x = Tensor(rng.standard_normal((3, 5, 4)), requires_grad=True)
    w = _Cotangent(6)
    return _run_check(layer, {"x": x}, lambda: w(layer(x)), LAYER_TOL, 6)


def _check_cumulative_norm():
    rng = np.random.default_rng(107)
    layer = CumulativeLayerNorm(3)
    x = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
    w = _Cotangent(7)
    return _run_check(layer, {"x": x}, lambda: w(layer(x)), LAYER_TOL, 6)


def _check_prelu():
    rng = np.random.default_rng(108)
    layer = PReLULayer(3)
    # keep inputs away from the kink at zero, where the derivative jumps
    mags = rng.uniform(0.2, 1.5, (3, 5, 4))
    signs = rng.choice([-1.0, 1.0], (3, 5, 4))
    x = Tensor(mags * signs, requires_grad=True)
    w = _Cotangent(8)
    return _run_check(layer, {"x": x}, lambda: w(layer(x)), LAYER_TOL, 6)


def _check_attention():
    rng = np.random.default_rng(109)
    layer = MultiHeadAttention(8, 2, rng)
    q = Tensor(rng.standard_normal((4, 8)), requires_grad=True)
    kv = Tensor(rng.standard_normal((3, 8)), requires_grad=True)
    w = _Cotangent(9)
    return _run_check(
        layer, {"q": q, "kv": kv}, lambda: w(layer(q, kv)[0]), LAYER_TOL, 4,
    )


# micro model geometry: 129 bins keeps every frequency ladder alive
# (129 -> 64 -> 31 -> 15 -> 7 -> 3 -> 1 unpadded, 129 -> ... -> 3 padded)
_MICRO_BINS = 129


def _check_denoiser():
    rng = np.random.default_rng(110)
    model = CrnDenoiser(
        CrnConfig(
            bins=_MICRO_BINS,
            encoder_channels=(2, 2, 3, 3, 4, 4),
            decoder_channels=(8, 8, 6, 6, 4, 4),
            lstm_layers=1,
            lstm_nodes=8,
        ),
        rng,
    )
    x_re = Tensor(rng.standard_normal((4, _MICRO_BINS)) * 0.1, requires_grad=True)
    x_im = Tensor(rng.standard_normal((4, _MICRO_BINS)) * 0.1, requires_grad=True)

    w = _Cotangent(10)

    def fn():
        _, _, s_re, s_im = model(x_re, x_im)
        return w(s_re, "re") + w(s_im, "im")

    return _run_check(model, {"x_re": x_re, "x_im": x_im}, fn, LAYER_TOL, 2)


def _check_enhancer():
    rng = np.random.default_rng(111)
    model = LeGenerator(
        LeGenConfig(
            bins=_MICRO_BINS, conv_channels=8, conv_layers=2, kernel=3,
            identity_init=False,
        ),
        rng,
    )
    s_mag = Tensor(np.abs(rng.standard_normal((4, _MICRO_BINS))) + 0.05,
                   requires_grad=True)
    feat = Tensor(rng.standard_normal((4, _MICRO_BINS)) - 4.0, requires_grad=True)

    w = _Cotangent(11)

    def fn():
        alpha, u = model(s_mag, feat)
        return w(alpha, "alpha") + w(u, "u")

    return _run_check(model, {"s_mag": s_mag, "feat": feat}, fn, LAYER_TOL, 2)


def _check_noise_token():
    rng = np.random.default_rng(112)
    model = NoiseTokenEncoder(
        NoiseTokenConfig(
            bins=_MICRO_BINS, conv_channels=(2, 2, 3, 3, 4, 4), lstm_nodes=8,
            n_tokens=3, token_dim=8, n_heads=2,
        ),
        rng,
    )
    x_mag = Tensor(np.abs(rng.standard_normal((4, _MICRO_BINS))) + 0.05,
                   requires_grad=True)
    w = _Cotangent(12)
    return _run_check(
        model, {"x_mag": x_mag}, lambda: w(model(x_mag)[0]), LAYER_TOL, 2,
    )


def _check_discriminator():
    rng = np.random.default_rng(113)
    model = Discriminator(
        DiscriminatorConfig(bins=_MICRO_BINS, channels=(2, 2, 3, 3, 4), out_dim=2),
        rng,
    )
    sig = Tensor(np.abs(rng.standard_normal((6, _MICRO_BINS))) + 0.05,
                 requires_grad=True)
    ctx = Tensor(np.abs(rng.standard_normal((6, _MICRO_BINS))) + 0.05,
                 requires_grad=True)
    w = _Cotangent(13)
    return _run_check(
        model, {"sig": sig, "ctx": ctx}, lambda: w(model(sig, ctx)), LAYER_TOL, 2,
    )


def _check_end_to_end():
    """Full composition on a six-frame toy scene at the training objective.

    Gradients flow from the joint loss through both discriminators, the
    equal-power rescale, the listening enhancer, the inverse STFT, the
    denoiser, and the noise token encoder, down to the input spectrogram.
    """
    rng = np.random.default_rng(114)
    bundle = make_bundle("tiny", use_noise_token=True, k_int=1, k_qua=2, seed=17)
    # the enhancement head starts identity (zero output weights), which
    # would zero the gradient of everything feeding it; move it off that
    # point so the whole path is exercised
    fc = bundle.le.fc.weight
    fc.data[...] = rng.standard_normal(fc.shape) * 0.05

    frames, bins = 6, 257
    cfg = StftConfig()
    n = 640
    x_re = Tensor(rng.standard_normal((frames, bins)) * 0.1, requires_grad=True)
    x_im = Tensor(rng.standard_normal((frames, bins)) * 0.1, requires_grad=True)
    near_feat = Tensor(rng.standard_normal((frames, bins)) - 4.0)
    v_mag = Tensor(np.abs(rng.standard_normal((frames, bins))) * 0.05)
    s_mag_ctx = Tensor(np.abs(rng.standard_normal((frames, bins))) * 0.05)
    s_ref = rng.standard_normal(n)
    tcfg = TrainConfig(steps=1)

    def fn():
        x_mag = _safe_mag(x_re, x_im)
        emb, _ = bundle.noise_token(x_mag)
        _, _, s_re, s_im = bundle.crn(x_re, x_im, emb)
        s_mag = _safe_mag(s_re, s_im)
        alpha, _ = bundle.le(s_mag, near_feat, emb)
        y_re, y_im, _, _ = apply_le_gains(alpha, s_re, s_im)
        y_mag = _safe_mag(y_re, y_im)
        s_tilde = istft_tensor(s_re, s_im, cfg, n)
        total, _, _, _ = joint_loss(
            bundle.d_int, bundle.d_qua, y_mag, s_tilde, s_ref,
            v_mag, s_mag_ctx, tcfg,
        )
        return total

    tensors = {"x_re": x_re, "x_im": x_im}
    for module in (bundle.noise_token, bundle.crn, bundle.le,
                   bundle.d_int, bundle.d_qua):
        tensors.update(module.named_parameters())
    return check_gradients(
        fn, tensors, tolerance=END_TO_END_TOL, sample_per_tensor=1,
        rng=np.random.default_rng(99),
    )


def gradcheck_suite() -> dict:
    """Named gradient checks, layer primitives first, composition last."""
    return {
        "linear": _check_linear,
        "conv2d": _check_conv2d,
        "conv_transpose2d": _check_conv_transpose2d,
        "causal_conv1d": _check_causal_conv1d,
        "lstm": _check_lstm,
        "frame_norm": _check_frame_norm,
        "cumulative_norm": _check_cumulative_norm,
        "prelu": _check_prelu,
        "attention": _check_attention,
        "denoiser": _check_denoiser,
        "enhancer": _check_enhancer,
        "noise_token": _check_noise_token,
        "discriminator": _check_discriminator,
        "end_to_end": _check_end_to_end,
    }


def _cmd_gradcheck(args) -> int:
    suite = gradcheck_suite()
    if args.module is not None:
        if args.module not in suite:
            raise ValueError(
                f"unknown module {args.module!r}; valid modules: "
                + ", ".join(suite)
            )
        suite = {args.module: suite[args.module]}
    failures = 0
    for name, check in suite.items():
        report = check()
        verdict = "PASS" if report.passed else "FAIL"
        print(
            f"{name:<18} {verdict}  max rel err {report.max_rel_err:.3e} "
            f"(tol {report.tolerance:.1e})"
        )
        if not report.passed:
            failures += 1
            print(report.summary(), file=sys.stderr)
    print(f"gradcheck: {len(suite) - failures}/{len(suite)} passed")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def _load_section(path: str, name: str):
    """Fetch a command's section, following an [experiment] indirection.

    Returns (section, base_dir, experiment) where base_dir anchors the
    section's relative paths and experiment is None for direct configs.
    """
    sections = read_config(path)
    if name in sections:
        return dict(sections[name]), os.path.dirname(os.path.abspath(path)), None
    if "experiment" in sections:
        exp = load_experiment(path)
        sub_path = exp.dataset_path if name == "dataset" else exp.train_path
        sub = read_config(sub_path)
        if name not in sub:
            raise ValueError(f"{sub_path} has no [{name}] section")
        return dict(sub[name]), os.path.dirname(os.path.abspath(sub_path)), exp
    raise ValueError(f"config {path} has no [{name}] or [experiment] section")


def _dataset_dir(section: dict, base: str, exp) -> str:
    configured = section.pop("out_dir", None)
    if configured:
        configured = os.path.join(base, configured)
    elif exp is not None:
        configured = os.path.join(exp.output_dir, "data")
    else:
        configured = os.path.join(base, "data")
    return resolve_output_dir(configured)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    section, base, exp = _load_section(args.config, "dataset")
    out_dir = _dataset_dir(section, base, exp)
    spec = dataset_spec_from(section, default_seed=exp.seed if exp else None)
    manifest = synthesize_dataset(spec, out_dir)
    total = spec.train_count + spec.val_count + spec.test_count
    print(f"synthesized {total} scenes under {out_dir}")
    print(f"manifest: {manifest}")
    return 0


def _cmd_train(args) -> int:
    section, base, exp = _load_section(args.config, "train")
    manifest = section.pop("manifest", None)
    if manifest:
        manifest = os.path.join(base, manifest)
    elif exp is not None:
        data_section, data_base, _ = _load_section(args.config, "dataset")
        manifest = os.path.join(_dataset_dir(data_section, data_base, exp),
                                "manifest.tsv")
    else:
        raise ValueError("[train] section must set 'manifest'")
    if not os.path.exists(manifest):
        raise FileNotFoundError(
            f"scene manifest not found: {manifest} (run synth first)"
        )

    configured = section.pop("out_dir", None)
    if configured:
        configured = os.path.join(base, configured)
    elif exp is not None:
        configured = os.path.join(exp.output_dir, "run")
    else:
        configured = os.path.join(base, "run")
    out_dir = resolve_output_dir(configured)

    config = train_config_from(
        section, profile=args.profile, default_seed=exp.seed if exp else None
    )
    run = train(manifest, config, out_dir)
    print(f"training {run.status} after {config.steps} steps ({config.mode} mode)")
    if run.val_records:
        last = dict(run.val_records[-1])
        step = int(last.pop("step"))
        pairs = "  ".join(f"{k}={v:.4f}" for k, v in sorted(last.items()))
        print(f"validation at step {step}: {pairs}")
    print(f"run manifest: {os.path.join(out_dir, 'run_manifest.txt')}")
    return 0


def _require_ckpt(path: str | None, flag: str, system: str):
    if path is None:
        raise ValueError(f"system '{system}' needs {flag}")
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")


def _bundle_for(system: str, args):
    if system == "neuralpipe":
        _require_ckpt(args.nr_ckpt, "--nr-ckpt", system)
        _require_ckpt(args.le_ckpt, "--le-ckpt", system)
        return compose_neuralpipe(args.nr_ckpt, args.le_ckpt)
    if system in _CKPT_SYSTEMS:
        _require_ckpt(args.ckpt, "--ckpt", system)
        bundle, _ = load_bundle(args.ckpt)
        return bundle
    return None


def _cmd_enhance(args) -> int:
    x = wav_read(args.infile)
    v = wav_read(args.near_noise) if args.near_noise else None
    bundle = _bundle_for(args.system, args)
    y = enhance(x, v, bundle=bundle, system=args.system)
    wav_write(y, args.out)
    print(f"{args.system}: {args.infile} -> {args.out} "
          f"({y.samples.shape[0]} samples at {y.sample_rate} Hz)")
    return 0


def _cmd_evaluate(args) -> int:
    if not os.path.exists(args.manifest):
        raise FileNotFoundError(f"scene manifest not found: {args.manifest}")
    records = read_manifest(args.manifest)
    if args.split != "all":
        records = [r for r in records if r.split == args.split]
    if not records:
        raise ValueError(f"no scenes in split '{args.split}'")

    systems = tuple(s.strip() for s in args.systems.split(",") if s.strip())
    unknown = [s for s in systems if s not in SYSTEMS]
    if unknown:
        raise ValueError(
            f"unknown systems {unknown}; valid systems: {', '.join(SYSTEMS)}"
        )

    bundle = None
    if any(s in _CKPT_SYSTEMS for s in systems):
        _require_ckpt(args.ckpt, "--ckpt", next(s for s in systems if s in _CKPT_SYSTEMS))
        bundle, _ = load_bundle(args.ckpt)
    neural = None
    if "neuralpipe" in systems:
        _require_ckpt(args.nr_ckpt, "--nr-ckpt", "neuralpipe")
        _require_ckpt(args.le_ckpt, "--le-ckpt", "neuralpipe")
        neural = compose_neuralpipe(args.nr_ckpt, args.le_ckpt)

    report = evaluate_mod.evaluate_records(
        records, systems, bundle=bundle, neural_bundle=neural,
        threads=args.threads,
    )
    out_csv = args.out or os.path.join(resolve_output_dir(None), "eval_report.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out_csv)), exist_ok=True)
    report.write(out_csv)
    print(evaluate_mod.aggregate_table(report))
    print(f"report: {out_csv} ({len(report.rows)} rows)")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clearlink",
        description="joint far-end denoising and near-end listening enhancement",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="synthesize a scene dataset")
    p_synth.add_argument("--config", required=True, help="config with a [dataset] section")

    p_train = sub.add_parser("train", help="train a model bundle")
    p_train.add_argument("--config", required=True, help="config with a [train] section")
    p_train.add_argument("--profile", choices=("tiny", "paper"), default=None,
                         help="override the configured model size")

    p_enh = sub.add_parser("enhance", help="run one utterance through a system")
    p_enh.add_argument("--system", required=True, choices=SYSTEMS)
    p_enh.add_argument("--in", dest="infile", required=True, help="noisy input wav")
    p_enh.add_argument("--near-noise", default=None, help="near-end noise reference wav")
    p_enh.add_argument("--ckpt", default=None, help="trained bundle checkpoint")
    p_enh.add_argument("--nr-ckpt", default=None, help="denoiser checkpoint (neuralpipe)")
    p_enh.add_argument("--le-ckpt", default=None, help="enhancer checkpoint (neuralpipe)")
    p_enh.add_argument("--out", required=True, help="output wav path")

    p_eval = sub.add_parser("evaluate", help="score systems over a scene manifest")
    p_eval.add_argument("--manifest", required=True, help="scene manifest path")
    p_eval.add_argument("--systems", required=True,
                        help="comma-separated system names")
    p_eval.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p_eval.add_argument("--ckpt", default=None, help="trained bundle checkpoint")
    p_eval.add_argument("--nr-ckpt", default=None, help="denoiser checkpoint (neuralpipe)")
    p_eval.add_argument("--le-ckpt", default=None, help="enhancer checkpoint (neuralpipe)")
    p_eval.add_argument("--out", default=None, help="report csv path")
    p_eval.add_argument("--threads", type=int, default=None,
                        help="worker threads (default CLEARLINK_THREADS or 1)")

    p_grad = sub.add_parser("gradcheck", help="verify gradients against central differences")
    p_grad.add_argument("--module", default=None,
                        help="check one module (default: the full suite)")
    return parser


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "enhance": _cmd_enhance,
    "evaluate": _cmd_evaluate,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
