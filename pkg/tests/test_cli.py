"""Command line behavior: the five subcommands and their error contracts."""

import os

import numpy as np
import pytest

from clearlink import cli
from clearlink.audio_io import wav_read


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One synth + short train, shared by every command test."""
    root = tmp_path_factory.mktemp("cli")
    _write(
        root / "exp.ini",
        "[experiment]\ndataset = data.ini\ntrain = train.ini\n"
        "systems = noisy, dsppipe, joint+nt\noutput_dir = out\nseed = 3\n",
    )
    _write(
        root / "data.ini",
        "[dataset]\ntrain_count = 3\nval_count = 1\ntest_count = 2\nduration_s = 1.0\n",
    )
    _write(
        root / "train.ini",
        "[train]\nsteps = 2\nmode = joint\nval_every = 0\nfit_scenes = 2\n",
    )
    assert cli.main(["synth", "--config", str(root / "exp.ini")]) == 0
    assert cli.main(["train", "--config", str(root / "exp.ini")]) == 0
    return root


def _ws_paths(workspace):
    data = workspace / "out" / "data"
    return {
        "exp": str(workspace / "exp.ini"),
        "manifest": str(data / "manifest.tsv"),
        "x": str(data / "test" / "test-0000_x.wav"),
        "v": str(data / "test" / "test-0000_v.wav"),
        "ckpt": str(workspace / "out" / "run" / "final.ckpt"),
    }


# ---------------------------------------------------------------------------
# synth / train
# ---------------------------------------------------------------------------


def test_synth_writes_dataset_and_manifest(workspace, capsys):
    p = _ws_paths(workspace)
    assert os.path.exists(p["manifest"])
    assert os.path.exists(p["x"])


def test_synth_is_deterministic(workspace, tmp_path):
    _write(tmp_path / "data.ini",
           "[dataset]\ntrain_count = 3\nval_count = 1\ntest_count = 2\n"
           "duration_s = 1.0\nseed = 3\nout_dir = d2\n")
    assert cli.main(["synth", "--config", str(tmp_path / "data.ini")]) == 0
    p = _ws_paths(workspace)
    with open(p["x"], "rb") as fh:
        first = fh.read()
    with open(tmp_path / "d2" / "test" / "test-0000_x.wav", "rb") as fh:
        second = fh.read()
    assert first == second


def test_train_writes_run_artifacts(workspace):
    run = workspace / "out" / "run"
    assert (run / "run_manifest.txt").exists()
    assert (run / "init.ckpt").exists()
    assert (run / "final.ckpt").exists()


def test_train_missing_manifest_names_path(tmp_path, capsys):
    cfg = _write(tmp_path / "t.ini",
                 "[train]\nsteps = 1\nmanifest = nowhere.tsv\n")
    assert cli.main(["train", "--config", cfg]) == 1
    err = capsys.readouterr().err
    assert "scene manifest not found" in err and "nowhere.tsv" in err


def test_train_direct_section_needs_manifest_key(tmp_path, capsys):
    cfg = _write(tmp_path / "t.ini", "[train]\nsteps = 1\n")
    assert cli.main(["train", "--config", cfg]) == 1
    assert "must set 'manifest'" in capsys.readouterr().err


def test_config_without_usable_section_fails(tmp_path, capsys):
    cfg = _write(tmp_path / "c.ini", "[other]\nx = 1\n")
    assert cli.main(["synth", "--config", cfg]) == 1
    assert "no [dataset] or [experiment] section" in capsys.readouterr().err


def test_synth_honors_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CLEARLINK_OUT", str(tmp_path / "env_data"))
    cfg = _write(tmp_path / "d.ini",
                 "[dataset]\ntrain_count = 1\nval_count = 0\ntest_count = 0\n"
                 "duration_s = 0.5\n")
    assert cli.main(["synth", "--config", cfg]) == 0
    assert (tmp_path / "env_data" / "manifest.tsv").exists()


# ---------------------------------------------------------------------------
# enhance
# ---------------------------------------------------------------------------


def test_enhance_noisy_copies_input_exactly(workspace, tmp_path):
    p = _ws_paths(workspace)
    out = str(tmp_path / "copy.wav")
    assert cli.main(["enhance", "--system", "noisy", "--in", p["x"],
                     "--out", out]) == 0
    assert np.array_equal(wav_read(out).samples, wav_read(p["x"]).samples)


def test_enhance_runs_trained_system(workspace, tmp_path):
    p = _ws_paths(workspace)
    out = str(tmp_path / "y.wav")
    assert cli.main(["enhance", "--system", "joint+nt", "--in", p["x"],
                     "--near-noise", p["v"], "--ckpt", p["ckpt"],
                     "--out", out]) == 0
    y = wav_read(out)
    assert y.samples.shape == wav_read(p["x"]).samples.shape


def test_enhance_unknown_system_lists_names(workspace, tmp_path, capsys):
    p = _ws_paths(workspace)
    with pytest.raises(SystemExit) as exc:
        cli.main(["enhance", "--system", "warp", "--in", p["x"],
                  "--out", str(tmp_path / "y.wav")])
    assert exc.value.code == 2
    assert "noisy+nr" in capsys.readouterr().err


def test_enhance_missing_checkpoint_names_path(workspace, tmp_path, capsys):
    p = _ws_paths(workspace)
    code = cli.main(["enhance", "--system", "joint", "--in", p["x"],
                     "--near-noise", p["v"], "--ckpt", "/tmp/ghost.ckpt",
                     "--out", str(tmp_path / "y.wav")])
    assert code == 1
    assert "checkpoint not found: /tmp/ghost.ckpt" in capsys.readouterr().err


def test_enhance_checkpoint_flag_required_for_model_systems(workspace, tmp_path, capsys):
    p = _ws_paths(workspace)
    code = cli.main(["enhance", "--system", "joint", "--in", p["x"],
                     "--near-noise", p["v"], "--out", str(tmp_path / "y.wav")])
    assert code == 1
    assert "needs --ckpt" in capsys.readouterr().err


def test_enhance_le_system_requires_noise_reference(workspace, tmp_path, capsys):
    p = _ws_paths(workspace)
    code = cli.main(["enhance", "--system", "joint+nt", "--in", p["x"],
                     "--ckpt", p["ckpt"], "--out", str(tmp_path / "y.wav")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error:")


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def test_evaluate_writes_report_and_table(workspace, tmp_path, capsys):
    p = _ws_paths(workspace)
    out = str(tmp_path / "report.csv")
    code = cli.main(["evaluate", "--manifest", p["manifest"],
                     "--systems", "noisy,joint+nt", "--ckpt", p["ckpt"],
                     "--out", out])
    assert code == 0
    assert os.path.exists(out)
    text = capsys.readouterr().out
    for metric in ("si_snr", "estoi", "seg_snr", "neg_lsd"):
        assert metric in text
    with open(out) as fh:
        header = fh.readline().strip()
    assert header == "scene_id,system,far_snr,near_snr,metric,raw,normalized"


def test_evaluate_repeat_is_byte_identical(workspace, tmp_path):
    p = _ws_paths(workspace)
    outs = []
    for name in ("a.csv", "b.csv"):
        out = str(tmp_path / name)
        assert cli.main(["evaluate", "--manifest", p["manifest"],
                         "--systems", "noisy,dsppipe", "--out", out]) == 0
        with open(out, "rb") as fh:
            outs.append(fh.read())
    assert outs[0] == outs[1]


def test_evaluate_thread_count_keeps_bytes(workspace, tmp_path, monkeypatch):
    p = _ws_paths(workspace)
    out1 = str(tmp_path / "t1.csv")
    assert cli.main(["evaluate", "--manifest", p["manifest"],
                     "--systems", "noisy", "--threads", "1", "--out", out1]) == 0
    monkeypatch.setenv("CLEARLINK_THREADS", "3")
    out3 = str(tmp_path / "t3.csv")
    assert cli.main(["evaluate", "--manifest", p["manifest"],
                     "--systems", "noisy", "--out", out3]) == 0
    with open(out1, "rb") as a, open(out3, "rb") as b:
        assert a.read() == b.read()


def test_evaluate_unknown_system_lists_names(workspace, tmp_path, capsys):
    p = _ws_paths(workspace)
    code = cli.main(["evaluate", "--manifest", p["manifest"],
                     "--systems", "noisy,warp", "--out", str(tmp_path / "r.csv")])
    assert code == 1
    err = capsys.readouterr().err
    assert "warp" in err and "valid systems" in err


def test_evaluate_empty_split_fails(workspace, tmp_path, capsys):
    p = _ws_paths(workspace)
    records = open(p["manifest"]).read().splitlines()
    only_train = [records[0]] + [r for r in records[1:] if "\ttrain\t" in r]
    trimmed = _write(tmp_path / "m.tsv", "\n".join(only_train) + "\n")
    code = cli.main(["evaluate", "--manifest", trimmed,
                     "--systems", "noisy", "--out", str(tmp_path / "r.csv")])
    assert code == 1
    assert "no scenes in split 'test'" in capsys.readouterr().err


def test_evaluate_val_split_selectable(workspace, tmp_path):
    p = _ws_paths(workspace)
    out = str(tmp_path / "val.csv")
    assert cli.main(["evaluate", "--manifest", p["manifest"], "--split", "val",
                     "--systems", "noisy", "--out", out]) == 0
    with open(out) as fh:
        body = fh.read()
    assert "val-" in body and "test-" not in body


def test_evaluate_model_system_needs_checkpoint(workspace, tmp_path, capsys):
    p = _ws_paths(workspace)
    code = cli.main(["evaluate", "--manifest", p["manifest"],
                     "--systems", "joint", "--out", str(tmp_path / "r.csv")])
    assert code == 1
    assert "needs --ckpt" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def test_gradcheck_single_module_passes(capsys):
    assert cli.main(["gradcheck", "--module", "linear"]) == 0
    out = capsys.readouterr().out
    assert "linear" in out and "PASS" in out and "1/1 passed" in out


def test_gradcheck_unknown_module_lists_names(capsys):
    assert cli.main(["gradcheck", "--module", "warp"]) == 1
    err = capsys.readouterr().err
    assert "unknown module" in err and "end_to_end" in err


def test_gradcheck_suite_names_cover_every_layer_and_model():
    names = set(cli.gradcheck_suite())
    expected = {
        "linear", "conv2d", "conv_transpose2d", "causal_conv1d", "lstm",
        "frame_norm", "cumulative_norm", "prelu", "attention",
        "denoiser", "enhancer", "noise_token", "discriminator", "end_to_end",
    }
    assert names == expected
