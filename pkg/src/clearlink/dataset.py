"""Dataset synthesis: scene grids, WAV layout, and the scene manifest.

A dataset is a directory of float32 WAVs plus a single tab-separated manifest
(`manifest.tsv`, one line per scene) that records ids, relative paths, SNRs,
noise ids, and the per-scene seed. Everything is derived from one root seed
through named SeedSequence spawns, so the same descriptor always produces
byte-identical WAVs and manifest.

Train and test conditions are disjoint by construction (SNR grids and noise
generators both); `strict_split` turns any overlap into an error.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import audio_io
from .signals import NOISE_GENERATORS, Scene, SceneCondition, make_scene

__all__ = [
    "DatasetSpec",
    "SceneRecord",
    "synthesize_dataset",
    "read_manifest",
    "write_manifest",
]

SPLITS = ("train", "val", "test")

_TRAIN_FAR = (4.0, 8.0, 12.0)
_TRAIN_NEAR = (-11.0, -7.0, -3.0)
_TEST_FAR = (6.0, 10.0, 14.0)
_TEST_NEAR = (-9.0, -5.0, -1.0)


@dataclass(frozen=True)
class DatasetSpec:
    """Descriptor for one synthetic dataset; see `synthesize_dataset`."""

    seed: int = 0
    sample_rate: int = 16000
    duration_s: float = 1.5
    train_count: int = 200
    val_count: int = 24
    test_count: int = 36
    train_far_snrs: tuple[float, ...] = _TRAIN_FAR
    train_near_snrs: tuple[float, ...] = _TRAIN_NEAR
    test_far_snrs: tuple[float, ...] = _TEST_FAR
    test_near_snrs: tuple[float, ...] = _TEST_NEAR
    train_far_noises: tuple[str, ...] = ("white", "pink", "babble", "hum")
    train_near_noises: tuple[str, ...] = ("white", "pink", "babble", "hum")
    test_far_noises: tuple[str, ...] = ("cafe",)
    test_near_noises: tuple[str, ...] = ("announce",)
    strict_split: bool = True

    def __post_init__(self):
        for count in (self.train_count, self.val_count, self.test_count):
            if count < 0:
                raise ValueError("counts must be >= 0")
        all_noises = (
            set(self.train_far_noises)
            | set(self.train_near_noises)
            | set(self.test_far_noises)
            | set(self.test_near_noises)
        )
        unknown = all_noises - set(NOISE_GENERATORS)
        if unknown:
            raise ValueError(f"unknown noise generators: {sorted(unknown)}")
        if self.strict_split:
            snr_overlap = (set(self.train_far_snrs) & set(self.test_far_snrs)) | (
                set(self.train_near_snrs) & set(self.test_near_snrs)
            )
            noise_overlap = (set(self.train_far_noises) & set(self.test_far_noises)) | (
                set(self.train_near_noises) & set(self.test_near_noises)
            )
            if snr_overlap or noise_overlap:
                raise ValueError(
                    "train/test conditions overlap "
                    f"(snr={sorted(snr_overlap)}, noise={sorted(noise_overlap)}); "
                    "set strict_split=False to allow"
                )

    def grids_for(self, split: str):
        if split in ("train", "val"):
            return (
                self.train_far_snrs,
                self.train_near_snrs,
                self.train_far_noises,
                self.train_near_noises,
            )
        if split == "test":
            return (
                self.test_far_snrs,
                self.test_near_snrs,
                self.test_far_noises,
                self.test_near_noises,
            )
        raise ValueError(f"unknown split {split!r}")


_MANIFEST_COLUMNS = (
    "scene_id",
    "split",
    "s_path",
    "u_path",
    "v_path",
    "x_path",
    "far_snr_db",
    "near_snr_db",
    "far_noise",
    "near_noise",
    "seed",
)


@dataclass(frozen=True)
class SceneRecord:
    """One manifest line; paths are relative to the manifest directory."""

    scene_id: str
    split: str
    s_path: str
    u_path: str
    v_path: str
    x_path: str
    far_snr_db: float
    near_snr_db: float
    far_noise: str
    near_noise: str
    seed: int
    root: str = field(default="", compare=False)

    def load(self) -> Scene:
        cond = SceneCondition(
            far_snr_db=self.far_snr_db,
            near_snr_db=self.near_snr_db,
            far_noise_id=self.far_noise,
            near_noise_id=self.near_noise,
            seed=self.seed,
        )
        parts = [
            audio_io.wav_read(os.path.join(self.root, p))
            for p in (self.s_path, self.u_path, self.v_path, self.x_path)
        ]
        return Scene(*parts, condition=cond)


def write_manifest(records: list[SceneRecord], path: str) -> None:
    lines = ["\t".join(_MANIFEST_COLUMNS)]
    for r in records:
        lines.append(
            "\t".join(
                [
                    r.scene_id,
                    r.split,
                    r.s_path,
                    r.u_path,
                    r.v_path,
                    r.x_path,
                    repr(r.far_snr_db),
                    repr(r.near_snr_db),
                    r.far_noise,
                    r.near_noise,
                    str(r.seed),
                ]
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path: str) -> list[SceneRecord]:
    root = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or tuple(lines[0].split("\t")) != _MANIFEST_COLUMNS:
        raise ValueError(f"not a scene manifest: {path}")
    records = []
    for ln in lines[1:]:
        cols = ln.split("\t")
        if len(cols) != len(_MANIFEST_COLUMNS):
            raise ValueError(f"malformed manifest line: {ln!r}")
        records.append(
            SceneRecord(
                scene_id=cols[0],
                split=cols[1],
                s_path=cols[2],
                u_path=cols[3],
                v_path=cols[4],
                x_path=cols[5],
                far_snr_db=float(cols[6]),
                near_snr_db=float(cols[7]),
                far_noise=cols[8],
                near_noise=cols[9],
                seed=int(cols[10]),
                root=root,
            )
        )
    return records


def _scene_seed(root_seed: int, split_idx: int, index: int) -> int:
    ss = np.random.SeedSequence(root_seed, spawn_key=(split_idx, index))
    return int(ss.generate_state(1, dtype=np.uint64)[0] & 0x7FFF_FFFF_FFFF_FFFF)


def synthesize_dataset(spec: DatasetSpec, out_dir: str) -> str:
    """Synthesize all scenes under `out_dir`; returns the manifest path.

    Layout: `<out_dir>/<split>/<scene_id>_<part>.wav` for parts s, u, v, x.
    Scene conditions are drawn per scene from the split's grids with a
    deterministic per-scene generator, so scene i is independent of the
    total count.
    """
    os.makedirs(out_dir, exist_ok=True)
    records: list[SceneRecord] = []
    counts = {
        "train": spec.train_count,
        "val": spec.val_count,
        "test": spec.test_count,
    }
    for split_idx, split in enumerate(SPLITS):
        split_dir = os.path.join(out_dir, split)
        os.makedirs(split_dir, exist_ok=True)
        far_snrs, near_snrs, far_noises, near_noises = spec.grids_for(split)
        for i in range(counts[split]):
            seed = _scene_seed(spec.seed, split_idx, i)
            picker = np.random.default_rng(
                np.random.SeedSequence(spec.seed, spawn_key=(split_idx, i, 1))
            )
            cond = SceneCondition(
                far_snr_db=float(picker.choice(far_snrs)),
                near_snr_db=float(picker.choice(near_snrs)),
                far_noise_id=str(picker.choice(far_noises)),
                near_noise_id=str(picker.choice(near_noises)),
                seed=seed,
            )
            scene = make_scene(cond, spec.duration_s, spec.sample_rate)
            scene_id = f"{split}-{i:04d}"
            paths = {}
            for part in ("s", "u", "v", "x"):
                rel = os.path.join(split, f"{scene_id}_{part}.wav")
                audio_io.wav_write(getattr(scene, part), os.path.join(out_dir, rel))
                paths[part] = rel
            records.append(
                SceneRecord(
                    scene_id=scene_id,
                    split=split,
                    s_path=paths["s"],
                    u_path=paths["u"],
                    v_path=paths["v"],
                    x_path=paths["x"],
                    far_snr_db=cond.far_snr_db,
                    near_snr_db=cond.near_snr_db,
                    far_noise=cond.far_noise_id,
                    near_noise=cond.near_noise_id,
                    seed=seed,
                    root=os.path.abspath(out_dir),
                )
            )
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    write_manifest(records, manifest_path)
    return manifest_path
