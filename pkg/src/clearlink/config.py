"""Flat key-value configuration files for the command line tools.

Configs are INI-style text: named sections holding `key = value` pairs,
parsed with `configparser` (interpolation off, keys case-sensitive).
The [dataset] section maps onto `DatasetSpec`, [train] onto
`TrainConfig`, and [experiment] describes a whole run: where the
dataset and training configs live, which systems to score, where
output goes, and the seed. Values are plain scalars or comma lists;
unknown keys are rejected so typos fail loudly instead of silently
falling back to defaults.

The output directory honours the CLEARLINK_OUT environment variable,
which takes precedence over any configured value (thread count has the
matching CLEARLINK_THREADS override, read in `evaluate`).
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass

from .dataset import DatasetSpec
from .training import SYSTEMS, TrainConfig

__all__ = [
    "ExperimentConfig",
    "dataset_spec_from",
    "load_experiment",
    "read_config",
    "resolve_output_dir",
    "train_config_from",
]

OUTPUT_ENV = "CLEARLINK_OUT"


def read_config(path) -> dict[str, dict[str, str]]:
    """Read an INI file into {section: {key: value}} with raw string values."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep keys case-sensitive
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ValueError(f"malformed config {path}: {exc}") from exc
    return {name: dict(parser[name]) for name in parser.sections()}


def _parse_bool(key: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"key '{key}' expects a boolean, got {raw!r}")


def _parse_scalar(key: str, raw: str, kind):
    try:
        return kind(raw.strip())
    except ValueError:
        raise ValueError(f"key '{key}' expects {kind.__name__}, got {raw!r}") from None


def _parse_list(raw: str, kind) -> tuple:
    items = [part.strip() for part in raw.split(",")]
    return tuple(kind(part) for part in items if part)


_DATASET_FIELDS = {
    "seed": int,
    "sample_rate": int,
    "duration_s": float,
    "train_count": int,
    "val_count": int,
    "test_count": int,
    "strict_split": bool,
    "train_far_snrs": (float,),
    "train_near_snrs": (float,),
    "test_far_snrs": (float,),
    "test_near_snrs": (float,),
    "train_far_noises": (str,),
    "train_near_noises": (str,),
    "test_far_noises": (str,),
    "test_near_noises": (str,),
}

_TRAIN_FIELDS = {
    "steps": int,
    "seed": int,
    "batch": int,
    "val_every": int,
    "fit_scenes": int,
    "alpha": float,
    "beta": float,
    "lr_gen": float,
    "lr_disc": float,
    "t_int": float,
    "t_qua": float,
    "crop_s": float,
    "profile": str,
    "mode": str,
    "use_noise_token": bool,
}


def _typed_kwargs(section: dict[str, str], fields: dict, label: str) -> dict:
    kwargs = {}
    for key, raw in section.items():
        if key not in fields:
            known = ", ".join(sorted(fields))
            raise ValueError(f"unknown key '{key}' in [{label}] (known: {known})")
        kind = fields[key]
        if isinstance(kind, tuple):
            kwargs[key] = _parse_list(raw, kind[0])
        elif kind is bool:
            kwargs[key] = _parse_bool(key, raw)
        else:
            kwargs[key] = _parse_scalar(key, raw, kind)
    return kwargs


def dataset_spec_from(section: dict[str, str], default_seed: int | None = None) -> DatasetSpec:
    """Build a DatasetSpec from a [dataset] section; omitted keys keep defaults."""
    kwargs = _typed_kwargs(section, _DATASET_FIELDS, "dataset")
    if default_seed is not None and "seed" not in kwargs:
        kwargs["seed"] = default_seed
    return DatasetSpec(**kwargs)


def train_config_from(
    section: dict[str, str],
    profile: str | None = None,
    default_seed: int | None = None,
) -> TrainConfig:
    """Build a TrainConfig from a [train] section.

    `profile` overrides the section's value (command line flag wins);
    an empty crop_s value means full-length scenes.
    """
    section = dict(section)
    if section.get("crop_s", "x").strip() == "":
        del section["crop_s"]
    kwargs = _typed_kwargs(section, _TRAIN_FIELDS, "train")
    if profile is not None:
        kwargs["profile"] = profile
    if default_seed is not None and "seed" not in kwargs:
        kwargs["seed"] = default_seed
    if "steps" not in kwargs:
        raise ValueError("[train] section must set 'steps'")
    return TrainConfig(**kwargs)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: dataset + training configs, systems to score, output."""

    dataset_path: str
    train_path: str
    systems: tuple[str, ...]
    output_dir: str
    seed: int = 0

    def __post_init__(self):
        for label, path in (("dataset", self.dataset_path), ("train", self.train_path)):
            if not os.path.exists(path):
                raise FileNotFoundError(f"experiment {label} config not found: {path}")
        if not self.systems:
            raise ValueError("experiment needs at least one system")
        unknown = [name for name in self.systems if name not in SYSTEMS]
        if unknown:
            valid = ", ".join(SYSTEMS)
            raise ValueError(f"unknown systems {unknown}; valid systems: {valid}")
        if not self.output_dir:
            raise ValueError("experiment needs an output dir")


def load_experiment(path) -> ExperimentConfig:
    """Load an [experiment] section, resolving relative paths beside the file."""
    sections = read_config(path)
    if "experiment" not in sections:
        raise ValueError(f"config {path} has no [experiment] section")
    section = dict(sections["experiment"])
    base = os.path.dirname(os.path.abspath(path))

    def _take(key: str) -> str:
        if key not in section:
            raise ValueError(f"[experiment] section must set '{key}'")
        return section.pop(key).strip()

    dataset_path = os.path.join(base, _take("dataset"))
    train_path = os.path.join(base, _take("train"))
    systems = _parse_list(_take("systems"), str)
    output_dir = os.path.join(base, _take("output_dir"))
    seed = int(section.pop("seed", "0"))
    if section:
        raise ValueError(f"unknown keys in [experiment]: {sorted(section)}")
    return ExperimentConfig(
        dataset_path=dataset_path,
        train_path=train_path,
        systems=systems,
        output_dir=resolve_output_dir(output_dir),
        seed=seed,
    )


def resolve_output_dir(configured: str | None, default: str = ".") -> str:
    """Pick the output directory: CLEARLINK_OUT beats config beats default."""
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return env
    if configured:
        return configured
    return default
