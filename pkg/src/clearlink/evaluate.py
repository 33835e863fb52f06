"""System evaluation over scene sets.

Produces one metric row per (scene, system, metric): ESTOI is scored on the
observed signal (system output plus the near-end noise the listener actually
hears), the quality metrics against the clean far-end reference. Rows carry
both the raw score and a logistic-normalized value; normalizers either come
from a training run's manifest or are fit on the evaluated scores themselves.

Row order, float formatting, and aggregation are all deterministic, so two
evaluations of the same scenes with the same checkpoints produce
byte-identical CSV files regardless of thread count.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import SceneRecord
from .dsp import Waveform
from .metrics import (
    estoi,
    fit_logistic,
    log_spectral_distance,
    logistic_normalize,
    seg_snr,
    si_snr,
)
from .models import ModelBundle
from .training import SYSTEMS, _fit_length, enhance

__all__ = [
    "EVAL_COLUMNS",
    "REPORT_METRICS",
    "EvalRow",
    "EvalReport",
    "evaluate_records",
    "aggregate",
    "aggregate_table",
    "default_threads",
]

EVAL_COLUMNS = ("scene_id", "system", "far_snr", "near_snr", "metric", "raw", "normalized")

# higher is better for every reported metric; LSD enters negated
REPORT_METRICS = ("si_snr", "estoi", "seg_snr", "neg_lsd")


@dataclass(frozen=True)
class EvalRow:
    scene_id: str
    system: str
    far_snr: float
    near_snr: float
    metric: str
    raw: float
    normalized: float


@dataclass
class EvalReport:
    rows: list[EvalRow]

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(EVAL_COLUMNS)
            for r in self.rows:
                writer.writerow(
                    [
                        r.scene_id,
                        r.system,
                        repr(r.far_snr),
                        repr(r.near_snr),
                        r.metric,
                        repr(r.raw),
                        repr(r.normalized),
                    ]
                )

    @classmethod
    def read(cls, path: str) -> "EvalReport":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != EVAL_COLUMNS:
                raise ValueError(f"not an evaluation report: {path}")
            rows = [
                EvalRow(
                    scene_id=c[0],
                    system=c[1],
                    far_snr=float(c[2]),
                    near_snr=float(c[3]),
                    metric=c[4],
                    raw=float(c[5]),
                    normalized=float(c[6]),
                )
                for c in reader
            ]
        return cls(rows)


def default_threads() -> int:
    """Worker count for per-scene fan-out; CLEARLINK_THREADS overrides."""
    raw = os.environ.get("CLEARLINK_THREADS", "").strip()
    if not raw:
        return 1
    count = int(raw)
    if count < 1:
        raise ValueError(f"CLEARLINK_THREADS must be >= 1, got {raw}")
    return count


def _score_output(y: Waveform, scene) -> dict[str, float]:
    s = scene.s
    v_fit = _fit_length(scene.v.samples, y.samples.shape[0])
    observed = Waveform(y.samples[: v_fit.shape[0]] + v_fit, y.sample_rate)
    return {
        "si_snr": si_snr(y, s),
        "estoi": estoi(observed, s),
        "seg_snr": seg_snr(y, s),
        "neg_lsd": -log_spectral_distance(y, s),
    }


def _bundle_for(system: str, bundle, neural_bundle):
    if system in ("noisy", "dsppipe"):
        return None
    chosen = neural_bundle if system == "neuralpipe" else bundle
    if chosen is None:
        kind = "a neuralpipe" if system == "neuralpipe" else "a model"
        raise ValueError(f"system {system!r} needs {kind} checkpoint")
    return chosen


def evaluate_records(
    records: list[SceneRecord],
    systems,
    bundle: ModelBundle | None = None,
    neural_bundle: ModelBundle | None = None,
    norms: dict[str, tuple[float, float]] | None = None,
    threads: int | None = None,
) -> EvalReport:
    """Score every (scene, system) pair; returns the assembled report.

    Scenes fan out across `threads` workers (default from CLEARLINK_THREADS);
    each row is computed independently and the final order is canonical, so
    the result does not depend on scheduling. When `norms` is omitted the
    logistic normalizers are fit per metric on the raw scores of this very
    evaluation; a training run's frozen normalizers can be passed instead.
    """
    systems = tuple(systems)
    if not systems:
        raise ValueError("no systems requested")
    for name in systems:
        if name not in SYSTEMS:
            raise ValueError(
                f"unknown system {name!r}; valid systems: {', '.join(SYSTEMS)}"
            )
    bundles = {name: _bundle_for(name, bundle, neural_bundle) for name in systems}
    if not records:
        raise ValueError("no scenes to evaluate")

    def work(rec: SceneRecord):
        scene = rec.load()
        out = []
        for system in systems:
            y = enhance(scene.x, scene.v, bundles[system], system)
            out.append((rec, system, _score_output(y, scene)))
        return out

    workers = default_threads() if threads is None else threads
    if workers < 1:
        raise ValueError("threads must be >= 1")
    if workers == 1:
        scored = [work(rec) for rec in records]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scored = list(pool.map(work, records))

    flat = [item for per_scene in scored for item in per_scene]
    provided = dict(norms) if norms else {}
    norms = {}
    for metric in REPORT_METRICS:
        if metric in provided:
            norms[metric] = provided[metric]
            continue
        values = [raws[metric] for _, _, raws in flat]
        try:
            norms[metric] = fit_logistic(values)
        except ValueError:
            # single-valued column (e.g. clamped metric on one system):
            # center the logistic there with unit slope
            norms[metric] = (float(np.median(values)), 1.0)
    rows = []
    for rec, system, raws in flat:
        for metric in REPORT_METRICS:
            m, k = norms[metric]
            raw = raws[metric]
            rows.append(
                EvalRow(
                    scene_id=rec.scene_id,
                    system=system,
                    far_snr=float(rec.far_snr_db),
                    near_snr=float(rec.near_snr_db),
                    metric=metric,
                    raw=float(raw),
                    normalized=logistic_normalize(raw, m, k),
                )
            )
    order = {name: i for i, name in enumerate(systems)}
    metric_order = {name: i for i, name in enumerate(REPORT_METRICS)}
    rows.sort(key=lambda r: (r.scene_id, order[r.system], metric_order[r.metric]))
    return EvalReport(rows)


def aggregate(report: EvalReport) -> dict[tuple[str, str, float], float]:
    """Mean raw score per far-end SNR, averaged over the near-end SNRs.

    Scores are first averaged inside each (far, near) cell, then the near
    cells are averaged with equal weight, so an uneven scene draw cannot
    tilt a column.
    """
    cells: dict[tuple[str, str, float, float], list[float]] = {}
    for r in report.rows:
        cells.setdefault((r.system, r.metric, r.far_snr, r.near_snr), []).append(r.raw)
    by_far: dict[tuple[str, str, float], list[float]] = {}
    for (system, metric, far, _near), values in sorted(cells.items()):
        by_far.setdefault((system, metric, far), []).append(
            float(np.mean(values))
        )
    return {key: float(np.mean(v)) for key, v in by_far.items()}


def aggregate_table(report: EvalReport) -> str:
    """Render the aggregate as one text block per metric.

    Rows are systems in report order, columns the far-end SNRs ascending,
    mirroring a per-metric results table averaged over near-end SNRs.
    """
    agg = aggregate(report)
    systems = list(dict.fromkeys(r.system for r in report.rows))
    metrics = list(dict.fromkeys(r.metric for r in report.rows))
    fars = sorted({far for (_s, _m, far) in agg})
    name_w = max(10, max(len(s) for s in systems) + 2)
    lines = []
    for metric in metrics:
        lines.append(f"{metric} (mean per far-end SNR, averaged over near-end SNRs)")
        header = " " * name_w + "".join(f"{far:>10.1f}" for far in fars)
        lines.append(header)
        for system in systems:
            cells = []
            for far in fars:
                value = agg.get((system, metric, far))
                cells.append(f"{value:>10.3f}" if value is not None else f"{'-':>10}")
            lines.append(f"{system:<{name_w}}" + "".join(cells))
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"
