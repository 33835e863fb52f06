"""Central finite-difference gradient verification.

The checker re-runs a closure twice per probed coordinate (data +- h) and
compares the numeric slope against the analytic gradient from one backward
pass. Relative error uses max(1e-6, |analytic|, |numeric|) as denominator so
near-zero gradients don't blow up the ratio. Full elementwise coverage for
layer-sized tensors; a fixed per-tensor sample for big end-to-end graphs
(every tensor still gets probed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, no_grad

__all__ = ["GradcheckEntry", "GradcheckReport", "check_gradients"]

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-4


@dataclass(frozen=True)
class GradcheckEntry:
    name: str
    max_rel_err: float
    checked: int
    worst_coord: tuple
    passed: bool


@dataclass(frozen=True)
class GradcheckReport:
    tolerance: float
    entries: list[GradcheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def summary(self) -> str:
        lines = [
            f"{'PASS' if e.passed else 'FAIL'}  {e.name}: "
            f"max rel err {e.max_rel_err:.3e} over {e.checked} coords"
            for e in self.entries
        ]
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}  overall max rel err {self.max_rel_err:.3e} (tol {self.tolerance:.1e})")
        return "\n".join(lines)


def check_gradients(
    fn,
    tensors: dict[str, Tensor],
    h: float = DEFAULT_H,
    tolerance: float = DEFAULT_TOL,
    sample_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradcheckReport:
    """Compare analytic and numeric gradients of scalar-valued `fn`.

    `fn` takes no arguments and reads the given tensors; it must be
    re-runnable (pure in the tensors). With `sample_per_tensor` set, that
    many coordinates are probed per tensor (all of them if the tensor is
    smaller); otherwise every coordinate is probed.
    """
    for t in tensors.values():
        if t.data.dtype != np.float64:
            raise ValueError("gradcheck requires double precision tensors")
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = {}
    for name, t in tensors.items():
        if t.grad is None:
            raise ValueError(f"tensor '{name}' received no gradient")
        analytic[name] = t.grad.copy()

    rng = rng or np.random.default_rng(0)
    entries = []
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        n = flat.size
        if sample_per_tensor is not None and sample_per_tensor < n:
            coords = rng.choice(n, size=sample_per_tensor, replace=False)
        else:
            coords = np.arange(n)
        worst = 0.0
        worst_coord = ()
        a_flat = analytic[name].reshape(-1)
        for idx in coords:
            orig = flat[idx]
            with no_grad():
                flat[idx] = orig + h
                lo_hi = fn().item()
                flat[idx] = orig - h
                lo_lo = fn().item()
            flat[idx] = orig
            numeric = (lo_hi - lo_lo) / (2.0 * h)
            a = a_flat[idx]
            rel = abs(a - numeric) / max(1e-6, abs(a), abs(numeric))
            if rel > worst:
                worst = rel
                worst_coord = np.unravel_index(idx, t.data.shape)
        entries.append(
            GradcheckEntry(
                name=name,
                max_rel_err=worst,
                checked=len(coords),
                worst_coord=tuple(int(c) for c in worst_coord),
                passed=worst < tolerance,
            )
        )
    return GradcheckReport(tolerance=tolerance, entries=entries)
