"""Central finite-difference oracle for every analytic gradient.

The checker treats feature matrices as free variables: perturbed rows leave
the unit sphere by at most the step size, which the losses tolerate through
the batch's ``norm_tol``. Relative error uses ``|a - n| / max(1, |a|, |n|)``
so near-zero entries are judged on absolute error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import losses
from .errors import NonFiniteLossError, ShapeMismatchError
from .kernels import KernelConfig, MetaBatch, weight_matrix
from .losses import Batch, LossConfig, LossResult
from .numerics import Rng, row_normalize

__all__ = ["GradReport", "check_all", "check_loss_op", "finite_diff", "random_batch", "LOSS_OPS"]

# two-view loss ops checked by the default sweep
LOSS_OPS: dict[str, Callable[[Batch, LossConfig], LossResult]] = {
    "yaware_infonce": losses.yaware_infonce,
    "conditional_alignment": losses.conditional_alignment,
    "global_uniformity": losses.global_uniformity,
    "conditional_uniformity": losses.conditional_uniformity,
    "combined_objective": losses.combined_objective,
}


@dataclass(frozen=True)
class GradReport:
    op_name: str
    max_abs_err: float
    max_rel_err: float
    worst_index: tuple[int, int]
    passed: bool


def finite_diff(loss_eval: Callable[[np.ndarray], float], f: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences (L(f+he) - L(f-he)) / 2h for every entry of ``f``.

    Differentiation is with respect to the raw entries; no re-normalization
    is applied to perturbed rows.
    """
    if not (1e-8 <= step <= 1e-3):
        raise ShapeMismatchError(f"step must lie in [1e-8, 1e-3], got {step}")
    f = np.array(f, dtype=np.float64)
    grad = np.empty_like(f)
    it = np.nditer(f, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = f[idx]
        f[idx] = orig + step
        hi = loss_eval(f)
        f[idx] = orig - step
        lo = loss_eval(f)
        f[idx] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteLossError(f"perturbed loss is non-finite at index {idx}")
        grad[idx] = (hi - lo) / (2.0 * step)
    return grad


def random_batch(rng: Rng, n: int, d: int, sigma: float = 1.0, norm_tol: float = 1e-3) -> Batch:
    """Random unit-norm two-view batch with rbf weights over random scalar meta-data."""
    g = rng.generator
    anchors = row_normalize(g.standard_normal((n, d)))
    candidates = row_normalize(g.standard_normal((n, d)))
    meta = MetaBatch.from_continuous(g.uniform(0.0, 3.0, size=n))
    weights = weight_matrix(meta, KernelConfig(family="rbf", sigma=sigma))
    return Batch(anchors, candidates, weights, norm_tol=norm_tol)


def _errors(analytic: np.ndarray, numeric: np.ndarray) -> tuple[float, float, tuple[int, int]]:
    abs_err = np.abs(analytic - numeric)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    rel = abs_err / denom
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape)
    return float(np.max(abs_err)), float(np.max(rel)), (int(worst[0]), int(worst[1]))


def check_loss_op(
    op_name: str,
    op: Callable[[Batch, LossConfig], LossResult],
    b: Batch,
    cfg: LossConfig,
    step: float = 1e-5,
    threshold: float = 1e-6,
) -> GradReport:
    """Compare both gradient matrices of one loss against central differences.

    ``worst_index`` rows 0..N-1 refer to the anchor gradient, N..2N-1 to the
    candidate gradient.
    """
    res = op(b, cfg)

    num_a = finite_diff(lambda f: op(Batch(f, b.candidates, b.weights, b.norm_tol), cfg).value, b.anchors, step)
    num_c = finite_diff(lambda f: op(Batch(b.anchors, f, b.weights, b.norm_tol), cfg).value, b.candidates, step)
    analytic = np.vstack([res.grad_anchor, res.grad_candidate])
    numeric = np.vstack([num_a, num_c])

    max_abs, max_rel, worst = _errors(analytic, numeric)
    return GradReport(op_name, max_abs, max_rel, worst, max_rel < threshold)


def check_all(
    seeds: Sequence[int],
    sizes: Sequence[tuple[int, int]],
    threshold: float = 1e-6,
    step: float = 1e-5,
    tau: float = 0.1,
    lam: float = 1.0,
) -> list[GradReport]:
    """One report per (loss op x seed x size); failures are reported, not raised."""
    cfg = LossConfig(tau=tau, lam=lam)
    reports: list[GradReport] = []
    for seed in seeds:
        for n, d in sizes:
            b = random_batch(Rng(seed), n, d)
            for name, op in LOSS_OPS.items():
                reports.append(check_loss_op(name, op, b, cfg, step=step, threshold=threshold))
    return reports
