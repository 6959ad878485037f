"""Forward values and analytic gradients for the contrastive losses.

All losses operate on a two-view :class:`Batch`: N source samples, two
augmented views each. Rows of ``anchors`` are the first view, rows of
``candidates`` the second, and ``candidates[i]`` is the positive of
``anchors[i]``. Similarities are ``s_ij = anchors[i] . candidates[j] / tau``
and every loss averages its per-anchor expression over the N anchors. The
anchor's own second view participates as candidate ``j = i``; nothing is
excluded from denominators.

Shipped losses:

* :func:`yaware_infonce`          -- kernel-weighted InfoNCE,
* :func:`conditional_alignment`   -- its attraction term,
* :func:`global_uniformity`       -- its repulsion term (the two sum exactly
                                     to the weighted InfoNCE value),
* :func:`conditional_uniformity`  -- repulsion weighted by meta-data
                                     dissimilarity ``(M - w) / (M - z_hat)``,
* :func:`combined_objective`      -- alignment + lambda * conditional uniformity,
* :func:`supcon_reference` / :func:`infonce_reference`
                                  -- independently coded baselines kept as
                                     equivalence oracles.

Gradients are closed forms derived through softmax algebra, not autodiff;
the gradcheck module validates every one of them against central finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    AllSimilarError,
    DegenerateWeightsError,
    NoPositiveError,
    ShapeMismatchError,
)
from .kernels import WeightMatrix
from .numerics import as_matrix, logsumexp_rows

__all__ = [
    "Batch",
    "LossConfig",
    "LossResult",
    "combined_objective",
    "conditional_alignment",
    "conditional_uniformity",
    "global_uniformity",
    "identity_weight_matrix",
    "infonce_reference",
    "supcon_reference",
    "symmetrized",
    "yaware_infonce",
]


@dataclass(frozen=True)
class LossConfig:
    """Temperature, uniformity weight, and the numerical floor.

    ``tau`` defaults to 0.1, a conventional contrastive-learning value (the
    loss definitions themselves do not pin one down). ``lam`` weights the
    uniformity term of :func:`combined_objective`.
    """

    tau: float = 0.1
    lam: float = 1.0
    epsilon: float = 1e-12

    def __post_init__(self):
        if not np.isfinite(self.tau) or self.tau <= 0:
            raise ShapeMismatchError(f"tau must be > 0, got {self.tau}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ShapeMismatchError(f"lam must be >= 0, got {self.lam}")
        if not (0 < self.epsilon <= 1e-6):
            raise ShapeMismatchError(f"epsilon must lie in (0, 1e-6], got {self.epsilon}")


@dataclass(frozen=True)
class LossResult:
    """Scalar loss plus gradients with respect to the feature inputs."""

    value: float
    grad_anchor: np.ndarray
    grad_candidate: np.ndarray | None = None


@dataclass(frozen=True)
class Batch:
    """Two unit-norm feature views plus the kernel weights of their meta-data.

    ``norm_tol`` is the admissible deviation of row norms from 1; the
    finite-difference checker loosens it because perturbed rows leave the
    sphere infinitesimally.
    """

    anchors: np.ndarray
    candidates: np.ndarray
    weights: WeightMatrix
    norm_tol: float = 1e-6

    def __post_init__(self):
        a = as_matrix(self.anchors, "anchors")
        c = as_matrix(self.candidates, "candidates")
        if a.shape != c.shape:
            raise ShapeMismatchError(f"view shapes differ: {a.shape} vs {c.shape}")
        if a.shape[0] < 1:
            raise ShapeMismatchError("batch must contain at least one sample")
        if len(self.weights) != a.shape[0]:
            raise ShapeMismatchError(
                f"weight matrix is {len(self.weights)}x{len(self.weights)} for a batch of {a.shape[0]}"
            )
        for name, m in (("anchors", a), ("candidates", c)):
            norms = np.sqrt(np.einsum("ij,ij->i", m, m))
            if np.any(np.abs(norms - 1.0) > self.norm_tol):
                bad = int(np.argmax(np.abs(norms - 1.0)))
                raise ShapeMismatchError(
                    f"{name} row {bad} has norm {norms[bad]:.9f}, outside 1 +/- {self.norm_tol:g}"
                )
        object.__setattr__(self, "anchors", a)
        object.__setattr__(self, "candidates", c)

    @property
    def n(self) -> int:
        return self.anchors.shape[0]

    def swapped(self) -> "Batch":
        """The same batch with the two views exchanged (weights are shared)."""
        return Batch(self.candidates, self.anchors, self.weights, self.norm_tol)


def identity_weight_matrix(n: int) -> WeightMatrix:
    """Weights marking only each anchor's own view as positive (w[i][j] = 1 iff i = j)."""
    return WeightMatrix(w=np.eye(n), z_hat=np.full(n, 1.0 / n), sup_norm=1.0)


def _scores(b: Batch, cfg: LossConfig) -> np.ndarray:
    return (b.anchors @ b.candidates.T) / cfg.tau


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    p = np.exp(s - np.max(s, axis=1, keepdims=True))
    p /= np.sum(p, axis=1, keepdims=True)
    return p


def _log_mean_exp_rows(s: np.ndarray) -> np.ndarray:
    return logsumexp_rows(s) - np.log(s.shape[1])


def _feature_grads(b: Batch, cfg: LossConfig, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Chain a d(loss)/d(scores) matrix through s = A C^T / tau."""
    return (g @ b.candidates) / cfg.tau, (g.T @ b.anchors) / cfg.tau


def _attraction_weights(b: Batch, cfg: LossConfig) -> np.ndarray:
    """w_ik / (N z_hat_i); rows sum to 1 up to rounding."""
    z = b.weights.z_hat
    if np.any(z < cfg.epsilon):
        bad = np.nonzero(z < cfg.epsilon)[0]
        raise DegenerateWeightsError(
            f"anchors {bad.tolist()} have mean kernel weight below {cfg.epsilon:g}; "
            "no candidate carries similarity mass"
        )
    return b.weights.w / (b.n * z[:, None])


def yaware_infonce(b: Batch, cfg: LossConfig) -> LossResult:
    """Kernel-weighted InfoNCE averaged over anchors.

    Per anchor i: -(1/N) sum_k (w_ik / z_hat_i) log( e^{s_ik} / ((1/N) sum_j e^{s_ij}) ).
    """
    rw = _attraction_weights(b, cfg)
    s = _scores(b, cfg)
    lme = _log_mean_exp_rows(s)
    value = float(np.mean(np.sum(rw * (lme[:, None] - s), axis=1)))
    g = (_softmax_rows(s) - rw) / b.n
    ga, gc = _feature_grads(b, cfg, g)
    return LossResult(value, ga, gc)


def conditional_alignment(b: Batch, cfg: LossConfig) -> LossResult:
    """Attraction term: -(1/N) sum_k (w_ik / z_hat_i) s_ik, averaged over anchors."""
    rw = _attraction_weights(b, cfg)
    s = _scores(b, cfg)
    value = float(-np.mean(np.sum(rw * s, axis=1)))
    g = -rw / b.n
    ga, gc = _feature_grads(b, cfg, g)
    return LossResult(value, ga, gc)


def global_uniformity(b: Batch, cfg: LossConfig) -> LossResult:
    """Repulsion term: log (1/N) sum_j e^{s_ij}, averaged over anchors."""
    s = _scores(b, cfg)
    value = float(np.mean(_log_mean_exp_rows(s)))
    g = _softmax_rows(s) / b.n
    ga, gc = _feature_grads(b, cfg, g)
    return LossResult(value, ga, gc)


def conditional_uniformity(b: Batch, cfg: LossConfig) -> LossResult:
    """Repulsion weighted by meta-data dissimilarity.

    log (1/N^2) sum_{ij} nu_ij e^{s_ij} with nu_ij = (M - w_ij) / (M - z_hat_i)
    and M the kernel sup-norm. Pairs with w_ij = M (the diagonal, for rbf and
    product kernels) carry zero weight. Raises :class:`AllSimilarError` when
    M - z_hat crosses the floor for some anchor: the dissimilarity
    distribution is then undefined and must not be silently clamped.
    """
    m_sup = b.weights.sup_norm
    den = m_sup - b.weights.z_hat
    degenerate = den < cfg.epsilon
    if np.any(degenerate):
        bad = np.nonzero(degenerate)[0]
        if len(bad) == b.n:
            raise AllSimilarError(
                "all meta-data in the batch are kernel-identical; conditional uniformity is undefined"
            )
        raise AllSimilarError(
            f"anchors {bad.tolist()} see only kernel-identical meta-data; "
            "conditional uniformity is undefined on this batch"
        )
    nu = (m_sup - b.weights.w) / den[:, None]
    s = _scores(b, cfg)
    positive = nu > 0.0
    shift = float(np.max(s[positive]))
    terms = nu * np.exp(np.where(positive, s - shift, -np.inf))
    total = float(np.sum(terms))
    value = float(shift + np.log(total) - 2.0 * np.log(b.n))
    g = terms / total
    ga, gc = _feature_grads(b, cfg, g)
    return LossResult(value, ga, gc)


def combined_objective(b: Batch, cfg: LossConfig) -> LossResult:
    """conditional_alignment + lam * conditional_uniformity."""
    align = conditional_alignment(b, cfg)
    unif = conditional_uniformity(b, cfg)
    return LossResult(
        align.value + cfg.lam * unif.value,
        align.grad_anchor + cfg.lam * unif.grad_anchor,
        align.grad_candidate + cfg.lam * unif.grad_candidate,
    )


def supcon_reference(features, labels, cfg: LossConfig) -> LossResult:
    """Supervised contrastive baseline, coded independently as an oracle.

    ``features`` stacks the two views: rows 0..N-1 are the first view, rows
    N..2N-1 the second, and ``labels`` has length N. Positives of anchor i
    are the second-view rows sharing its label (its own view included); each
    anchor averages the log-softmax over its positives.
    """
    f = as_matrix(features, "features")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ShapeMismatchError("labels must be 1-D")
    n = labels.shape[0]
    if f.shape[0] != 2 * n:
        raise ShapeMismatchError(
            f"features must stack two views ({2 * n} rows for {n} labels), got {f.shape[0]}"
        )
    if n < 2:
        raise ShapeMismatchError("supcon needs at least 2 samples")
    anchors, candidates = f[:n], f[n:]
    pos = labels[:, None] == labels[None, :]
    n_pos = pos.sum(axis=1)
    if np.any(n_pos == 0):
        raise NoPositiveError("an anchor has no positive candidate")

    s = (anchors @ candidates.T) / cfg.tau
    lme = _log_mean_exp_rows(s)
    per_anchor = np.sum(np.where(pos, lme[:, None] - s, 0.0), axis=1) / n_pos
    value = float(np.mean(per_anchor))

    g = (_softmax_rows(s) - pos / n_pos[:, None]) / n
    ga = (g @ candidates) / cfg.tau
    gc = (g.T @ anchors) / cfg.tau
    return LossResult(value, np.vstack([ga, gc]), None)


def infonce_reference(b: Batch, cfg: LossConfig) -> LossResult:
    """Two-view InfoNCE baseline (each anchor's sole positive is its own view).

    Ignores ``b.weights``.
    """
    s = _scores(b, cfg)
    lme = _log_mean_exp_rows(s)
    value = float(np.mean(lme - np.diag(s)))
    g = (_softmax_rows(s) - np.eye(b.n)) / b.n
    ga, gc = _feature_grads(b, cfg, g)
    return LossResult(value, ga, gc)


def symmetrized(loss_fn: Callable[[Batch, LossConfig], LossResult], b: Batch, cfg: LossConfig) -> LossResult:
    """Average of the loss evaluated view1->view2 and view2->view1.

    The trainer optimizes this form; the one-directional losses above stay
    available for the algebraic identities.
    """
    fwd = loss_fn(b, cfg)
    rev = loss_fn(b.swapped(), cfg)
    if fwd.grad_candidate is None or rev.grad_candidate is None:
        raise ShapeMismatchError("symmetrized requires a two-view loss")
    return LossResult(
        0.5 * (fwd.value + rev.value),
        0.5 * (fwd.grad_anchor + rev.grad_candidate),
        0.5 * (fwd.grad_candidate + rev.grad_anchor),
    )
