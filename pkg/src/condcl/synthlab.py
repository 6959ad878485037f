"""Synthetic generative models and the Monte Carlo verification machinery.

A :class:`SyntheticModel` specifies a scalar label distribution p(y) and a
conditional p(x|y) that places x on the unit sphere: a mean direction
depending on y plus angular noise of concentration ``kappa`` projected back
onto the sphere. Labels can be continuous (uniform, Gaussian mixture) or
discrete (latent classes mapped to fixed directions).

From such a model the samplers draw similar and dissimilar label pairs by
rejection: a proposal y' ~ p(y) is accepted with probability w(y, y') for
positives and 1 - w(y, y') for negatives. Because the kernels are bounded
by 1, p(y) is a perfect envelope and both samplers are exact, no
importance weights needed.

On top of the samplers, :func:`mc_limit_terms` estimates the two
large-batch limit terms of the weighted InfoNCE loss - the expected
positive-pair similarity and the expected log mean exponential similarity
to an independent sample - and :func:`convergence_experiment` measures how
fast the finite-batch loss approaches their difference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RejectionBudgetError, ShapeMismatchError, UnknownFamilyError
from .kernels import KernelConfig, WeightMatrix
from .losses import Batch, LossConfig, yaware_infonce
from .numerics import Rng, as_matrix, row_normalize

__all__ = [
    "ConvergenceRow",
    "FrozenEncoder",
    "LabelDistribution",
    "LimitEstimate",
    "McLimits",
    "SyntheticModel",
    "convergence_experiment",
    "default_model",
    "kernel_values",
    "label_weight_matrix",
    "mc_limit_terms",
    "sample_negative_pair",
    "sample_negative_pairs",
    "sample_positive_pair",
    "sample_positive_pairs",
    "summarize_convergence",
]

_REJECTION_BUDGET = 1_000_000


@dataclass(frozen=True)
class LabelDistribution:
    """Samplable scalar label law: uniform on [low, high], a Gaussian mixture,
    or a finite discrete distribution."""

    kind: str
    low: float = 0.0
    high: float = 1.0
    means: tuple[float, ...] = ()
    stds: tuple[float, ...] = ()
    mix_weights: tuple[float, ...] = ()
    values: tuple[float, ...] = ()
    probs: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "uniform":
            if not self.low < self.high:
                raise ShapeMismatchError("uniform labels need low < high")
        elif self.kind == "gaussian_mixture":
            k = len(self.means)
            if k == 0 or len(self.stds) != k or len(self.mix_weights) != k:
                raise ShapeMismatchError("mixture needs matching means/stds/weights")
            if abs(sum(self.mix_weights) - 1.0) > 1e-12 or any(s <= 0 for s in self.stds):
                raise ShapeMismatchError("mixture weights must sum to 1 and stds be positive")
        elif self.kind == "discrete":
            k = len(self.values)
            if k == 0 or len(self.probs) != k:
                raise ShapeMismatchError("discrete labels need matching values/probs")
            if abs(sum(self.probs) - 1.0) > 1e-12 or any(p < 0 for p in self.probs):
                raise ShapeMismatchError("discrete probs must be non-negative and sum to 1")
        else:
            raise ShapeMismatchError(f"unknown label distribution kind {self.kind!r}")

    def sample(self, rng: Rng, n: int) -> np.ndarray:
        g = rng.generator
        if self.kind == "uniform":
            return g.uniform(self.low, self.high, size=n)
        if self.kind == "gaussian_mixture":
            comp = g.choice(len(self.means), size=n, p=self.mix_weights)
            return np.asarray(self.means)[comp] + np.asarray(self.stds)[comp] * g.standard_normal(n)
        comp = g.choice(len(self.values), size=n, p=self.probs)
        return np.asarray(self.values, dtype=np.float64)[comp]


@dataclass(frozen=True)
class SyntheticModel:
    """p(y) plus a conditional p(x|y) on the sphere.

    ``mean_map`` is either ``great_circle`` (the mean direction rotates in
    the first two coordinates at ``freq`` radians per unit label) or
    ``class_directions`` (label values index rows of a fixed direction set,
    the discrete latent-class case). ``kappa`` is the angular noise
    concentration; ``None`` means noiseless.
    """

    label_dist: LabelDistribution
    embed_dim: int = 3
    mean_map: str = "great_circle"
    freq: float = 0.5
    phase: float = 0.0
    class_directions: np.ndarray | None = None
    kappa: float | None = 20.0
    latent_classes: int | None = None

    def __post_init__(self):
        if self.embed_dim < 2:
            raise ShapeMismatchError("embed_dim must be >= 2")
        if self.mean_map not in ("great_circle", "class_directions"):
            raise ShapeMismatchError(f"unknown mean_map {self.mean_map!r}")
        if self.mean_map == "class_directions":
            if self.class_directions is None:
                raise ShapeMismatchError("class_directions mean_map needs a direction set")
            dirs = row_normalize(as_matrix(self.class_directions, "class_directions"))
            if dirs.shape[1] != self.embed_dim:
                raise ShapeMismatchError("class directions must have embed_dim columns")
            object.__setattr__(self, "class_directions", dirs)
        if self.kappa is not None and self.kappa <= 0:
            raise ShapeMismatchError("kappa must be positive or None")

    def mean_directions(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if self.mean_map == "great_circle":
            angles = self.freq * y + self.phase
            out = np.zeros((y.shape[0], self.embed_dim))
            out[:, 0] = np.cos(angles)
            out[:, 1] = np.sin(angles)
            return out
        idx = np.rint(y).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= self.class_directions.shape[0]):
            raise ShapeMismatchError("label value outside the class direction table")
        return self.class_directions[idx]

    def sample_x(self, y: np.ndarray, rng: Rng) -> np.ndarray:
        """x ~ p(x|y): mean direction perturbed tangentially with std 1/sqrt(kappa)."""
        mu = self.mean_directions(y)
        if self.kappa is None:
            return mu
        noise = rng.generator.standard_normal(mu.shape)
        return row_normalize(np.sqrt(self.kappa) * mu + noise)

    def sample_xy(self, rng: Rng, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Joint draw (x, y): y ~ p(y), x ~ p(x|y)."""
        y = self.label_dist.sample(rng, n)
        return self.sample_x(y, rng), y


def default_model() -> SyntheticModel:
    """Continuous labels on [0, 10] tracing a great circle with kappa = 20.

    These constants are this package's convention for exercising the rbf
    kernel nontrivially; nothing pins them down externally.
    """
    return SyntheticModel(
        label_dist=LabelDistribution(kind="uniform", low=0.0, high=10.0),
        embed_dim=3,
        mean_map="great_circle",
        freq=0.5,
        kappa=20.0,
    )


def kernel_values(cfg: KernelConfig, y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
    """Vectorized kernel on scalar labels; broadcasting applies.

    ``rbf`` uses the Gaussian form, ``categorical`` exact value equality.
    The product family needs two meta parts and has no scalar-label analogue.
    """
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    if cfg.family == "rbf":
        return np.exp(-((y1 - y2) ** 2) / (2.0 * cfg.sigma * cfg.sigma))
    if cfg.family == "categorical":
        return (y1 == y2).astype(np.float64)
    raise UnknownFamilyError("scalar-label sampling supports the rbf and categorical families")


def label_weight_matrix(cfg: KernelConfig, y: np.ndarray) -> WeightMatrix:
    """Batch weight matrix over scalar labels, peak pinned on the diagonal."""
    w = kernel_values(cfg, y[:, None], y[None, :])
    w = 0.5 * (w + w.T)
    np.fill_diagonal(w, 1.0)
    return WeightMatrix(w=w, z_hat=np.mean(w, axis=1), sup_norm=1.0)


def _rejection_pairs(
    m: SyntheticModel, cfg: KernelConfig, rng: Rng, n: int, accept_dissimilar: bool
) -> tuple[np.ndarray, np.ndarray]:
    """(y, y') pairs where y' is accepted with probability w(y, y') or 1 - w."""
    if cfg.sup_norm != 1.0:
        raise ShapeMismatchError("rejection sampling needs kernel sup-norm 1")
    g = rng.generator
    y = m.label_dist.sample(rng, n)
    partner = np.empty(n)
    pending = np.arange(n)
    rejected_streak = 0
    while pending.size:
        proposal = m.label_dist.sample(rng, pending.size)
        w = kernel_values(cfg, y[pending], proposal)
        p_accept = (1.0 - w) if accept_dissimilar else w
        accepted = g.random(pending.size) < p_accept
        partner[pending[accepted]] = proposal[accepted]
        if not accepted.any():
            rejected_streak += pending.size
            if rejected_streak >= _REJECTION_BUDGET:
                raise RejectionBudgetError(
                    f"{rejected_streak} consecutive proposals rejected; "
                    "the kernel bandwidth makes this pairing practically unreachable"
                )
        else:
            rejected_streak = 0
        pending = pending[~accepted]
    return y, partner


def sample_positive_pairs(
    m: SyntheticModel, cfg: KernelConfig, rng: Rng, n: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """n draws of (x, y, x+, y+) where y+ follows the similarity-weighted law
    w(y, y+) p(y+) / Z(y); exact because p(y) envelopes it."""
    y, y_plus = _rejection_pairs(m, cfg, rng, n, accept_dissimilar=False)
    return m.sample_x(y, rng), y, m.sample_x(y_plus, rng), y_plus


def sample_negative_pairs(
    m: SyntheticModel, cfg: KernelConfig, rng: Rng, n: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """n draws of (x, y, x-, y-) where y- follows the dissimilarity-weighted
    law (1 - w(y, y-)) p(y-) / (1 - Z(y))."""
    y, y_minus = _rejection_pairs(m, cfg, rng, n, accept_dissimilar=True)
    return m.sample_x(y, rng), y, m.sample_x(y_minus, rng), y_minus


def sample_positive_pair(m: SyntheticModel, cfg: KernelConfig, rng: Rng):
    """Single-draw convenience wrapper around :func:`sample_positive_pairs`."""
    x, y, xp, yp = sample_positive_pairs(m, cfg, rng, 1)
    return x[0], float(y[0]), xp[0], float(yp[0])


def sample_negative_pair(m: SyntheticModel, cfg: KernelConfig, rng: Rng):
    x, y, xm, ym = sample_negative_pairs(m, cfg, rng, 1)
    return x[0], float(y[0]), xm[0], float(ym[0])


# ---------------------------------------------------------------------------
# frozen encoders and limit estimation


class FrozenEncoder:
    """Fixed deterministic map onto the unit sphere.

    The large-batch limit holds for any fixed embedding, so verification uses
    either the identity (inputs already on the sphere) or a random
    never-trained MLP.
    """

    def __init__(self, embed_fn, name: str):
        self._fn = embed_fn
        self.name = name

    @classmethod
    def identity(cls) -> "FrozenEncoder":
        return cls(row_normalize, "identity")

    @classmethod
    def random_mlp(cls, layer_dims, seed: int) -> "FrozenEncoder":
        from .encoder import Mlp, forward

        mlp = Mlp.init(layer_dims, Rng(seed))
        return cls(lambda x: forward(mlp, x)[0], f"mlp{tuple(layer_dims)}-seed{seed}")

    def embed(self, x: np.ndarray) -> np.ndarray:
        return self._fn(as_matrix(x, "encoder input"))


@dataclass(frozen=True)
class LimitEstimate:
    value: float
    stderr: float


@dataclass(frozen=True)
class McLimits:
    align: LimitEstimate
    unif: LimitEstimate


def _batch_means_stderr(batch_means: np.ndarray) -> float:
    return float(np.std(batch_means, ddof=1) / np.sqrt(batch_means.size))


def mc_limit_terms(
    m: SyntheticModel,
    enc: FrozenEncoder,
    cfg: KernelConfig,
    loss_cfg: LossConfig,
    n_samples: int,
    rng: Rng,
    n_batches: int = 32,
    n_inner: int | None = None,
) -> McLimits:
    """Monte Carlo estimates of the two limit terms with batch-means stderr.

    The attraction limit is the mean similarity over similarity-weighted
    pairs. The repulsion limit nests two expectations, so each of the
    ``n_batches`` batches draws its own fresh inner sample of size
    ``n_inner`` (default sqrt(n_samples), balancing the inner bias against
    the outer variance) and the outer log-mean-exp is averaged in chunks.
    """
    if n_samples < 1000:
        raise ShapeMismatchError("limit estimation needs n_samples >= 1000")
    if n_inner is None:
        n_inner = int(np.sqrt(n_samples))
    align_rng, unif_rng = rng.split(2)

    x, _, x_plus, _ = sample_positive_pairs(m, cfg, align_rng, n_samples)
    sims = np.einsum("ij,ij->i", enc.embed(x), enc.embed(x_plus)) / loss_cfg.tau
    per_batch = n_samples // n_batches
    used = per_batch * n_batches
    align_means = sims[:used].reshape(n_batches, per_batch).mean(axis=1)
    align = LimitEstimate(float(np.mean(align_means)), _batch_means_stderr(align_means))

    unif_means = np.empty(n_batches)
    chunk = 2048
    for b, batch_rng in enumerate(unif_rng.split(n_batches)):
        inner_rng, outer_rng = batch_rng.split(2)
        x_inner, _ = m.sample_xy(inner_rng, n_inner)
        f_inner = enc.embed(x_inner)
        total = 0.0
        done = 0
        while done < per_batch:
            take = min(chunk, per_batch - done)
            x_outer, _ = m.sample_xy(outer_rng, take)
            s = (enc.embed(x_outer) @ f_inner.T) / loss_cfg.tau
            hi = np.max(s, axis=1, keepdims=True)
            lme = hi[:, 0] + np.log(np.mean(np.exp(s - hi), axis=1))
            total += float(np.sum(lme))
            done += take
        unif_means[b] = total / per_batch
    unif = LimitEstimate(float(np.mean(unif_means)), _batch_means_stderr(unif_means))
    return McLimits(align=align, unif=unif)


# ---------------------------------------------------------------------------
# finite-batch convergence


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    rep: int
    loss_value: float
    limit_align: float
    limit_unif: float
    abs_gap: float


def convergence_experiment(
    m: SyntheticModel,
    enc: FrozenEncoder,
    cfg: KernelConfig,
    loss_cfg: LossConfig,
    batch_sizes: list[int],
    reps: int,
    rng: Rng,
    limits: McLimits | None = None,
    n_oracle: int = 1_000_000,
) -> list[ConvergenceRow]:
    """Gap between the finite-batch weighted InfoNCE and its limit.

    Each rep draws a fresh two-view batch (the second view re-samples
    p(x|y), playing the role of augmentation), evaluates the loss, and
    records |loss - (unif_limit - align_limit)|. When ``limits`` is not
    supplied they are estimated first with ``n_oracle`` samples.
    """
    if any(b < 2 for b in batch_sizes) or sorted(batch_sizes) != list(batch_sizes):
        raise ShapeMismatchError("batch sizes must be ascending and each >= 2")
    if reps < 1:
        raise ShapeMismatchError("reps must be >= 1")
    oracle_rng, batch_rng = rng.split(2)
    if limits is None:
        limits = mc_limit_terms(m, enc, cfg, loss_cfg, n_oracle, oracle_rng)
    target = -limits.align.value + limits.unif.value

    rows: list[ConvergenceRow] = []
    streams = batch_rng.split(len(batch_sizes))
    for n, size_rng in zip(batch_sizes, streams):
        for rep, rep_rng in enumerate(size_rng.split(reps)):
            y = m.label_dist.sample(rep_rng, n)
            anchors = enc.embed(m.sample_x(y, rep_rng))
            candidates = enc.embed(m.sample_x(y, rep_rng))
            batch = Batch(anchors, candidates, label_weight_matrix(cfg, y))
            value = yaware_infonce(batch, loss_cfg).value
            rows.append(
                ConvergenceRow(n, rep, value, limits.align.value, limits.unif.value, abs(value - target))
            )
    return rows


def summarize_convergence(rows: list[ConvergenceRow]) -> list[tuple[int, float, float | None]]:
    """Per batch size: (N, mean absolute gap, stderr or None for a single rep)."""
    out = []
    for n in sorted({r.n for r in rows}):
        gaps = np.array([r.abs_gap for r in rows if r.n == n])
        stderr = float(np.std(gaps, ddof=1) / np.sqrt(gaps.size)) if gaps.size > 1 else None
        out.append((n, float(np.mean(gaps)), stderr))
    return out
