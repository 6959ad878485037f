"""Meta-data similarity kernels and the batch weight matrix.

Meta-data records carry a continuous part (e.g. age in years) and a
categorical part (e.g. a sex code). Three kernel families are shipped:

* ``rbf``         -- exp(-||y-y'||^2 / (2 sigma^2)) on the continuous part,
* ``categorical`` -- indicator that every categorical code matches,
* ``product``     -- rbf on the continuous part times the categorical indicator.

All three peak at 1, so the stored sup-norm is always 1. Kernel values are
never renormalized per row; the losses divide by the empirical mean weight
``z_hat`` themselves, and the conditional uniformity estimator normalizes
differently, so the raw matrix stays reusable by both.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArityMismatchError, BandwidthError, ShapeMismatchError, UnknownFamilyError

__all__ = [
    "KernelConfig",
    "MetaBatch",
    "MetaRecord",
    "WeightMatrix",
    "categorical_kernel",
    "kernel_sup_norm",
    "product_kernel",
    "rbf_kernel",
    "weight_matrix",
]

_FAMILIES = ("rbf", "categorical", "product")


@dataclass(frozen=True)
class MetaRecord:
    """One sample's proxy label: continuous coordinates plus categorical codes."""

    continuous: tuple[float, ...] = ()
    categorical: tuple[int, ...] = ()

    def __post_init__(self):
        cont = tuple(float(v) for v in self.continuous)
        cat = tuple(int(v) for v in self.categorical)
        if not all(np.isfinite(cont)):
            raise ShapeMismatchError("continuous meta-data must be finite")
        if any(c < 0 for c in cat):
            raise ShapeMismatchError("categorical codes must be >= 0")
        object.__setattr__(self, "continuous", cont)
        object.__setattr__(self, "categorical", cat)


@dataclass(frozen=True)
class MetaBatch:
    """N meta-data records with shared arity, stored column-wise.

    ``continuous`` is (N, p_c) float64 and ``categorical`` is (N, p_k) int64;
    either may have zero columns.
    """

    continuous: np.ndarray
    categorical: np.ndarray

    def __post_init__(self):
        cont = np.ascontiguousarray(self.continuous, dtype=np.float64)
        cat = np.ascontiguousarray(self.categorical, dtype=np.int64)
        if cont.ndim != 2 or cat.ndim != 2:
            raise ShapeMismatchError("meta-data arrays must be 2-D (N x arity)")
        if cont.shape[0] != cat.shape[0]:
            raise ShapeMismatchError(
                f"continuous and categorical record counts differ: {cont.shape[0]} vs {cat.shape[0]}"
            )
        if not np.all(np.isfinite(cont)):
            raise ShapeMismatchError("continuous meta-data must be finite")
        if cat.size and np.any(cat < 0):
            raise ShapeMismatchError("categorical codes must be >= 0")
        object.__setattr__(self, "continuous", cont)
        object.__setattr__(self, "categorical", cat)

    @classmethod
    def from_records(cls, records: list[MetaRecord]) -> "MetaBatch":
        if not records:
            raise ShapeMismatchError("a meta batch needs at least one record")
        arity_c = {len(r.continuous) for r in records}
        arity_k = {len(r.categorical) for r in records}
        if len(arity_c) != 1 or len(arity_k) != 1:
            raise ArityMismatchError("records in a batch must share identical arity")
        cont = np.array([r.continuous for r in records], dtype=np.float64).reshape(len(records), -1)
        cat = np.array([r.categorical for r in records], dtype=np.int64).reshape(len(records), -1)
        return cls(cont, cat)

    @classmethod
    def from_continuous(cls, values) -> "MetaBatch":
        """Batch with purely continuous meta-data; 1-D input becomes one column."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        return cls(arr, np.zeros((arr.shape[0], 0), dtype=np.int64))

    @classmethod
    def from_labels(cls, labels) -> "MetaBatch":
        """Batch whose only meta-data is one categorical code per sample."""
        arr = np.asarray(labels, dtype=np.int64).reshape(-1, 1)
        return cls(np.zeros((arr.shape[0], 0), dtype=np.float64), arr)

    def __len__(self) -> int:
        return self.continuous.shape[0]

    def record(self, i: int) -> MetaRecord:
        return MetaRecord(tuple(self.continuous[i]), tuple(self.categorical[i]))

    def take(self, idx) -> "MetaBatch":
        return MetaBatch(self.continuous[idx], self.categorical[idx])


@dataclass(frozen=True)
class KernelConfig:
    """Kernel family plus bandwidth. ``sigma`` has no default on purpose: a
    silent value would masquerade as something the loss definitions pin down,
    and they do not."""

    family: str
    sigma: float | None = None
    sup_norm: float = field(default=1.0)

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise UnknownFamilyError(f"unknown kernel family {self.family!r}; expected one of {_FAMILIES}")
        if self.family in ("rbf", "product"):
            if self.sigma is None or not np.isfinite(self.sigma) or self.sigma <= 0:
                raise BandwidthError(f"family {self.family!r} requires sigma > 0, got {self.sigma}")
        if self.sup_norm != 1.0:
            raise UnknownFamilyError("all shipped kernel families have sup-norm 1")


def kernel_sup_norm(cfg: KernelConfig) -> float:
    """Maximum kernel value; 1.0 for every shipped family."""
    if cfg.family not in _FAMILIES:
        raise UnknownFamilyError(f"unknown kernel family {cfg.family!r}")
    return 1.0


def _check_arity(y1: MetaRecord, y2: MetaRecord) -> None:
    if len(y1.continuous) != len(y2.continuous) or len(y1.categorical) != len(y2.categorical):
        raise ArityMismatchError(
            f"meta-data arity mismatch: ({len(y1.continuous)},{len(y1.categorical)}) "
            f"vs ({len(y2.continuous)},{len(y2.categorical)})"
        )


def rbf_kernel(y1: MetaRecord, y2: MetaRecord, sigma: float) -> float:
    """Gaussian similarity of the continuous parts, in (0, 1]."""
    if not np.isfinite(sigma) or sigma <= 0:
        raise BandwidthError(f"sigma must be > 0, got {sigma}")
    _check_arity(y1, y2)
    d2 = sum((a - b) ** 2 for a, b in zip(y1.continuous, y2.continuous))
    return float(np.exp(-d2 / (2.0 * sigma * sigma)))


def categorical_kernel(y1: MetaRecord, y2: MetaRecord) -> float:
    """1.0 iff every categorical code matches (vacuously 1.0 for empty parts)."""
    _check_arity(y1, y2)
    return 1.0 if y1.categorical == y2.categorical else 0.0


def product_kernel(y1: MetaRecord, y2: MetaRecord, sigma: float) -> float:
    """rbf on the continuous parts times the categorical indicator."""
    return rbf_kernel(y1, y2, sigma) * categorical_kernel(y1, y2)


@dataclass(frozen=True)
class WeightMatrix:
    """All pairwise kernel values for a batch plus per-anchor mean weight.

    ``w`` is symmetric with entries in [0, sup_norm]; ``z_hat[i]`` is the
    arithmetic mean of row i.
    """

    w: np.ndarray
    z_hat: np.ndarray
    sup_norm: float = 1.0

    def __post_init__(self):
        w = np.ascontiguousarray(self.w, dtype=np.float64)
        z = np.ascontiguousarray(self.z_hat, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeMismatchError(f"weight matrix must be square, got {w.shape}")
        if z.shape != (w.shape[0],):
            raise ShapeMismatchError("z_hat length must match the weight matrix size")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "z_hat", z)

    def __len__(self) -> int:
        return self.w.shape[0]


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def weight_matrix(batch: MetaBatch, cfg: KernelConfig) -> WeightMatrix:
    """Kernel values w[i][j] for every record pair, with fixed-order row means."""
    n = len(batch)
    if n < 1:
        raise ShapeMismatchError("weight matrix needs at least one record")

    if cfg.family in ("rbf", "product"):
        d2 = _pairwise_sq_dists(batch.continuous)
        w = np.exp(-d2 / (2.0 * cfg.sigma * cfg.sigma))
    else:
        w = np.ones((n, n), dtype=np.float64)

    if cfg.family in ("categorical", "product"):
        cat = batch.categorical
        same = np.all(cat[:, None, :] == cat[None, :, :], axis=2)
        w = w * same.astype(np.float64)

    # exact symmetry and exact peak on the diagonal, immune to fp noise in d2
    w = 0.5 * (w + w.T)
    if cfg.family in ("rbf", "product"):
        np.fill_diagonal(w, 1.0)

    z_hat = np.mean(w, axis=1)
    return WeightMatrix(w=w, z_hat=z_hat, sup_norm=kernel_sup_norm(cfg))
