import numpy as np
import pytest

from condcl.kernels import KernelConfig, MetaBatch, WeightMatrix, weight_matrix
from condcl.losses import Batch
from condcl.numerics import Rng, row_normalize


def unit_rows(rng: Rng, n: int, d: int) -> np.ndarray:
    return row_normalize(rng.generator.standard_normal((n, d)))


def rbf_batch(seed: int, n: int, d: int, sigma: float = 1.0, norm_tol: float = 1e-6) -> Batch:
    """Random two-view batch with rbf weights over uniform scalar meta-data."""
    rng = Rng(seed)
    anchors = unit_rows(rng, n, d)
    candidates = unit_rows(rng, n, d)
    meta = MetaBatch.from_continuous(rng.generator.uniform(0.0, 3.0, size=n))
    return Batch(anchors, candidates, weight_matrix(meta, KernelConfig("rbf", sigma)), norm_tol)


def explicit_batch(anchors, candidates, w) -> Batch:
    w = np.asarray(w, dtype=np.float64)
    wm = WeightMatrix(w=w, z_hat=np.mean(w, axis=1), sup_norm=1.0)
    return Batch(np.asarray(anchors, dtype=np.float64), np.asarray(candidates, dtype=np.float64), wm)


@pytest.fixture
def rng():
    return Rng(20240817)
