"""Dense float64 array helpers, stable reductions, and seeded randomness.

Every batched quantity in the package (features, kernel weights, gradients,
network parameters) is a C-contiguous float64 ``numpy.ndarray``. The helpers
here validate that contract and provide the two reductions whose numerical
behaviour the rest of the package depends on: sphere projection and a
max-shifted log-sum-exp.

Randomness goes through :class:`Rng`, a thin wrapper around numpy's Philox
counter-based generator. Identical seeds give identical streams, and
:meth:`Rng.split` yields independent child streams so parallel experiments
never share state.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyInputError, ShapeMismatchError, ZeroRowError

__all__ = [
    "Rng",
    "as_matrix",
    "as_vector",
    "logsumexp",
    "pairwise_dot",
    "row_normalize",
]

_ZERO_ROW_FLOOR = 1e-30


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate ``a`` as a finite 2-D float64 array and return a C-contiguous copy-free view."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ShapeMismatchError(f"{name} contains non-finite entries")
    return m


def as_vector(a, name: str = "vector") -> np.ndarray:
    """Validate ``a`` as a finite 1-D float64 array."""
    v = np.ascontiguousarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeMismatchError(f"{name} must be 1-D, got ndim={v.ndim}")
    if not np.all(np.isfinite(v)):
        raise ShapeMismatchError(f"{name} contains non-finite entries")
    return v


def row_normalize(m) -> np.ndarray:
    """Project every row of ``m`` onto the unit sphere.

    Raises :class:`ZeroRowError` if any row norm falls below 1e-30; direction
    is preserved and the result is idempotent under re-application.
    """
    m = as_matrix(m)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    if np.any(norms < _ZERO_ROW_FLOOR):
        bad = int(np.argmin(norms))
        raise ZeroRowError(f"row {bad} has norm {norms[bad]:.3e} < {_ZERO_ROW_FLOOR:.0e}")
    return m / norms[:, None]


def logsumexp(v) -> float:
    """log(sum(exp(v))) with max-subtraction; exact for constant vectors."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise EmptyInputError("logsumexp of an empty vector")
    if not np.all(np.isfinite(v)):
        raise ShapeMismatchError("logsumexp input contains non-finite entries")
    hi = float(np.max(v))
    return hi + float(np.log(np.sum(np.exp(v - hi))))


def logsumexp_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise max-shifted log-sum-exp of a 2-D array."""
    hi = np.max(m, axis=1, keepdims=True)
    return (hi + np.log(np.sum(np.exp(m - hi), axis=1, keepdims=True)))[:, 0]


def pairwise_dot(a, b) -> np.ndarray:
    """All inner products between rows of ``a`` (N x d) and rows of ``b`` (M x d)."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatchError(f"column counts differ: {a.shape[1]} vs {b.shape[1]}")
    return a @ b.T


class Rng:
    """Seeded, splittable random stream (Philox counter-based generator).

    The same seed always reproduces the same stream, and ``split`` spawns
    independent child streams, so samplers never have to thread generator
    state between experiments.
    """

    def __init__(self, seed: int | np.random.SeedSequence):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed))
        self.generator = np.random.Generator(np.random.Philox(self._seq))

    def split(self, n: int) -> list["Rng"]:
        """Spawn ``n`` independent child streams."""
        return [Rng(seq) for seq in self._seq.spawn(n)]

    def state(self) -> dict:
        """JSON-serializable snapshot of the generator state."""
        raw = self.generator.bit_generator.state
        return {
            "bit_generator": raw["bit_generator"],
            "counter": [int(x) for x in raw["state"]["counter"]],
            "key": [int(x) for x in raw["state"]["key"]],
            "buffer": [int(x) for x in raw["buffer"]],
            "buffer_pos": int(raw["buffer_pos"]),
            "has_uint32": int(raw["has_uint32"]),
            "uinteger": int(raw["uinteger"]),
        }

    def set_state(self, snapshot: dict) -> None:
        """Restore a snapshot taken with :meth:`state`."""
        self.generator.bit_generator.state = {
            "bit_generator": snapshot["bit_generator"],
            "state": {
                "counter": np.array(snapshot["counter"], dtype=np.uint64),
                "key": np.array(snapshot["key"], dtype=np.uint64),
            },
            "buffer": np.array(snapshot["buffer"], dtype=np.uint64),
            "buffer_pos": snapshot["buffer_pos"],
            "has_uint32": snapshot["has_uint32"],
            "uinteger": snapshot["uinteger"],
        }
