"""Shared binary test vectors for foreign-interface parity.

The fixture file lets an out-of-process binding verify that its loss and
weight-matrix evaluations match this package numerically without linking
against it. Layout (all integers little-endian):

    magic "CCLF" | version u16 | loss_count u32 | loss entries...
    | wm_count u32 | wm entries...

Loss entry:
    kind u8 | tau f64 | lambda f64 | n u32 | d u32
    | anchors n*d f64 | candidates n*d f64 | weights n*n f64
    | expected_value f64 | expected_grad_anchor n*d f64
    | expected_grad_candidate n*d f64

``kind``: 0 weighted InfoNCE, 1 conditional alignment, 2 global uniformity,
3 conditional uniformity, 4 combined objective. ``weights`` is the raw
kernel matrix; consumers derive the per-anchor mean themselves and assume
sup-norm 1 (all shipped kernel families peak at 1).

Weight-matrix entry:
    family u8 (0 rbf, 1 categorical, 2 product) | sigma f64 (0 if unused)
    | n u32 | p_cont u32 | p_cat u32 | continuous n*p_cont f64
    | categorical n*p_cat i64 | expected_w n*n f64

``python -m condcl.parity OUT.cclf`` regenerates the canonical fixture.
"""

from __future__ import annotations

import struct
import sys
from dataclasses import dataclass

import numpy as np

from . import losses as L
from .errors import FormatError
from .kernels import KernelConfig, MetaBatch, WeightMatrix, weight_matrix
from .losses import Batch, LossConfig
from .numerics import Rng, row_normalize

__all__ = ["FixtureLossEntry", "FixtureWmEntry", "generate_fixture", "read_fixture", "write_fixture"]

_MAGIC = b"CCLF"
_VERSION = 1

LOSS_KINDS = {
    0: L.yaware_infonce,
    1: L.conditional_alignment,
    2: L.global_uniformity,
    3: L.conditional_uniformity,
    4: L.combined_objective,
}
_FAMILIES = {0: "rbf", 1: "categorical", 2: "product"}


@dataclass(frozen=True)
class FixtureLossEntry:
    kind: int
    tau: float
    lam: float
    anchors: np.ndarray
    candidates: np.ndarray
    weights: np.ndarray
    expected_value: float
    expected_grad_anchor: np.ndarray
    expected_grad_candidate: np.ndarray


@dataclass(frozen=True)
class FixtureWmEntry:
    family: int
    sigma: float
    continuous: np.ndarray
    categorical: np.ndarray
    expected_w: np.ndarray


def evaluate_loss(kind: int, anchors, candidates, weights, tau: float, lam: float):
    """Core evaluation as exposed at the foreign boundary: raw buffers in,
    (value, grad, grad) out; the per-anchor mean weight is derived here."""
    w = np.asarray(weights, dtype=np.float64)
    wm = WeightMatrix(w=w, z_hat=np.mean(w, axis=1), sup_norm=1.0)
    batch = Batch(np.asarray(anchors), np.asarray(candidates), wm, norm_tol=1e-4)
    res = LOSS_KINDS[kind](batch, LossConfig(tau=tau, lam=lam))
    return res.value, res.grad_anchor, res.grad_candidate


def generate_fixture(seed: int = 20240817, n_loss: int = 50, n_wm: int = 12):
    """Deterministic random test vectors with core-recorded expected outputs."""
    rng = Rng(seed)
    g = rng.generator
    taus = [0.05, 0.1, 0.5, 1.0]
    lams = [0.0, 0.5, 1.0, 2.0]

    loss_entries: list[FixtureLossEntry] = []
    for i in range(n_loss):
        kind = i % 5
        n = int(g.integers(2 if kind >= 3 else 1, 9))
        d = int(g.integers(2, 7))
        anchors = row_normalize(g.standard_normal((n, d)))
        candidates = row_normalize(g.standard_normal((n, d)))
        if i % 3 == 0 and n > 1:
            labels = g.integers(0, max(2, n // 2), size=n)
            w = weight_matrix(MetaBatch.from_labels(labels), KernelConfig("categorical")).w
            if kind >= 3 and np.any(1.0 - w.mean(axis=1) < 1e-9):
                w = weight_matrix(
                    MetaBatch.from_continuous(g.uniform(0, 3, size=n)), KernelConfig("rbf", sigma=1.0)
                ).w
        else:
            w = weight_matrix(
                MetaBatch.from_continuous(g.uniform(0, 3, size=n)), KernelConfig("rbf", sigma=1.0)
            ).w
        tau = taus[i % len(taus)]
        lam = lams[i % len(lams)]
        value, ga, gc = evaluate_loss(kind, anchors, candidates, w, tau, lam)
        loss_entries.append(FixtureLossEntry(kind, tau, lam, anchors, candidates, w, value, ga, gc))

    wm_entries: list[FixtureWmEntry] = []
    for i in range(n_wm):
        family = i % 3
        n = int(g.integers(1, 9))
        p_cont = int(g.integers(1, 3)) if family != 1 else 0
        p_cat = 1 if family != 0 else 0
        cont = g.uniform(0, 50, size=(n, p_cont))
        cat = g.integers(0, 2, size=(n, p_cat))
        sigma = float(g.uniform(1.0, 10.0)) if family != 1 else 0.0
        cfg = KernelConfig(_FAMILIES[family], sigma=sigma if family != 1 else None)
        expected = weight_matrix(MetaBatch(cont, cat), cfg).w
        wm_entries.append(FixtureWmEntry(family, sigma, cont, cat, expected))

    return loss_entries, wm_entries


def _f64(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _i64(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<i8").tobytes()


def write_fixture(path, loss_entries, wm_entries) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<H", _VERSION))
        fh.write(struct.pack("<I", len(loss_entries)))
        for e in loss_entries:
            n, d = e.anchors.shape
            fh.write(struct.pack("<B", e.kind))
            fh.write(struct.pack("<dd", e.tau, e.lam))
            fh.write(struct.pack("<II", n, d))
            fh.write(_f64(e.anchors))
            fh.write(_f64(e.candidates))
            fh.write(_f64(e.weights))
            fh.write(struct.pack("<d", e.expected_value))
            fh.write(_f64(e.expected_grad_anchor))
            fh.write(_f64(e.expected_grad_candidate))
        fh.write(struct.pack("<I", len(wm_entries)))
        for e in wm_entries:
            n = e.expected_w.shape[0]
            fh.write(struct.pack("<B", e.family))
            fh.write(struct.pack("<d", e.sigma))
            fh.write(struct.pack("<III", n, e.continuous.shape[1], e.categorical.shape[1]))
            fh.write(_f64(e.continuous))
            fh.write(_i64(e.categorical))
            fh.write(_f64(e.expected_w))


def read_fixture(path) -> tuple[list[FixtureLossEntry], list[FixtureWmEntry]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError(f"bad fixture magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported fixture version {version}")
    pos = 6

    def take_f64(count, shape):
        nonlocal pos
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
        return arr

    def take_i64(count, shape):
        nonlocal pos
        arr = np.frombuffer(blob, dtype="<i8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
        return arr

    (loss_count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    loss_entries = []
    for _ in range(loss_count):
        (kind,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        tau, lam = struct.unpack_from("<dd", blob, pos)
        pos += 16
        n, d = struct.unpack_from("<II", blob, pos)
        pos += 8
        anchors = take_f64(n * d, (n, d))
        candidates = take_f64(n * d, (n, d))
        weights = take_f64(n * n, (n, n))
        (value,) = struct.unpack_from("<d", blob, pos)
        pos += 8
        ga = take_f64(n * d, (n, d))
        gc = take_f64(n * d, (n, d))
        loss_entries.append(
            FixtureLossEntry(kind, tau, lam, anchors, candidates, weights, value, ga, gc)
        )

    (wm_count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    wm_entries = []
    for _ in range(wm_count):
        (family,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        (sigma,) = struct.unpack_from("<d", blob, pos)
        pos += 8
        n, p_cont, p_cat = struct.unpack_from("<III", blob, pos)
        pos += 12
        cont = take_f64(n * p_cont, (n, p_cont))
        cat = take_i64(n * p_cat, (n, p_cat))
        expected = take_f64(n * n, (n, n))
        wm_entries.append(FixtureWmEntry(family, sigma, cont, cat, expected))
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after the last entry")
    return loss_entries, wm_entries


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m condcl.parity OUT.cclf", file=sys.stderr)
        return 2
    loss_entries, wm_entries = generate_fixture()
    write_fixture(argv[0], loss_entries, wm_entries)
    print(f"wrote {len(loss_entries)} loss entries and {len(wm_entries)} weight-matrix entries to {argv[0]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
