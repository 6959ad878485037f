"""Dataset ingestion, feature extraction, and linear-probe evaluation.

Two data sources are supported: the CIFAR-10 binary batch format (3073-byte
records: one label byte then 32x32x3 planar pixels) and a synthetic
latent-class generator whose inputs embed a spherical class signal next to
pure-noise nuisance coordinates. For CIFAR runs the class labels double as
the meta-data, with the categorical kernel.

Representation quality is scored by a linear probe: multinomial logistic
regression on frozen features, trained full-batch from a zero
initialization, so the probe is deterministic by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses as L
from .encoder import Checkpoint, forward
from .errors import AllSimilarError, DegenerateLabelsError, FormatError, ShapeMismatchError
from .kernels import KernelConfig, MetaBatch, weight_matrix
from .losses import Batch, LossConfig
from .numerics import Rng, as_matrix
from .synthlab import SyntheticModel

__all__ = [
    "Dataset",
    "ProbeResult",
    "RepresentationMetrics",
    "cifar10_bytes",
    "downsample_gray",
    "extract_features",
    "features_csv",
    "knn_accuracy",
    "linear_probe",
    "load_cifar10_binary",
    "make_synthetic_dataset",
    "representation_metrics",
]

_CIFAR_RECORD = 3073
_CIFAR_PIXELS = 3072


@dataclass(frozen=True)
class Dataset:
    """Inputs in [0, 1], downstream integer labels, and proxy meta-data."""

    inputs: np.ndarray
    labels: np.ndarray
    meta: MetaBatch

    def __post_init__(self):
        inputs = as_matrix(self.inputs, "inputs")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.shape[0] != inputs.shape[0]:
            raise ShapeMismatchError("labels must be one integer per input row")
        if len(self.meta) != inputs.shape[0]:
            raise ShapeMismatchError("meta batch length must match inputs")
        if inputs.size and (inputs.min() < -1e-9 or inputs.max() > 1.0 + 1e-9):
            raise ShapeMismatchError("inputs must be scaled to [0, 1]")
        if labels.size and labels.min() < 0:
            raise ShapeMismatchError("labels must be >= 0")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.meta.take(idx))


def load_cifar10_binary(paths) -> Dataset:
    """Parse CIFAR-10 binary batches; pixels scaled to [0, 1], labels as meta."""
    if isinstance(paths, (str, bytes)) or not hasattr(paths, "__iter__"):
        paths = [paths]
    records = []
    for path in paths:
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) % _CIFAR_RECORD != 0:
            raise FormatError(f"{path}: size {len(blob)} is not a multiple of {_CIFAR_RECORD}")
        records.append(np.frombuffer(blob, dtype=np.uint8).reshape(-1, _CIFAR_RECORD))
    raw = np.concatenate(records, axis=0) if records else np.zeros((0, _CIFAR_RECORD), dtype=np.uint8)
    labels = raw[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        raise FormatError(f"label byte {labels.max()} > 9")
    pixels = raw[:, 1:].astype(np.float64) / 255.0
    return Dataset(pixels, labels, MetaBatch.from_labels(labels))


def cifar10_bytes(d: Dataset) -> bytes:
    """Inverse of :func:`load_cifar10_binary`; loading then re-serializing is lossless."""
    raw = np.empty((len(d), _CIFAR_RECORD), dtype=np.uint8)
    raw[:, 0] = d.labels
    raw[:, 1:] = np.rint(d.inputs * 255.0).astype(np.uint8)
    return raw.tobytes()


def downsample_gray(d: Dataset, side: int) -> Dataset:
    """Luminance conversion then block-mean pooling of 32x32x3 planar inputs."""
    if d.inputs.shape[1] != _CIFAR_PIXELS:
        raise ShapeMismatchError(f"expected {_CIFAR_PIXELS} pixel columns, got {d.inputs.shape[1]}")
    if side < 1 or 32 % side != 0:
        raise ShapeMismatchError(f"side must divide 32, got {side}")
    rgb = d.inputs.reshape(-1, 3, 32, 32)
    lum = 0.299 * rgb[:, 0] + 0.587 * rgb[:, 1] + 0.114 * rgb[:, 2]
    block = 32 // side
    pooled = lum.reshape(-1, side, block, side, block).mean(axis=(2, 4))
    # luminance coefficients sum to 1.0 only up to rounding; pin the range
    pooled = np.clip(pooled, 0.0, 1.0)
    return Dataset(pooled.reshape(len(d), side * side), d.labels, d.meta)


def make_synthetic_dataset(
    m: SyntheticModel, n: int, nuisance_dim: int, rng: Rng, meta_jitter: float = 0.15
) -> Dataset:
    """Latent-class inputs: a spherical class signal mapped into [0, 1] plus
    uniform-noise nuisance coordinates.

    Labels are the latent classes; the meta-data is a continuous proxy, the
    class value plus Gaussian jitter, so the rbf kernel sees graded
    similarity rather than the classes themselves.
    """
    if n < 1:
        raise ShapeMismatchError("n must be >= 1")
    if m.latent_classes is None:
        raise ShapeMismatchError("synthetic datasets need a model with latent classes")
    g = rng.generator
    y = m.label_dist.sample(rng, n)
    classes = np.rint(y).astype(np.int64)
    signal = m.sample_x(y, rng)
    inputs = np.empty((n, signal.shape[1] + nuisance_dim))
    inputs[:, : signal.shape[1]] = (signal + 1.0) / 2.0
    if nuisance_dim:
        inputs[:, signal.shape[1] :] = g.random((n, nuisance_dim))
    meta_values = classes.astype(np.float64) + meta_jitter * g.standard_normal(n)
    return Dataset(inputs, classes, MetaBatch.from_continuous(meta_values))


def extract_features(ckpt: Checkpoint, d: Dataset) -> np.ndarray:
    """Frozen-encoder features of the full dataset, no augmentation."""
    feats, _ = forward(ckpt.mlp(), d.inputs)
    return feats


def features_csv(features: np.ndarray, d: Dataset) -> str:
    """Features as CSV text: one row per sample, feature columns, then the
    label and the meta-data columns."""
    features = as_matrix(features, "features")
    if features.shape[0] != len(d):
        raise ShapeMismatchError("feature count must match the dataset")
    dim = features.shape[1]
    header = (
        [f"f{k}" for k in range(dim)]
        + ["label"]
        + [f"meta_c{k}" for k in range(d.meta.continuous.shape[1])]
        + [f"meta_k{k}" for k in range(d.meta.categorical.shape[1])]
    )
    lines = [",".join(header)]
    for i in range(len(d)):
        cells = [repr(float(v)) for v in features[i]]
        cells.append(str(int(d.labels[i])))
        cells.extend(repr(float(v)) for v in d.meta.continuous[i])
        cells.extend(str(int(v)) for v in d.meta.categorical[i])
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def knn_accuracy(train_x, train_labels, test_x, test_labels, k: int = 5) -> float:
    """Plain Euclidean k-nearest-neighbour vote; the learnability oracle for
    synthetic datasets."""
    train_x = as_matrix(train_x, "train_x")
    test_x = as_matrix(test_x, "test_x")
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    d2 = (
        np.einsum("ij,ij->i", test_x, test_x)[:, None]
        - 2.0 * test_x @ train_x.T
        + np.einsum("ij,ij->i", train_x, train_x)[None, :]
    )
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    votes = train_labels[nearest]
    n_classes = int(train_labels.max()) + 1
    counts = np.stack([(votes == c).sum(axis=1) for c in range(n_classes)], axis=1)
    return float(np.mean(np.argmax(counts, axis=1) == test_labels))


@dataclass(frozen=True)
class ProbeResult:
    top1_accuracy: float
    per_class_accuracy: np.ndarray
    n_train: int
    n_test: int
    probe_epochs: int


def _fit_softmax(
    features: np.ndarray, labels: np.ndarray, n_classes: int, epochs: int, lr: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient descent on the multinomial cross entropy from zero weights.

    Returns (weights, bias, per-epoch loss trajectory).
    """
    n, d = features.shape
    w = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    losses = np.empty(epochs)
    for t in range(epochs):
        logits = features @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        exp = np.exp(logits)
        total = exp.sum(axis=1, keepdims=True)
        p = exp / total
        losses[t] = float(-np.mean(logits[np.arange(n), labels] - np.log(total[:, 0])))
        g = (p - onehot) / n
        w -= lr * (features.T @ g)
        b -= lr * g.sum(axis=0)
    return w, b, losses


def linear_probe(
    train_f, train_labels, test_f, test_labels, epochs: int = 500, lr: float = 0.1
) -> ProbeResult:
    """Multinomial logistic regression on frozen features.

    Full-batch gradient descent from zero weights, no regularization; with
    unit-norm features and lr <= 0.1 the training loss is non-increasing.
    """
    train_f = as_matrix(train_f, "train features")
    test_f = as_matrix(test_f, "test features")
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    n_classes = int(max(train_labels.max(), test_labels.max())) + 1
    present = np.unique(train_labels)
    if present.size != n_classes:
        missing = sorted(set(range(n_classes)) - set(present.tolist()))
        raise DegenerateLabelsError(f"classes {missing} absent from training labels")

    n = train_f.shape[0]
    w, b, _ = _fit_softmax(train_f, train_labels, n_classes, epochs, lr)
    pred = np.argmax(test_f @ w + b, axis=1)
    per_class = np.array(
        [
            np.mean(pred[test_labels == c] == c) if np.any(test_labels == c) else np.nan
            for c in range(n_classes)
        ]
    )
    return ProbeResult(
        top1_accuracy=float(np.mean(pred == test_labels)),
        per_class_accuracy=per_class,
        n_train=n,
        n_test=test_f.shape[0],
        probe_epochs=epochs,
    )


@dataclass(frozen=True)
class RepresentationMetrics:
    align_score: float
    global_unif_score: float
    cond_unif_score: float | None


def representation_metrics(
    f, meta: MetaBatch, cfg: KernelConfig, loss_cfg: LossConfig
) -> RepresentationMetrics:
    """The three loss terms evaluated on fixed features as diagnostics.

    The conditional uniformity score is None when the batch's meta-data are
    kernel-identical for some anchor.
    """
    feats = as_matrix(f, "features")
    batch = Batch(feats, feats, weight_matrix(meta, cfg))
    align = L.conditional_alignment(batch, loss_cfg).value
    global_unif = L.global_uniformity(batch, loss_cfg).value
    try:
        cond_unif = L.conditional_uniformity(batch, loss_cfg).value
    except AllSimilarError:
        cond_unif = None
    return RepresentationMetrics(align, global_unif, cond_unif)
