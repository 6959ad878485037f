"""Small MLP encoder with manual backpropagation and the contrastive trainer.

The encoder is a plain fully-connected net (ReLU on hidden layers, no
activation on the output) followed by a sphere-normalization layer, so every
embedding row lands on the unit sphere. ResNet-style backbones are out of
scope at desk scale: the losses are backbone-agnostic and everything under
test here is architecture-independent. There is no projection head and no
batch norm.

Gradients are exact chain-rule closed forms, including the normalization
Jacobian (I - uu^T)/||v||. The trainer is fully deterministic given its
seed: identical configs produce byte-identical checkpoints.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from . import losses as L
from .errors import CondclError, FormatError, ShapeMismatchError, StaleCacheError
from .kernels import KernelConfig, MetaBatch, weight_matrix
from .losses import Batch, LossConfig, identity_weight_matrix, symmetrized
from .numerics import Rng, as_matrix, row_normalize

__all__ = [
    "Adam",
    "AugmentConfig",
    "Checkpoint",
    "Mlp",
    "SgdMomentum",
    "TrainConfig",
    "augment",
    "augment_batch",
    "backward",
    "forward",
    "load_checkpoint",
    "save_checkpoint",
    "sphere_backward",
    "sphere_forward",
    "train",
]

LOSS_KINDS = ("infonce", "supcon", "yaware", "align+global_unif", "align+cond_unif")


# ---------------------------------------------------------------------------
# sphere-normalization output layer


def sphere_forward(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project rows onto the unit sphere; returns (unit rows, row norms)."""
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    if np.any(norms < 1e-30):
        raise ShapeMismatchError("a pre-normalization row collapsed to zero")
    return z / norms[:, None], norms


def sphere_backward(unit: np.ndarray, norms: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Exact Jacobian of v -> v/||v||: grad_in = (g - u (u.g)) / ||v|| per row."""
    radial = np.einsum("ij,ij->i", unit, grad_out)
    return (grad_out - unit * radial[:, None]) / norms[:, None]


# ---------------------------------------------------------------------------
# MLP


@dataclass
class Mlp:
    """Fully-connected encoder; ``weights[k]`` is (n_in, n_out), biases are (n_out,).

    ``version`` increments on every parameter update so a backward pass can
    detect a cache taken before the parameters changed.
    """

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    version: int = 0

    @classmethod
    def init(cls, layer_dims, rng: Rng) -> "Mlp":
        dims = tuple(int(d) for d in layer_dims)
        if len(dims) < 1 or any(d < 1 for d in dims):
            raise ShapeMismatchError(f"bad layer dims {dims}")
        g = rng.generator
        weights, biases = [], []
        for n_in, n_out in zip(dims[:-1], dims[1:]):
            weights.append(g.standard_normal((n_in, n_out)) * np.sqrt(2.0 / n_in))
            # small positive bias so a fully deactivated row still leaves the
            # origin and can be projected onto the sphere
            biases.append(np.full(n_out, 0.01))
        return cls(dims, weights, biases)

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


@dataclass
class ForwardCache:
    version: int
    layer_inputs: list[np.ndarray]
    pre_acts: list[np.ndarray]
    unit: np.ndarray
    norms: np.ndarray


def forward(m: Mlp, x) -> tuple[np.ndarray, ForwardCache]:
    """Embed a batch; returns unit-norm features plus the cache for backward."""
    h = as_matrix(x, "input")
    if h.shape[1] != m.in_dim:
        raise ShapeMismatchError(f"input has {h.shape[1]} columns, encoder expects {m.in_dim}")
    layer_inputs, pre_acts = [], []
    n_layers = len(m.weights)
    for k, (w, b) in enumerate(zip(m.weights, m.biases)):
        layer_inputs.append(h)
        z = h @ w + b
        pre_acts.append(z)
        h = np.maximum(z, 0.0) if k < n_layers - 1 else z
    unit, norms = sphere_forward(h)
    return unit, ForwardCache(m.version, layer_inputs, pre_acts, unit, norms)


def backward(m: Mlp, cache: ForwardCache, grad_out) -> tuple[list[np.ndarray], np.ndarray]:
    """Exact gradients of a scalar loss given d(loss)/d(features).

    Returns (parameter gradients aligned with ``m.parameters()``, input gradient).
    """
    if cache.version != m.version:
        raise StaleCacheError("parameters changed since the forward pass that built this cache")
    g = as_matrix(grad_out, "grad_out")
    if g.shape != cache.unit.shape:
        raise ShapeMismatchError(f"grad_out shape {g.shape} != features shape {cache.unit.shape}")
    grad = sphere_backward(cache.unit, cache.norms, g)
    n_layers = len(m.weights)
    param_grads: list[np.ndarray] = [np.empty(0)] * (2 * n_layers)
    for k in range(n_layers - 1, -1, -1):
        if k < n_layers - 1:
            grad = grad * (cache.pre_acts[k] > 0.0)
        param_grads[2 * k] = cache.layer_inputs[k].T @ grad
        param_grads[2 * k + 1] = grad.sum(axis=0)
        grad = grad @ m.weights[k].T
    return param_grads, grad


# ---------------------------------------------------------------------------
# optimizers


class SgdMomentum:
    def __init__(self, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self._velocity is None:
            self._velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self._velocity):
            g_eff = g + self.weight_decay * p
            v *= self.momentum
            v += g_eff
            p -= self.lr * v


class Adam:
    """Adam with bias correction; weight decay enters the gradient (L2 style)."""

    def __init__(
        self,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self._t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self._t
        bc2 = 1.0 - b2**self._t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            g_eff = g + self.weight_decay * p
            m *= b1
            m += (1.0 - b1) * g_eff
            v *= b2
            v += (1.0 - b2) * g_eff * g_eff
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# stochastic augmentation


@dataclass(frozen=True)
class AugmentConfig:
    """View-generation strengths, all in [0, 1].

    ``noise`` is a Gaussian std; ``mask`` the per-coordinate zeroing
    probability; ``crop`` the largest fraction of the image side removed by
    crop-and-resize (needs ``image_side``); ``flip`` mirrors images left to
    right with probability 1/2. ``clip`` bounds the output range.
    """

    noise: float = 0.0
    mask: float = 0.0
    crop: float = 0.0
    flip: bool = False
    image_side: int | None = None
    clip: tuple[float, float] | None = None

    def __post_init__(self):
        for name in ("noise", "mask", "crop"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ShapeMismatchError(f"augment strength {name} must lie in [0, 1], got {v}")
        if self.crop > 0.0 and self.image_side is None:
            raise ShapeMismatchError("crop needs image_side")


def _bilinear_resize(img: np.ndarray, side: int) -> np.ndarray:
    src = img.shape[0]
    if src == side:
        return img
    # align-corners mapping; exact for constant images
    pos = np.linspace(0.0, src - 1.0, side)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    rows = img[lo][:, :] * (1.0 - frac)[:, None] + img[hi][:, :] * frac[:, None]
    return rows[:, lo] * (1.0 - frac)[None, :] + rows[:, hi] * frac[None, :]


def augment(x, rng: Rng, cfg: AugmentConfig) -> np.ndarray:
    """One stochastic view of a single input vector."""
    return augment_batch(np.asarray(x, dtype=np.float64)[None, :], rng, cfg)[0]


def augment_batch(x, rng: Rng, cfg: AugmentConfig) -> np.ndarray:
    out = np.array(x, dtype=np.float64)
    g = rng.generator
    if cfg.image_side is not None and (cfg.crop > 0.0 or cfg.flip):
        side = cfg.image_side
        if out.shape[1] != side * side:
            raise ShapeMismatchError(f"expected {side * side} pixels per row, got {out.shape[1]}")
        imgs = out.reshape(-1, side, side)
        for i in range(imgs.shape[0]):
            img = imgs[i]
            if cfg.crop > 0.0:
                lo_side = max(1, int(np.ceil((1.0 - cfg.crop) * side)))
                new = int(g.integers(lo_side, side + 1))
                r = int(g.integers(0, side - new + 1))
                c = int(g.integers(0, side - new + 1))
                img = _bilinear_resize(img[r : r + new, c : c + new], side)
            if cfg.flip and g.random() < 0.5:
                img = img[:, ::-1]
            imgs[i] = img
        out = imgs.reshape(out.shape[0], -1)
    if cfg.noise > 0.0:
        out += cfg.noise * g.standard_normal(out.shape)
    if cfg.mask > 0.0:
        out *= g.random(out.shape) >= cfg.mask
    if cfg.clip is not None:
        np.clip(out, cfg.clip[0], cfg.clip[1], out=out)
    return out


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of one contrastive pre-training run.

    ``cifar_paper`` and ``mri_paper`` presets in the CLI carry the published
    hyper-parameter sets (batch 1024 / dim 128 / Adam 1e-3 / weight decay
    5e-5, and batch 64 / lr 1e-4 decayed by 0.9 every 10 epochs for 50
    epochs); desk runs scale them down. ``tau`` has no published value; 0.1
    is this package's convention.
    """

    batch_size: int
    epochs: int
    learning_rate: float
    loss_kind: str
    weight_decay: float = 0.0
    optimizer: str = "adam"
    momentum: float = 0.9
    lam: float = 1.0
    tau: float = 0.1
    sigma: float | None = None
    kernel_family: str = "categorical"
    seed: int = 0
    lr_decay_factor: float | None = None
    lr_decay_every: int | None = None
    hidden_dims: tuple[int, ...] = (256, 128)
    embed_dim: int = 32
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ShapeMismatchError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise ShapeMismatchError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 2:
            raise ShapeMismatchError("batch_size must be >= 2")
        for name in ("epochs",):
            if getattr(self, name) < 0:
                raise ShapeMismatchError(f"{name} must be >= 0")
        if self.learning_rate < 0 or self.weight_decay < 0 or self.lam < 0 or self.tau <= 0:
            raise ShapeMismatchError("rates must be non-negative and tau positive")
        if (self.lr_decay_factor is None) != (self.lr_decay_every is None):
            raise ShapeMismatchError("lr decay needs both a factor and a period")
        if self.lr_decay_every is not None and self.lr_decay_every < 1:
            raise ShapeMismatchError("lr decay period must be >= 1 epoch")
        if self.loss_kind in ("yaware", "align+global_unif", "align+cond_unif"):
            # fail before the first batch rather than inside the loop
            KernelConfig(family=self.kernel_family, sigma=self.sigma)


@dataclass
class Checkpoint:
    """Everything needed to reproduce an encoder: parameters, config echo,
    epoch counter, RNG snapshot, and the per-step loss history."""

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    config: TrainConfig
    epoch: int
    rng_state: dict
    loss_history: np.ndarray

    def mlp(self) -> Mlp:
        return Mlp(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


@dataclass(frozen=True)
class HistoryRow:
    step: int
    epoch: int
    loss: float
    align_term: float
    unif_term: float
    lr: float


def _loss_terms(kind: str, batch: Batch, cfg: LossConfig) -> tuple[float, np.ndarray, np.ndarray, float, float]:
    """Symmetrized loss value, feature gradients, and its two decomposition terms."""
    align = symmetrized(L.conditional_alignment, batch, cfg)
    if kind == "align+cond_unif":
        unif = symmetrized(L.conditional_uniformity, batch, cfg)
        lam = cfg.lam
    else:
        unif = symmetrized(L.global_uniformity, batch, cfg)
        lam = cfg.lam if kind == "align+global_unif" else 1.0
    value = align.value + lam * unif.value
    ga = align.grad_anchor + lam * unif.grad_anchor
    gc = align.grad_candidate + lam * unif.grad_candidate
    return value, ga, gc, align.value, unif.value


def _batch_weights(kind: str, cfg: TrainConfig, labels: np.ndarray, meta: MetaBatch):
    if kind == "infonce":
        return identity_weight_matrix(labels.shape[0])
    if kind == "supcon":
        return weight_matrix(MetaBatch.from_labels(labels), KernelConfig(family="categorical"))
    return weight_matrix(meta, KernelConfig(family=cfg.kernel_family, sigma=cfg.sigma))


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.learning_rate, weight_decay=cfg.weight_decay)
    return SgdMomentum(cfg.learning_rate, momentum=cfg.momentum, weight_decay=cfg.weight_decay)


def train(cfg: TrainConfig, data, epoch_callback=None) -> tuple[Checkpoint, list[HistoryRow]]:
    """Contrastive pre-training: two augmented views per sample per step.

    ``data`` needs ``inputs`` (n, d_in), ``labels`` (n,), and ``meta`` (a
    :class:`MetaBatch`). ``epoch_callback(epoch, mlp)``, when given, runs
    after every epoch. Incomplete trailing batches are dropped.
    """
    inputs = as_matrix(data.inputs, "inputs")
    labels = np.asarray(data.labels, dtype=np.int64)
    n = inputs.shape[0]
    if n < cfg.batch_size:
        raise ShapeMismatchError(f"dataset of {n} samples is smaller than one batch of {cfg.batch_size}")

    rng = Rng(cfg.seed)
    init_rng, order_rng, aug_rng = rng.split(3)
    mlp = Mlp.init((inputs.shape[1], *cfg.hidden_dims, cfg.embed_dim), init_rng)
    opt = make_optimizer(cfg)
    loss_cfg = LossConfig(tau=cfg.tau, lam=cfg.lam)

    history: list[HistoryRow] = []
    lr = cfg.learning_rate
    step = 0
    for epoch in range(cfg.epochs):
        if (
            cfg.lr_decay_factor is not None
            and epoch > 0
            and epoch % cfg.lr_decay_every == 0
        ):
            lr *= cfg.lr_decay_factor
        opt.lr = lr
        perm = order_rng.generator.permutation(n)
        for start in range(0, n - cfg.batch_size + 1, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            x = inputs[idx]
            v1 = augment_batch(x, aug_rng, cfg.augment)
            v2 = augment_batch(x, aug_rng, cfg.augment)
            f1, cache1 = forward(mlp, v1)
            f2, cache2 = forward(mlp, v2)
            wm = _batch_weights(cfg.loss_kind, cfg, labels[idx], data.meta.take(idx))
            batch = Batch(f1, f2, wm)
            try:
                value, ga, gc, align_term, unif_term = _loss_terms(cfg.loss_kind, batch, loss_cfg)
            except CondclError as exc:
                raise type(exc)(
                    f"step {step} (epoch {epoch}, samples {idx[:8].tolist()}"
                    f"{'...' if len(idx) > 8 else ''}): {exc}"
                ) from exc
            pg1, _ = backward(mlp, cache1, ga)
            pg2, _ = backward(mlp, cache2, gc)
            grads = [a + b for a, b in zip(pg1, pg2)]
            opt.step(mlp.parameters(), grads)
            mlp.version += 1
            history.append(HistoryRow(step, epoch, value, align_term, unif_term, lr))
            step += 1
        if epoch_callback is not None:
            epoch_callback(epoch, mlp)

    ckpt = Checkpoint(
        layer_dims=mlp.layer_dims,
        weights=mlp.weights,
        biases=mlp.biases,
        config=cfg,
        epoch=cfg.epochs,
        rng_state=rng.state(),
        loss_history=np.array([h.loss for h in history], dtype=np.float64),
    )
    return ckpt, history


# ---------------------------------------------------------------------------
# checkpoint persistence
#
# layout: magic "CCL1", version u16 LE, u32 length-prefixed key-sorted UTF-8
# text block (config echo + epoch + rng state), then tensors until EOF, each
# as u16 name length, name, rows u32, cols u32, row-major f64 payload.

_MAGIC = b"CCL1"
_FORMAT_VERSION = 1


def _config_to_items(cfg: TrainConfig) -> dict[str, str]:
    items: dict[str, str] = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "augment":
            for af in fields(v):
                items[f"augment.{af.name}"] = json.dumps(getattr(v, af.name))
        else:
            items[f.name] = json.dumps(v)
    return items


def _config_from_items(items: dict[str, str]) -> TrainConfig:
    aug_kwargs, kwargs = {}, {}
    for key, raw in items.items():
        v = json.loads(raw)
        if key.startswith("augment."):
            name = key.split(".", 1)[1]
            aug_kwargs[name] = tuple(v) if name == "clip" and v is not None else v
        else:
            kwargs[key] = tuple(v) if key == "hidden_dims" else v
    kwargs["augment"] = AugmentConfig(**aug_kwargs)
    return TrainConfig(**kwargs)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    items = _config_to_items(ckpt.config)
    items["epoch"] = json.dumps(ckpt.epoch)
    items["layer_dims"] = json.dumps(list(ckpt.layer_dims))
    items["rng_state"] = json.dumps(ckpt.rng_state, sort_keys=True)
    text = "".join(f"{k}={items[k]}\n" for k in sorted(items)).encode("utf-8")

    tensors: list[tuple[str, np.ndarray]] = []
    for i, (w, b) in enumerate(zip(ckpt.weights, ckpt.biases)):
        tensors.append((f"layer{i}.weight", w))
        tensors.append((f"layer{i}.bias", b.reshape(1, -1)))
    tensors.append(("loss_history", ckpt.loss_history.reshape(-1, 1)))

    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<H", _FORMAT_VERSION))
        fh.write(struct.pack("<I", len(text)))
        fh.write(text)
        for name, arr in tensors:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
            fh.write(np.ascontiguousarray(arr, dtype=np.float64).tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != _FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (text_len,) = struct.unpack_from("<I", blob, 6)
    pos = 10
    text = blob[pos : pos + text_len].decode("utf-8")
    pos += text_len

    items: dict[str, str] = {}
    for line in text.splitlines():
        key, _, value = line.partition("=")
        items[key] = value
    epoch = json.loads(items.pop("epoch"))
    layer_dims = tuple(json.loads(items.pop("layer_dims")))
    rng_state = json.loads(items.pop("rng_state"))
    config = _config_from_items(items)

    tensors: dict[str, np.ndarray] = {}
    while pos < len(blob):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        rows, cols = struct.unpack_from("<II", blob, pos)
        pos += 8
        count = rows * cols
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(rows, cols).copy()
        pos += 8 * count
        tensors[name] = arr

    weights, biases = [], []
    i = 0
    while f"layer{i}.weight" in tensors:
        weights.append(tensors[f"layer{i}.weight"])
        biases.append(tensors[f"layer{i}.bias"][0])
        i += 1
    return Checkpoint(
        layer_dims=layer_dims,
        weights=weights,
        biases=biases,
        config=config,
        epoch=epoch,
        rng_state=rng_state,
        loss_history=tensors["loss_history"][:, 0].copy(),
    )
