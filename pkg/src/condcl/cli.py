"""Command-line entry point.

Subcommands: ``gradcheck`` | ``decompose`` | ``converge`` | ``train`` |
``probe`` | ``compare``. Every command reads one TOML config
(``--config``), writes its outputs atomically into a fresh run directory
(``--out`` or ``runs/<command>-<timestamp>-seed<seed>``), and echoes the
fully resolved config next to them. Exit codes: 0 success, 1 failed
checks or aborted runs, 2 usage or config errors.

Re-running a command with the same config and seed reproduces every CSV
byte for byte; only ``run.log`` carries wall-clock timestamps.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from . import synthlab
from .config import RunConfig, dump_config, load_config
from .dataeval import (
    Dataset,
    downsample_gray,
    extract_features,
    features_csv,
    linear_probe,
    load_cifar10_binary,
    make_synthetic_dataset,
    representation_metrics,
)
from .encoder import AugmentConfig, Mlp, TrainConfig, forward, load_checkpoint, save_checkpoint, train
from .errors import CondclError, ConfigError
from .kernels import KernelConfig
from .losses import LossConfig
from .numerics import Rng
from .synthlab import (
    FrozenEncoder,
    LabelDistribution,
    SyntheticModel,
    convergence_experiment,
    default_model,
)

log = logging.getLogger("condcl")

COMPARE_VARIANTS = ("infonce", "supcon", "yaware", "align+global_unif", "align+cond_unif")
RANDOM_BASELINE = "random-init"


# ---------------------------------------------------------------------------
# output plumbing


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    os.replace(tmp, path)


def write_text(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def make_run_dir(out: str | None, command: str, seed: int) -> Path:
    if out is not None:
        run_dir = Path(out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
        run_dir = Path("runs") / f"{command}-{stamp}-seed{seed}"
    if run_dir.exists():
        raise ConfigError(f"run directory {run_dir} already exists; refusing to overwrite")
    run_dir.mkdir(parents=True)
    return run_dir


def _setup_logging(run_dir: Path) -> None:
    log.setLevel(logging.INFO)
    log.handlers.clear()
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(message)s")
    fileh = logging.FileHandler(run_dir / "run.log", encoding="utf-8")
    fileh.setFormatter(fmt)
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(logging.Formatter("%(message)s"))
    log.addHandler(fileh)
    log.addHandler(console)


# ---------------------------------------------------------------------------
# config -> domain objects


def _loss_config(rc: RunConfig) -> LossConfig:
    return LossConfig(
        tau=float(rc.get("loss", "tau", 0.1)),
        lam=float(rc.get("loss", "lambda", 1.0)),
        epsilon=float(rc.get("loss", "epsilon", 1e-12)),
    )


def _kernel_config(rc: RunConfig) -> KernelConfig:
    family = rc.get("kernel", "family", "rbf")
    sigma = rc.get("kernel", "sigma")
    return KernelConfig(family=family, sigma=None if sigma is None else float(sigma))


def _train_config(rc: RunConfig, **overrides) -> TrainConfig:
    t = rc.section("train")
    kw = dict(
        batch_size=t.get("batch_size", 256),
        epochs=t.get("epochs", 10),
        learning_rate=float(t.get("learning_rate", 1e-3)),
        weight_decay=float(t.get("weight_decay", 0.0)),
        optimizer=t.get("optimizer", "adam"),
        momentum=float(t.get("momentum", 0.9)),
        loss_kind=t.get("loss_kind", "align+cond_unif"),
        lam=float(rc.get("loss", "lambda", 1.0)),
        tau=float(rc.get("loss", "tau", 0.1)),
        sigma=rc.get("kernel", "sigma"),
        kernel_family=rc.get("kernel", "family", "rbf"),
        seed=t.get("seed", 0),
        lr_decay_factor=t.get("lr_decay_factor"),
        lr_decay_every=t.get("lr_decay_every"),
        hidden_dims=tuple(t.get("hidden_dims", (256, 128))),
        embed_dim=t.get("embed_dim", 32),
        augment=AugmentConfig(
            noise=float(t.get("augment_noise", 0.0)),
            mask=float(t.get("augment_mask", 0.0)),
            crop=float(t.get("augment_crop", 0.0)),
            flip=bool(t.get("augment_flip", False)),
            image_side=rc.get("data", "side") if rc.get("data", "kind") == "cifar10" else None,
            clip=(0.0, 1.0) if rc.get("data", "kind") == "cifar10" else None,
        ),
    )
    kw.update(overrides)
    if kw["sigma"] is not None:
        kw["sigma"] = float(kw["sigma"])
    return TrainConfig(**kw)


def synthetic_class_model(classes: int, signal_dim: int, kappa: float) -> SyntheticModel:
    if classes > signal_dim:
        raise ConfigError("synthetic data needs classes <= signal_dim (orthogonal class directions)")
    return SyntheticModel(
        label_dist=LabelDistribution(
            "discrete", values=tuple(float(c) for c in range(classes)), probs=(1.0 / classes,) * classes
        ),
        embed_dim=signal_dim,
        mean_map="class_directions",
        class_directions=np.eye(signal_dim)[:classes],
        kappa=kappa,
        latent_classes=classes,
    )


def load_datasets(rc: RunConfig) -> tuple[Dataset, Dataset]:
    """(train, test) per the [data] section."""
    d = rc.section("data")
    kind = d.get("kind", "synthetic")
    if kind == "synthetic":
        model = synthetic_class_model(
            classes=d.get("classes", 3),
            signal_dim=d.get("signal_dim", 3),
            kappa=float(d.get("kappa", 6.0)),
        )
        n_train = d.get("n_train", 2000)
        n_test = d.get("n_test", 500)
        full = make_synthetic_dataset(
            model,
            n_train + n_test,
            nuisance_dim=d.get("nuisance_dim", 16),
            rng=Rng(d.get("data_seed", 123)),
            meta_jitter=float(d.get("meta_jitter", 0.15)),
        )
        return full.take(np.arange(n_train)), full.take(np.arange(n_train, n_train + n_test))
    if kind == "cifar10":
        root = Path(rc.data_dir())
        train_files = [root / p for p in d.get("train_files", [])]
        test_files = [root / p for p in d.get("test_files", [])]
        if not train_files or not test_files:
            raise ConfigError("[data] train_files and test_files are required for cifar10")
        for p in train_files + test_files:
            if not p.exists():
                raise ConfigError(f"dataset file not found: {p}")
        train_set = load_cifar10_binary(train_files)
        test_set = load_cifar10_binary(test_files)
        side = d.get("side", 8)
        if side != 32:
            train_set = downsample_gray(train_set, side)
            test_set = downsample_gray(test_set, side)
        shuffle = Rng(d.get("data_seed", 123)).generator
        train_idx = shuffle.permutation(len(train_set))[: d.get("n_train", len(train_set))]
        test_idx = shuffle.permutation(len(test_set))[: d.get("n_test", len(test_set))]
        return train_set.take(train_idx), test_set.take(test_idx)
    raise ConfigError(f"unknown [data] kind {kind!r}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gradcheck(rc: RunConfig, run_dir: Path) -> int:
    exp = rc.section("experiment")
    seeds = exp.get("seeds", [0, 1, 2])
    sizes = [tuple(p) for p in exp.get("sizes", [[2, 2], [3, 8], [8, 64], [32, 8]])]
    threshold = float(exp.get("threshold", 1e-6))
    step = float(exp.get("step", 1e-5))
    loss_cfg = _loss_config(rc)

    rows = []
    all_passed = True
    for seed in seeds:
        for n, dim in sizes:
            batch = gc.random_batch(Rng(seed), n, dim)
            for name, op in gc.LOSS_OPS.items():
                rep = gc.check_loss_op(name, op, batch, loss_cfg, step=step, threshold=threshold)
                rows.append(
                    (rep.op_name, seed, n, dim, rep.max_abs_err, rep.max_rel_err,
                     rep.worst_index[0], rep.worst_index[1], rep.passed)
                )
                all_passed &= rep.passed
    write_csv(
        run_dir / "gradcheck.csv",
        ["op_name", "seed", "n", "d", "max_abs_err", "max_rel_err", "worst_row", "worst_col", "passed"],
        rows,
    )
    log.info("gradcheck: %d reports, all passed: %s", len(rows), all_passed)
    return 0 if all_passed else 1


def cmd_decompose(rc: RunConfig, run_dir: Path) -> int:
    from .losses import Batch, conditional_alignment, global_uniformity, yaware_infonce

    exp = rc.section("experiment")
    min_batches = exp.get("batches", 100)
    dims = [tuple(p) for p in exp.get("batch_dims", [[1, 2], [2, 16], [8, 64], [64, 16], [256, 2]])]
    taus = [float(t) for t in exp.get("taus", [0.05, 0.1, 1.0])]
    combos = [(n, d, tau) for n, d in dims for tau in taus]
    n_seeds = max(1, -(-min_batches // len(combos)))

    rows = []
    max_gap = 0.0
    for seed in range(n_seeds):
        for n, dim, tau in combos:
            batch = gc.random_batch(Rng(seed * 7919 + n), n, dim)
            cfg = LossConfig(tau=tau)
            lhs = yaware_infonce(batch, cfg).value
            rhs = conditional_alignment(batch, cfg).value + global_uniformity(batch, cfg).value
            gap = abs(lhs - rhs)
            max_gap = max(max_gap, gap)
            rows.append((seed, n, dim, lhs, rhs, gap))
    write_csv(run_dir / "decompose.csv", ["seed", "N", "d", "lhs", "rhs", "abs_gap"], rows)
    log.info("decompose: %d batches, max gap %.3e", len(rows), max_gap)
    return 0 if max_gap < 1e-12 else 1


def _converge_encoder(rc: RunConfig) -> FrozenEncoder:
    exp = rc.section("experiment")
    name = exp.get("encoder", "identity")
    if name == "identity":
        return FrozenEncoder.identity()
    if name == "mlp":
        model_dim = 3
        return FrozenEncoder.random_mlp((model_dim, 32, 8), seed=exp.get("seed", 0))
    raise ConfigError(f"unknown [experiment] encoder {name!r}")


def cmd_converge(rc: RunConfig, run_dir: Path) -> int:
    exp = rc.section("experiment")
    rows = convergence_experiment(
        default_model(),
        _converge_encoder(rc),
        _kernel_config(rc),
        _loss_config(rc),
        batch_sizes=exp.get("batch_sizes", [64, 256, 1024, 4096]),
        reps=exp.get("reps", 32),
        rng=Rng(exp.get("seed", 0)),
        n_oracle=exp.get("n_oracle", 1_000_000),
    )
    write_csv(
        run_dir / "converge.csv",
        ["N", "rep", "loss_value", "limit_align", "limit_unif", "abs_gap"],
        [(r.n, r.rep, r.loss_value, r.limit_align, r.limit_unif, r.abs_gap) for r in rows],
    )
    for n, mean_gap, stderr in synthlab.summarize_convergence(rows):
        log.info("converge: N=%d mean |gap| = %.6f (stderr %s)", n, mean_gap, _fmt(stderr))
    return 0


def cmd_train(rc: RunConfig, run_dir: Path) -> int:
    train_set, _ = load_datasets(rc)
    cfg = _train_config(rc)
    ckpt, history = train(cfg, train_set)
    save_checkpoint(ckpt, run_dir / "checkpoint.ccl1")
    write_csv(
        run_dir / "history.csv",
        ["step", "epoch", "loss", "align_term", "unif_term", "lr"],
        [(h.step, h.epoch, h.loss, h.align_term, h.unif_term, h.lr) for h in history],
    )
    log.info("train: %d steps, final loss %s", len(history), _fmt(history[-1].loss) if history else "n/a")
    return 0


def cmd_probe(rc: RunConfig, run_dir: Path) -> int:
    exp = rc.section("experiment")
    ckpt_path = exp.get("checkpoint")
    if not ckpt_path:
        raise ConfigError("[experiment] checkpoint is required for probe")
    if not Path(ckpt_path).exists():
        raise ConfigError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    train_set, test_set = load_datasets(rc)
    train_f = extract_features(ckpt, train_set)
    test_f = extract_features(ckpt, test_set)
    result = linear_probe(
        train_f,
        train_set.labels,
        test_f,
        test_set.labels,
        epochs=exp.get("probe_epochs", 500),
        lr=float(exp.get("probe_lr", 0.1)),
    )
    write_csv(
        run_dir / "probe.csv",
        ["top1_accuracy", "n_train", "n_test", "probe_epochs"],
        [(result.top1_accuracy, result.n_train, result.n_test, result.probe_epochs)],
    )
    write_csv(
        run_dir / "per_class.csv",
        ["class", "accuracy"],
        [(c, float(a)) for c, a in enumerate(result.per_class_accuracy)],
    )
    write_text(run_dir / "test_features.csv", features_csv(test_f, test_set))
    log.info("probe: top-1 %.4f", result.top1_accuracy)
    return 0


# one compare cell = (variant, lambda, seed) -> final probe + epoch curve
def _compare_cell(payload: dict) -> dict:
    train_set = Dataset(
        payload["train_inputs"], payload["train_labels"],
        _meta_from(payload["train_meta_cont"], payload["train_meta_cat"]),
    )
    test_set = Dataset(
        payload["test_inputs"], payload["test_labels"],
        _meta_from(payload["test_meta_cont"], payload["test_meta_cat"]),
    )
    cfg = TrainConfig(**payload["train_kwargs"])
    probe_epochs = payload["probe_epochs"]
    probe_lr = payload["probe_lr"]
    eval_every = payload["eval_every"]

    curve: list[tuple[int, float]] = []

    def probe_mlp(mlp: Mlp) -> float:
        tf, _ = forward(mlp, train_set.inputs)
        sf, _ = forward(mlp, test_set.inputs)
        return linear_probe(tf, train_set.labels, sf, test_set.labels, probe_epochs, probe_lr).top1_accuracy

    def on_epoch(epoch: int, mlp: Mlp) -> None:
        if eval_every and ((epoch + 1) % eval_every == 0 or epoch + 1 == cfg.epochs):
            curve.append((epoch + 1, probe_mlp(mlp)))

    ckpt, _ = train(cfg, train_set, epoch_callback=on_epoch)
    top1 = probe_mlp(ckpt.mlp())

    test_f = extract_features(ckpt, test_set)
    metrics = representation_metrics(
        test_f,
        test_set.meta if payload["metric_meta"] == "continuous" else _labels_meta(test_set.labels),
        KernelConfig(family=payload["kernel_family"], sigma=payload["kernel_sigma"]),
        LossConfig(tau=cfg.tau, lam=cfg.lam),
    )
    return {
        "top1": top1,
        "curve": curve,
        "align": metrics.align_score,
        "global_unif": metrics.global_unif_score,
        "cond_unif": metrics.cond_unif_score,
    }


def _meta_from(cont, cat):
    from .kernels import MetaBatch

    return MetaBatch(cont, cat)


def _labels_meta(labels):
    from .kernels import MetaBatch

    return MetaBatch.from_labels(labels)


def _random_init_cell(payload: dict) -> dict:
    payload = dict(payload)
    payload["train_kwargs"] = dict(payload["train_kwargs"], epochs=0)
    payload["eval_every"] = 0
    return _compare_cell(payload)


def cmd_compare(rc: RunConfig, run_dir: Path, threads: int = 1) -> int:
    exp = rc.section("experiment")
    variants = exp.get("variants", list(COMPARE_VARIANTS))
    unknown = [v for v in variants if v not in COMPARE_VARIANTS]
    if unknown:
        raise ConfigError(f"unknown compare variants {unknown}; expected a subset of {COMPARE_VARIANTS}")
    train_seeds = exp.get("train_seeds", [0, 1, 2, 3, 4])
    lambdas = [float(v) for v in exp.get("lambdas", [])]
    eval_every = exp.get("eval_every", 0)
    if eval_every < 0:
        raise ConfigError("eval_every must be >= 0")
    base_lam = float(rc.get("loss", "lambda", 1.0))

    train_set, test_set = load_datasets(rc)
    base = {
        "train_inputs": train_set.inputs,
        "train_labels": train_set.labels,
        "train_meta_cont": train_set.meta.continuous,
        "train_meta_cat": train_set.meta.categorical,
        "test_inputs": test_set.inputs,
        "test_labels": test_set.labels,
        "test_meta_cont": test_set.meta.continuous,
        "test_meta_cat": test_set.meta.categorical,
        "probe_epochs": exp.get("probe_epochs", 500),
        "probe_lr": float(exp.get("probe_lr", 0.1)),
        "eval_every": eval_every,
        "kernel_family": rc.get("kernel", "family", "rbf"),
        "kernel_sigma": rc.get("kernel", "sigma"),
        "metric_meta": "continuous" if rc.get("data", "kind", "synthetic") == "synthetic" else "labels",
    }

    cells: list[tuple[str, float, int, dict]] = []
    for seed in train_seeds:
        payload = dict(base)
        payload["train_kwargs"] = _train_config_kwargs(rc, loss_kind="infonce", seed=seed)
        cells.append((RANDOM_BASELINE, 0.0, seed, payload))
    for variant in variants:
        for seed in train_seeds:
            payload = dict(base)
            payload["train_kwargs"] = _train_config_kwargs(rc, loss_kind=variant, seed=seed, lam=base_lam)
            cells.append((variant, base_lam, seed, payload))
    for lam in lambdas:
        if lam == base_lam and "align+cond_unif" in variants:
            continue
        for seed in train_seeds:
            payload = dict(base)
            payload["train_kwargs"] = _train_config_kwargs(
                rc, loss_kind="align+cond_unif", seed=seed, lam=lam
            )
            cells.append(("align+cond_unif", lam, seed, payload))

    tasks = [
        (_random_init_cell if variant == RANDOM_BASELINE else _compare_cell, payload)
        for variant, _, _, payload in cells
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(fn, payload) for fn, payload in tasks]
            results = [f.result() for f in futures]
    else:
        results = []
        for i, (fn, payload) in enumerate(tasks):
            variant, lam, seed, _ = cells[i]
            log.info("compare: cell %d/%d (%s, lambda=%s, seed=%d)", i + 1, len(cells), variant, lam, seed)
            results.append(fn(payload))

    rows = [
        (variant, lam, seed, r["top1"], r["align"], r["global_unif"], r["cond_unif"])
        for (variant, lam, seed, _), r in zip(cells, results)
    ]
    write_csv(
        run_dir / "compare.csv",
        ["loss_kind", "lambda", "seed", "top1", "align_score", "global_unif_score", "cond_unif_score"],
        rows,
    )

    # accuracy-vs-epoch plot data: mean and stderr across seeds per variant
    epoch_rows = []
    for variant in variants:
        curves = [
            dict(r["curve"])
            for (v, lam, _, _), r in zip(cells, results)
            if v == variant and lam == base_lam
        ]
        epochs = sorted({e for c in curves for e in c})
        for e in epochs:
            vals = np.array([c[e] for c in curves if e in c])
            stderr = float(np.std(vals, ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else None
            epoch_rows.append((variant, e, float(np.mean(vals)), stderr))
    write_csv(run_dir / "acc_vs_epoch.csv", ["series", "x", "y", "stderr"], epoch_rows)

    # accuracy-vs-lambda plot data for the conditional variant
    lam_rows = []
    cond_lams = sorted(
        {lam for (v, lam, _, _) in cells if v == "align+cond_unif"}
    )
    for lam in cond_lams:
        vals = np.array(
            [r["top1"] for (v, la, _, _), r in zip(cells, results) if v == "align+cond_unif" and la == lam]
        )
        stderr = float(np.std(vals, ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else None
        lam_rows.append(("align+cond_unif", lam, float(np.mean(vals)), stderr))
    write_csv(run_dir / "acc_vs_lambda.csv", ["series", "x", "y", "stderr"], lam_rows)

    for variant in [RANDOM_BASELINE, *variants]:
        tops = [r["top1"] for (v, lam, _, _), r in zip(cells, results) if v == variant and (variant == RANDOM_BASELINE or lam == base_lam)]
        if tops:
            log.info("compare: %-18s median top-1 %.4f", variant, float(np.median(tops)))
    return 0


def _train_config_kwargs(rc: RunConfig, **overrides) -> dict:
    cfg = _train_config(rc, **overrides)
    kw = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
    return kw


# ---------------------------------------------------------------------------
# argument parsing and dispatch


def _seed_arg(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condcl",
        description="Meta-data-aware contrastive losses: checks, experiments, and training.",
    )
    parser.add_argument("command", choices=["gradcheck", "decompose", "converge", "train", "probe", "compare"])
    parser.add_argument("--config", required=True, help="path to the TOML run configuration")
    parser.add_argument("--out", default=None, help="run directory (must not exist yet)")
    parser.add_argument("--seed", type=_seed_arg, default=None, help="override [train] and [experiment] seeds")
    parser.add_argument("--threads", type=int, default=1, help="parallel cells for compare")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        if args.seed is not None:
            overrides = {"train": {"seed": args.seed}, "experiment": {"seed": args.seed}}
        rc = load_config(args.config, overrides)
        seed = rc.get("experiment", "seed", rc.get("train", "seed", 0))
        run_dir = make_run_dir(args.out, args.command, seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    _setup_logging(run_dir)
    write_text(run_dir / "config.toml", dump_config(rc))
    try:
        if args.command == "gradcheck":
            code = cmd_gradcheck(rc, run_dir)
        elif args.command == "decompose":
            code = cmd_decompose(rc, run_dir)
        elif args.command == "converge":
            code = cmd_converge(rc, run_dir)
        elif args.command == "train":
            code = cmd_train(rc, run_dir)
        elif args.command == "probe":
            code = cmd_probe(rc, run_dir)
        else:
            code = cmd_compare(rc, run_dir, threads=args.threads)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except CondclError as exc:
        log.error("run aborted: %s", exc)
        return 1
    log.info("run directory: %s", run_dir)
    return code


if __name__ == "__main__":
    sys.exit(main())
