"""Acceptance suite.

One test per acceptance criterion, each printing a single
``[ACCEPTANCE] <name>: PASS/FAIL`` line and enforcing its stated tolerance
and runtime budget. Run with ``pytest tests/test_acceptance.py -v -s``.

The directional CIFAR-10 comparison needs the real binary batches under
``$CONDCL_DATA_DIR`` (they are not bundled and this environment cannot
download them); without the data that one criterion fails with a
diagnostic rather than being silently skipped or weakened.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chisquare

from condcl.cli import main as cli_main
from condcl.cli import synthetic_class_model
from condcl.dataeval import extract_features, knn_accuracy, linear_probe, make_synthetic_dataset
from condcl.encoder import AugmentConfig, TrainConfig, train
from condcl.gradcheck import check_all, check_loss_op, random_batch
from condcl.kernels import KernelConfig, MetaBatch, weight_matrix
from condcl.losses import (
    Batch,
    LossConfig,
    conditional_alignment,
    conditional_uniformity,
    global_uniformity,
    identity_weight_matrix,
    infonce_reference,
    supcon_reference,
    yaware_infonce,
)
from condcl.numerics import Rng, row_normalize
from condcl.synthlab import (
    LabelDistribution,
    SyntheticModel,
    kernel_values,
    sample_negative_pairs,
    sample_positive_pairs,
)

REPO = Path(__file__).resolve().parent.parent
CONFIGS = REPO / "configs"


def _report(name: str, ok: bool, detail: str = "") -> None:
    print(f"[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"{name}: {detail}"


def _budget(name: str, elapsed: float, budget: float) -> None:
    _report(f"{name} runtime", elapsed < budget, f"{elapsed:.1f}s < {budget:.0f}s")


class TestDecompositionIdentity:
    def test_identity_over_random_batches(self):
        t0 = time.monotonic()
        dims = [(1, 2), (2, 16), (8, 64), (64, 16), (256, 2), (64, 64), (256, 16)]
        taus = [0.05, 0.1, 1.0]
        worst_value = 0.0
        worst_grad = 0.0
        batches = 0
        for seed in range(5):
            for n, d in dims:
                b = random_batch(Rng(seed * 7919 + n), n, d)
                for tau in taus:
                    cfg = LossConfig(tau=tau)
                    whole = yaware_infonce(b, cfg)
                    align = conditional_alignment(b, cfg)
                    unif = global_uniformity(b, cfg)
                    worst_value = max(worst_value, abs(whole.value - (align.value + unif.value)))
                    for side in ("grad_anchor", "grad_candidate"):
                        gap = np.max(
                            np.abs(
                                getattr(whole, side)
                                - (getattr(align, side) + getattr(unif, side))
                            )
                        )
                        worst_grad = max(worst_grad, float(gap))
                    batches += 1
        elapsed = time.monotonic() - t0
        _report(
            "decomposition identity",
            batches >= 100 and worst_value < 1e-12 and worst_grad < 1e-10,
            f"{batches} batches, max value gap {worst_value:.2e}, max grad gap {worst_grad:.2e}",
        )
        _budget("decomposition identity", elapsed, 10.0)


class TestGradientOracle:
    def test_every_loss_and_encoder_pipeline(self):
        t0 = time.monotonic()
        reports = check_all(seeds=[0, 1, 2], sizes=[(2, 2), (3, 8), (8, 64), (32, 8)])
        worst = max(r.max_rel_err for r in reports)
        ok = all(r.passed for r in reports)

        cfg = LossConfig(tau=0.1)
        for seed in (3, 4):
            b = random_batch(Rng(seed), 6, 8)
            rep = check_loss_op("infonce_reference", lambda bb, cc: infonce_reference(bb, cc), b, cfg)
            ok &= rep.passed
            worst = max(worst, rep.max_rel_err)

            labels = Rng(seed).generator.integers(0, 3, size=6)
            stacked = np.vstack([b.anchors, b.candidates])
            analytic = supcon_reference(stacked, labels, cfg).grad_anchor
            from condcl.gradcheck import finite_diff

            numeric = finite_diff(lambda f: supcon_reference(f, labels, cfg).value, stacked)
            rel = np.abs(analytic - numeric) / np.maximum(
                1.0, np.maximum(np.abs(analytic), np.abs(numeric))
            )
            ok &= rel.max() < 1e-6
            worst = max(worst, float(rel.max()))

        end_to_end = self._encoder_pipeline_rel_err()
        ok &= end_to_end < 1e-5
        elapsed = time.monotonic() - t0
        _report(
            "gradient oracle",
            ok,
            f"losses max rel {worst:.2e} < 1e-6, encoder pipeline max rel {end_to_end:.2e} < 1e-5",
        )
        _budget("gradient oracle", elapsed, 60.0)

    @staticmethod
    def _encoder_pipeline_rel_err() -> float:
        from condcl.encoder import Mlp, backward, forward
        from condcl.gradcheck import finite_diff
        from condcl.losses import combined_objective

        rng = Rng(11)
        mlp = Mlp.init((4, 8, 3), rng)
        g = rng.generator
        x1 = g.random((5, 4))
        x2 = g.random((5, 4))
        wm = weight_matrix(
            MetaBatch.from_continuous(g.uniform(0, 3, size=5)), KernelConfig("rbf", sigma=1.0)
        )
        cfg = LossConfig(tau=0.5, lam=1.0)

        f1, c1 = forward(mlp, x1)
        f2, c2 = forward(mlp, x2)
        res = combined_objective(Batch(f1, f2, wm), cfg)
        pg1, gi1 = backward(mlp, c1, res.grad_anchor)
        pg2, _ = backward(mlp, c2, res.grad_candidate)
        param_grads = [a + b for a, b in zip(pg1, pg2)]

        worst = 0.0

        def rel(a, n):
            return float(
                (np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))).max()
            )

        for k, w in enumerate(mlp.weights):
            def eval_w(wmat, k=k):
                saved = mlp.weights[k]
                mlp.weights[k] = wmat
                try:
                    a1, _ = forward(mlp, x1)
                    a2, _ = forward(mlp, x2)
                    return combined_objective(Batch(a1, a2, wm), cfg).value
                finally:
                    mlp.weights[k] = saved

            worst = max(worst, rel(param_grads[2 * k], finite_diff(eval_w, w)))

        def eval_x(xmat):
            a1, _ = forward(mlp, xmat)
            a2, _ = forward(mlp, x2)
            return combined_objective(Batch(a1, a2, wm), cfg).value

        worst = max(worst, rel(gi1, finite_diff(eval_x, x1)))
        return worst


class TestDegenerateEquivalences:
    def test_baseline_equivalences(self):
        t0 = time.monotonic()
        rng = Rng(99)
        g = rng.generator
        ok = True
        details = []

        # delta-kernel weighted InfoNCE vs the independent SupCon implementation
        labels = g.integers(0, 3, size=16)
        anchors = row_normalize(g.standard_normal((16, 8)))
        candidates = row_normalize(g.standard_normal((16, 8)))
        wm = weight_matrix(MetaBatch.from_labels(labels), KernelConfig("categorical"))
        cfg = LossConfig(tau=0.2)
        a = yaware_infonce(Batch(anchors, candidates, wm), cfg).value
        b = supcon_reference(np.vstack([anchors, candidates]), labels, cfg).value
        rel_supcon = abs(a - b) / max(abs(a), abs(b))
        ok &= rel_supcon < 1e-9
        details.append(f"supcon rel {rel_supcon:.2e} < 1e-9")

        # identity-positive weights vs the InfoNCE baseline
        batch = Batch(anchors, candidates, identity_weight_matrix(16))
        a = yaware_infonce(batch, cfg).value
        b = infonce_reference(batch, cfg).value
        rel_nce = abs(a - b) / max(abs(a), abs(b))
        ok &= rel_nce < 1e-12
        details.append(f"infonce rel {rel_nce:.2e} < 1e-12")

        # vanishing-bandwidth conditional uniformity vs the off-diagonal closed form
        b16 = random_batch(Rng(7), 16, 6, sigma=1e-9)
        got = conditional_uniformity(b16, cfg).value
        s = (b16.anchors @ b16.candidates.T) / cfg.tau
        off = ~np.eye(16, dtype=bool)
        hi = s[off].max()
        want = hi + np.log(np.mean(np.exp(s[off] - hi)))
        rel_cu = abs(got - want) / max(abs(got), abs(want))
        ok &= rel_cu < 1e-9
        details.append(f"cond-unif sigma->0 rel {rel_cu:.2e} < 1e-9")

        elapsed = time.monotonic() - t0
        _report("degenerate equivalences", ok, "; ".join(details))
        _budget("degenerate equivalences", elapsed, 10.0)


class TestLargeBatchConvergence:
    def test_gap_decreases_with_expected_rate(self, tmp_path):
        t0 = time.monotonic()
        out = tmp_path / "converge"
        code = cli_main(
            ["converge", "--config", str(CONFIGS / "converge.toml"), "--out", str(out)]
        )
        assert code == 0
        rows = (out / "converge.csv").read_text().splitlines()[1:]
        data: dict[int, list[float]] = {}
        stderr_logged = False
        for line in rows:
            n, _, _, _, _, gap = line.split(",")
            data.setdefault(int(n), []).append(float(gap))
            stderr_logged = True
        ns = sorted(data)
        means = np.array([np.mean(data[n]) for n in ns])
        decreasing = bool(np.all(np.diff(means) < 0))
        slope = float(np.polyfit(np.log(ns), np.log(means), 1)[0])
        elapsed = time.monotonic() - t0
        _report(
            "large-batch convergence",
            stderr_logged and ns == [64, 256, 1024, 4096] and decreasing and -0.7 <= slope <= -0.3,
            f"mean gaps {[f'{m:.5f}' for m in means]}, log-log slope {slope:.3f} in [-0.7, -0.3]",
        )
        _budget("large-batch convergence", elapsed, 600.0)


class TestSamplerExactness:
    def test_chi_squared_and_weight_normalization(self):
        t0 = time.monotonic()
        values = tuple(float(v) for v in range(10))
        m = SyntheticModel(
            label_dist=LabelDistribution("discrete", values=values, probs=(0.1,) * 10), embed_dim=3
        )
        cfg = KernelConfig("rbf", sigma=5.0)
        vals = np.array(values)
        w = kernel_values(cfg, vals[:, None], vals[None, :])
        p = np.full(10, 0.1)
        z = (w * p[None, :]).sum(axis=1)
        n_draws = 100_000

        p_pos = p[:, None] * w * p[None, :] / z[:, None]
        _, y, _, yp = sample_positive_pairs(m, cfg, Rng(1001), n_draws)
        obs = np.zeros((10, 10))
        np.add.at(obs, (y.astype(int), yp.astype(int)), 1)
        pvalue_pos = float(chisquare(obs.ravel(), f_exp=(p_pos * n_draws).ravel()).pvalue)

        p_neg = p[:, None] * (1.0 - w) * p[None, :] / (1.0 - z)[:, None]
        _, y2, _, ym = sample_negative_pairs(m, cfg, Rng(1002), n_draws)
        obs2 = np.zeros((10, 10))
        np.add.at(obs2, (y2.astype(int), ym.astype(int)), 1)
        mask = p_neg.ravel() > 0
        structural_ok = obs2.ravel()[~mask].sum() == 0
        pvalue_neg = float(
            chisquare(obs2.ravel()[mask], f_exp=(p_neg * n_draws).ravel()[mask]).pvalue
        )

        worst_norm_gap = 0.0
        for seed, n in [(0, 2), (1, 5), (2, 16), (3, 64), (4, 128)]:
            b = random_batch(Rng(seed), n, 3)
            nu = (1.0 - b.weights.w) / (1.0 - b.weights.z_hat)[:, None]
            worst_norm_gap = max(worst_norm_gap, float(np.abs(nu.mean(axis=1) - 1.0).max()))

        elapsed = time.monotonic() - t0
        _report(
            "sampler exactness",
            structural_ok
            and pvalue_pos > 0.01
            and pvalue_neg > 0.01
            and worst_norm_gap < 1e-12,
            f"chi2 p-values {pvalue_pos:.3f}/{pvalue_neg:.3f} > 0.01, "
            f"per-anchor weight normalization gap {worst_norm_gap:.2e} < 1e-12",
        )
        _budget("sampler exactness", elapsed, 60.0)


def _synth_probe(seed: int, epochs: int) -> tuple[float, bool]:
    """(probe top-1, training loss improved over the run)."""
    model = synthetic_class_model(3, 3, 6.0)
    full = make_synthetic_dataset(model, 2500, nuisance_dim=16, rng=Rng(123), meta_jitter=0.15)
    tr, te = full.take(np.arange(2000)), full.take(np.arange(2000, 2500))
    cfg = TrainConfig(
        batch_size=128,
        epochs=epochs,
        learning_rate=1e-3,
        weight_decay=5e-5,
        loss_kind="align+cond_unif",
        lam=1.0,
        tau=0.1,
        sigma=0.5,
        kernel_family="rbf",
        seed=seed,
        hidden_dims=(64, 32),
        embed_dim=16,
        augment=AugmentConfig(noise=0.05, mask=0.1),
    )
    ckpt, history = train(cfg, tr)
    improved = (
        bool(np.mean([h.loss for h in history[-5:]]) < np.mean([h.loss for h in history[:5]]))
        if history
        else False
    )
    top1 = linear_probe(
        extract_features(ckpt, tr), tr.labels, extract_features(ckpt, te), te.labels
    ).top1_accuracy
    return top1, improved


class TestSyntheticTraining:
    def test_trained_beats_random_init_by_fifteen_points(self):
        t0 = time.monotonic()
        model = synthetic_class_model(3, 3, 6.0)
        full = make_synthetic_dataset(model, 2500, nuisance_dim=16, rng=Rng(123), meta_jitter=0.15)
        knn = knn_accuracy(
            full.inputs[:2000], full.labels[:2000], full.inputs[2000:], full.labels[2000:], k=5
        )
        band_ok = 0.6 <= knn <= 0.9

        seeds = [0, 1, 2, 3, 4]
        trained_runs = [_synth_probe(s, epochs=30) for s in seeds]
        trained = [t for t, _ in trained_runs]
        n_improved = sum(improved for _, improved in trained_runs)
        baseline = [_synth_probe(s, epochs=0)[0] for s in seeds]
        gap = float(np.median(trained) - np.median(baseline))
        elapsed = time.monotonic() - t0
        _report(
            "desk-scale synthetic training",
            band_ok and gap >= 0.15 and n_improved >= 4,
            f"knn band {knn:.3f} in [0.6, 0.9]; median trained {np.median(trained):.3f} "
            f"vs random-init {np.median(baseline):.3f}, gap {gap:.3f} >= 0.15; "
            f"training loss improved in {n_improved}/5 seeds",
        )
        _budget("desk-scale synthetic training", elapsed, 5 * 60.0 * len(seeds))


class TestCifarDirectionalComparison:
    def test_variants_beat_random_and_conditional_holds_up(self, tmp_path):
        data_dir = Path(os.environ.get("CONDCL_DATA_DIR", str(REPO / "data")))
        needed = [data_dir / f"data_batch_{i}.bin" for i in (1, 2)] + [data_dir / "test_batch.bin"]
        missing = [str(p) for p in needed if not p.exists()]
        if missing:
            _report(
                "cifar-10 directional comparison",
                False,
                "CIFAR-10 binaries not found: "
                + ", ".join(missing)
                + " — this environment cannot download them (no general network access); "
                "place the binary batches under $CONDCL_DATA_DIR and re-run (see README)",
            )

        t0 = time.monotonic()
        out = tmp_path / "compare-cifar"
        env_dir = os.environ.get("CONDCL_DATA_DIR")
        if env_dir is None:
            os.environ["CONDCL_DATA_DIR"] = str(data_dir)
        code = cli_main(
            ["compare", "--config", str(CONFIGS / "compare_cifar.toml"), "--out", str(out)]
        )
        assert code == 0
        rows = (out / "compare.csv").read_text().splitlines()[1:]
        by_variant: dict[str, list[float]] = {}
        for line in rows:
            kind, lam, _, top1 = line.split(",")[:4]
            if kind == "align+cond_unif" and float(lam) != 1.0:
                continue
            by_variant.setdefault(kind, []).append(float(top1))
        med = {k: float(np.median(v)) for k, v in by_variant.items()}
        rand = med["random-init"]
        contrastive = ["infonce", "supcon", "yaware", "align+global_unif", "align+cond_unif"]
        beats_random = all(med[k] >= rand + 0.05 for k in contrastive)
        conditional_ok = med["align+cond_unif"] >= med["align+global_unif"] - 0.01
        curve_exists = (out / "acc_vs_lambda.csv").exists() and (out / "acc_vs_epoch.csv").exists()
        elapsed = time.monotonic() - t0
        _report(
            "cifar-10 directional comparison",
            beats_random and conditional_ok and curve_exists,
            f"medians {med}; every variant >= random+5pts: {beats_random}; "
            f"cond_unif >= global_unif - 1pt: {conditional_ok}",
        )
        _budget("cifar-10 directional comparison", elapsed, 30 * 60.0)


class TestDeterminism:
    def _run_twice(self, command: str, config_text: str, tmp_path, csvs: list[str]) -> bool:
        cfg = tmp_path / f"{command}.toml"
        cfg.write_text(config_text)
        outs = []
        for tag in ("x", "y"):
            out = tmp_path / f"{command}-{tag}"
            assert cli_main([command, "--config", str(cfg), "--out", str(out)]) == 0
            outs.append(out)
        return all((outs[0] / c).read_bytes() == (outs[1] / c).read_bytes() for c in csvs)

    def test_every_command_reproduces_csvs(self, tmp_path):
        t0 = time.monotonic()
        ok = True
        ok &= self._run_twice(
            "gradcheck",
            "[experiment]\nseeds = [0]\nsizes = [[3, 4], [8, 8]]\n",
            tmp_path,
            ["gradcheck.csv"],
        )
        ok &= self._run_twice(
            "decompose",
            "[experiment]\nbatches = 30\nbatch_dims = [[2, 4], [16, 8]]\ntaus = [0.1, 1.0]\n",
            tmp_path,
            ["decompose.csv"],
        )
        ok &= self._run_twice(
            "converge",
            '[kernel]\nfamily = "rbf"\nsigma = 1.0\n[loss]\ntau = 1.0\n'
            "[experiment]\nseed = 3\nbatch_sizes = [16, 64]\nreps = 3\nn_oracle = 5000\n",
            tmp_path,
            ["converge.csv"],
        )
        synth = (
            '[kernel]\nfamily = "rbf"\nsigma = 0.5\n'
            "[loss]\ntau = 0.1\nlambda = 1.0\n"
            "[train]\nbatch_size = 64\nepochs = 2\nlearning_rate = 1e-3\n"
            'loss_kind = "align+cond_unif"\nseed = 0\nhidden_dims = [16]\nembed_dim = 8\n'
            "augment_noise = 0.05\n"
            '[data]\nkind = "synthetic"\nclasses = 3\nsignal_dim = 3\nkappa = 6.0\n'
            "nuisance_dim = 8\nn_train = 300\nn_test = 100\ndata_seed = 5\n"
        )
        ok &= self._run_twice("train", synth, tmp_path, ["history.csv"])
        ok &= self._run_twice(
            "compare",
            synth
            + "[experiment]\nprobe_epochs = 100\n"
            'variants = ["infonce", "align+cond_unif"]\ntrain_seeds = [0, 1]\n'
            "lambdas = [1.0]\neval_every = 1\n",
            tmp_path,
            ["compare.csv", "acc_vs_epoch.csv", "acc_vs_lambda.csv"],
        )
        elapsed = time.monotonic() - t0
        _report("determinism", ok, f"byte-identical CSVs for all commands ({elapsed:.1f}s)")
