import numpy as np
import pytest

from condcl.errors import RejectionBudgetError, ShapeMismatchError
from condcl.kernels import KernelConfig
from condcl.losses import LossConfig
from condcl.numerics import Rng
from condcl.synthlab import (
    ConvergenceRow,
    FrozenEncoder,
    LabelDistribution,
    LimitEstimate,
    McLimits,
    SyntheticModel,
    convergence_experiment,
    default_model,
    kernel_values,
    label_weight_matrix,
    mc_limit_terms,
    sample_negative_pair,
    sample_negative_pairs,
    sample_positive_pair,
    sample_positive_pairs,
    summarize_convergence,
)

# frozen regression targets from a one-off 1e6-sample run of mc_limit_terms
# (default model, identity encoder, rbf sigma=1, tau=1, seed 424242)
GOLDEN_ALIGN = 0.8061883164477456
GOLDEN_ALIGN_STDERR = 0.0002180333922052551
GOLDEN_UNIF = 0.2613559199328973
GOLDEN_UNIF_STDERR = 0.00035939074853038596


def rbf_cfg(sigma=1.0) -> KernelConfig:
    return KernelConfig("rbf", sigma=sigma)


class TestLabelDistribution:
    def test_uniform_range(self):
        d = LabelDistribution("uniform", low=2.0, high=5.0)
        y = d.sample(Rng(0), 1000)
        assert y.min() >= 2.0 and y.max() <= 5.0

    def test_discrete_support(self):
        d = LabelDistribution("discrete", values=(1.0, 4.0), probs=(0.25, 0.75))
        y = d.sample(Rng(0), 2000)
        assert set(np.unique(y)) == {1.0, 4.0}
        assert np.mean(y == 4.0) == pytest.approx(0.75, abs=0.05)

    def test_mixture_validation(self):
        with pytest.raises(ShapeMismatchError):
            LabelDistribution("gaussian_mixture", means=(0.0,), stds=(1.0,), mix_weights=(0.5,))

    def test_unknown_kind(self):
        with pytest.raises(ShapeMismatchError):
            LabelDistribution("poisson")


class TestSyntheticModel:
    def test_samples_are_unit_norm(self):
        m = default_model()
        x, y = m.sample_xy(Rng(0), 500)
        np.testing.assert_allclose(np.linalg.norm(x, axis=1), np.ones(500), atol=1e-12)
        assert y.shape == (500,)

    def test_noiseless_hits_mean_direction(self):
        m = SyntheticModel(
            label_dist=LabelDistribution("uniform", 0.0, 10.0), embed_dim=3, kappa=None
        )
        y = np.array([0.0, 2.0])
        np.testing.assert_allclose(m.sample_x(y, Rng(0)), m.mean_directions(y), atol=0)

    def test_class_directions_model(self):
        dirs = np.eye(3)
        m = SyntheticModel(
            label_dist=LabelDistribution("discrete", values=(0.0, 1.0, 2.0), probs=(1 / 3,) * 3),
            embed_dim=3,
            mean_map="class_directions",
            class_directions=dirs,
            kappa=None,
            latent_classes=3,
        )
        np.testing.assert_array_equal(m.mean_directions(np.array([2.0, 0.0])), dirs[[2, 0]])

    def test_kernel_values_match_kernels_module(self):
        from condcl.kernels import MetaRecord, rbf_kernel

        y1, y2 = 1.3, 4.0
        got = kernel_values(rbf_cfg(2.0), np.array([y1]), np.array([y2]))[0]
        want = rbf_kernel(MetaRecord(continuous=(y1,)), MetaRecord(continuous=(y2,)), 2.0)
        assert got == pytest.approx(want, abs=1e-15)


class TestPositiveSampler:
    def test_huge_bandwidth_gives_independent_pairs(self):
        m = default_model()
        _, y, _, y_plus = sample_positive_pairs(m, rbf_cfg(1e9), Rng(0), 20_000)
        corr = np.corrcoef(y, y_plus)[0, 1]
        assert abs(corr) < 0.02

    def test_tiny_bandwidth_concentrates(self):
        m = default_model()
        _, y, _, y_plus = sample_positive_pairs(m, rbf_cfg(0.1), Rng(1), 20_000)
        gaps = np.abs(y_plus - y)
        assert np.mean(gaps < 0.5) >= 0.99

    def test_delta_kernel_on_discrete_labels(self):
        m = SyntheticModel(
            label_dist=LabelDistribution("discrete", values=tuple(range(5)), probs=(0.2,) * 5),
            embed_dim=3,
        )
        _, y, _, y_plus = sample_positive_pairs(m, KernelConfig("categorical"), Rng(2), 5000)
        np.testing.assert_array_equal(y, y_plus)

    def test_budget_error_when_never_accepted(self):
        # categorical kernel over continuous labels never matches
        m = default_model()
        with pytest.raises(RejectionBudgetError):
            sample_positive_pairs(m, KernelConfig("categorical"), Rng(3), 1000)

    def test_single_pair_wrapper(self):
        x, y, xp, yp = sample_positive_pair(default_model(), rbf_cfg(), Rng(4))
        assert x.shape == (3,) and isinstance(y, float)
        assert np.linalg.norm(x) == pytest.approx(1.0, abs=1e-12)

    def test_anchor_marginal_preserved(self):
        """The anchor is drawn once and never resampled during rejection."""
        from scipy.stats import ks_2samp

        m = default_model()
        rng_a, rng_b = Rng(5).split(2)
        x_pos, _, _, _ = sample_positive_pairs(m, rbf_cfg(0.5), rng_a, 10_000)
        x_direct, _ = m.sample_xy(rng_b, 10_000)
        for coord in range(3):
            assert ks_2samp(x_pos[:, coord], x_direct[:, coord]).pvalue > 0.01


class TestNegativeSampler:
    def test_never_returns_identical_label_for_rbf(self):
        m = default_model()
        _, y, _, y_minus = sample_negative_pairs(m, rbf_cfg(1.0), Rng(6), 5000)
        assert np.all(y != y_minus)

    def test_tiny_bandwidth_gives_independent_pairs(self):
        m = default_model()
        _, y, _, y_minus = sample_negative_pairs(m, rbf_cfg(1e-6), Rng(7), 20_000)
        corr = np.corrcoef(y, y_minus)[0, 1]
        assert abs(corr) < 0.02

    def test_negatives_biased_toward_dissimilar_labels(self):
        m = default_model()
        cfg = rbf_cfg(2.0)
        rng_neg, rng_ind = Rng(8).split(2)
        _, y, _, y_minus = sample_negative_pairs(m, cfg, rng_neg, 100_000)
        w_neg = np.mean(kernel_values(cfg, y, y_minus))
        y_a = m.label_dist.sample(rng_ind, 100_000)
        y_b = m.label_dist.sample(rng_ind, 100_000)
        w_ind = np.mean(kernel_values(cfg, y_a, y_b))
        assert w_neg < w_ind

    def test_budget_error_when_all_labels_identical(self):
        m = SyntheticModel(
            label_dist=LabelDistribution("discrete", values=(3.0,), probs=(1.0,)), embed_dim=3
        )
        with pytest.raises(RejectionBudgetError):
            sample_negative_pairs(m, KernelConfig("categorical"), Rng(9), 100)

    def test_single_pair_wrapper(self):
        x, y, xm, ym = sample_negative_pair(default_model(), rbf_cfg(), Rng(10))
        assert y != ym


class TestFrozenEncoder:
    def test_identity_on_sphere_points(self):
        m = default_model()
        x, _ = m.sample_xy(Rng(0), 50)
        np.testing.assert_allclose(FrozenEncoder.identity().embed(x), x, atol=1e-15)

    def test_random_mlp_deterministic_unit_norm(self):
        enc = FrozenEncoder.random_mlp((3, 16, 4), seed=5)
        x = Rng(1).generator.random((40, 3))
        a = enc.embed(x)
        b = enc.embed(x)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(np.linalg.norm(a, axis=1), np.ones(40), atol=1e-12)


class TestMcLimitTerms:
    def test_collapsed_encoder_gives_ones(self):
        m = default_model()
        enc = FrozenEncoder(lambda x: np.tile([1.0, 0.0, 0.0], (x.shape[0], 1)), "collapse")
        limits = mc_limit_terms(m, enc, rbf_cfg(), LossConfig(tau=1.0), 2000, Rng(0))
        assert limits.align.value == pytest.approx(1.0, abs=1e-12)
        assert limits.unif.value == pytest.approx(1.0, abs=1e-12)
        assert limits.align.stderr == pytest.approx(0.0, abs=1e-12)

    def test_noiseless_discrete_orthogonal_classes(self):
        m = SyntheticModel(
            label_dist=LabelDistribution("discrete", values=(0.0, 1.0, 2.0), probs=(1 / 3,) * 3),
            embed_dim=3,
            mean_map="class_directions",
            class_directions=np.eye(3),
            kappa=None,
            latent_classes=3,
        )
        limits = mc_limit_terms(
            m, FrozenEncoder.identity(), KernelConfig("categorical"), LossConfig(tau=1.0), 2000, Rng(1)
        )
        assert limits.align.value == pytest.approx(1.0, abs=1e-12)

    def test_golden_regression(self):
        limits = mc_limit_terms(
            default_model(), FrozenEncoder.identity(), rbf_cfg(), LossConfig(tau=1.0), 50_000, Rng(7)
        )
        tol_a = 5.0 * np.hypot(limits.align.stderr, GOLDEN_ALIGN_STDERR)
        tol_u = 5.0 * np.hypot(limits.unif.stderr, GOLDEN_UNIF_STDERR)
        assert limits.align.value == pytest.approx(GOLDEN_ALIGN, abs=tol_a)
        assert limits.unif.value == pytest.approx(GOLDEN_UNIF, abs=tol_u)

    def test_requires_enough_samples(self):
        with pytest.raises(ShapeMismatchError):
            mc_limit_terms(
                default_model(), FrozenEncoder.identity(), rbf_cfg(), LossConfig(), 10, Rng(0)
            )

    def test_reproducible(self):
        args = (default_model(), FrozenEncoder.identity(), rbf_cfg(), LossConfig(tau=1.0), 5000)
        a = mc_limit_terms(*args, Rng(3))
        b = mc_limit_terms(*args, Rng(3))
        assert a == b


class TestConvergence:
    def fixed_limits(self):
        return McLimits(
            align=LimitEstimate(GOLDEN_ALIGN, GOLDEN_ALIGN_STDERR),
            unif=LimitEstimate(GOLDEN_UNIF, GOLDEN_UNIF_STDERR),
        )

    def test_rows_and_summary(self):
        rows = convergence_experiment(
            default_model(),
            FrozenEncoder.identity(),
            rbf_cfg(),
            LossConfig(tau=1.0),
            [8, 32],
            reps=4,
            rng=Rng(0),
            limits=self.fixed_limits(),
        )
        assert len(rows) == 8
        assert all(isinstance(r, ConvergenceRow) for r in rows)
        summary = summarize_convergence(rows)
        assert [n for n, _, _ in summary] == [8, 32]
        assert all(stderr is not None for _, _, stderr in summary)

    def test_single_rep_has_no_stderr(self):
        rows = convergence_experiment(
            default_model(),
            FrozenEncoder.identity(),
            rbf_cfg(),
            LossConfig(tau=1.0),
            [16],
            reps=1,
            rng=Rng(1),
            limits=self.fixed_limits(),
        )
        summary = summarize_convergence(rows)
        assert len(summary) == 1
        assert summary[0][2] is None

    def test_batch_sizes_validated(self):
        with pytest.raises(ShapeMismatchError):
            convergence_experiment(
                default_model(),
                FrozenEncoder.identity(),
                rbf_cfg(),
                LossConfig(),
                [32, 8],
                reps=2,
                rng=Rng(0),
                limits=self.fixed_limits(),
            )

    def test_deterministic(self):
        kw = dict(
            m=default_model(),
            enc=FrozenEncoder.identity(),
            cfg=rbf_cfg(),
            loss_cfg=LossConfig(tau=1.0),
            batch_sizes=[8, 16],
            reps=3,
            limits=self.fixed_limits(),
        )
        assert convergence_experiment(rng=Rng(5), **kw) == convergence_experiment(rng=Rng(5), **kw)

    def test_label_weight_matrix_matches_kernel(self):
        y = Rng(0).generator.uniform(0, 10, size=6)
        wm = label_weight_matrix(rbf_cfg(2.0), y)
        np.testing.assert_array_equal(wm.w, wm.w.T)
        np.testing.assert_array_equal(np.diag(wm.w), np.ones(6))
        assert wm.w[0, 1] == pytest.approx(np.exp(-((y[0] - y[1]) ** 2) / 8.0), rel=1e-12)
