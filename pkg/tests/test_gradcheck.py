import numpy as np
import pytest

from condcl.errors import NonFiniteLossError, ShapeMismatchError
from condcl.gradcheck import LOSS_OPS, check_all, check_loss_op, finite_diff, random_batch
from condcl.losses import Batch, LossConfig, identity_weight_matrix, infonce_reference, supcon_reference
from condcl.numerics import Rng


class TestFiniteDiff:
    def test_quadratic(self):
        f = np.ones((3, 2))
        grad = finite_diff(lambda m: float(np.sum(m**2)), f, step=1e-5)
        np.testing.assert_allclose(grad, 2.0 * np.ones((3, 2)), atol=1e-8)

    def test_constant(self):
        grad = finite_diff(lambda m: 4.2, np.ones((2, 2)), step=1e-5)
        np.testing.assert_allclose(grad, np.zeros((2, 2)), atol=1e-10)

    def test_alignment_self_consistency(self):
        from condcl.losses import conditional_alignment

        b = random_batch(Rng(0), 3, 4)
        cfg = LossConfig(tau=0.5)
        analytic = conditional_alignment(b, cfg).grad_anchor
        numeric = finite_diff(
            lambda f: conditional_alignment(Batch(f, b.candidates, b.weights, 1e-3), cfg).value,
            b.anchors,
        )
        rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
        assert rel.max() < 1e-6

    def test_step_bounds(self):
        with pytest.raises(ShapeMismatchError):
            finite_diff(lambda m: 0.0, np.ones((1, 1)), step=1e-2)

    def test_non_finite_loss(self):
        with pytest.raises(NonFiniteLossError):
            finite_diff(lambda m: float("nan"), np.ones((1, 1)))


class TestCheckAll:
    def test_full_sweep_sixty_reports(self):
        reports = check_all(seeds=[0, 1, 2], sizes=[(2, 2), (3, 8), (8, 8), (16, 16)])
        assert len(reports) == 60
        assert all(r.passed for r in reports)
        assert max(r.max_rel_err for r in reports) < 1e-6

    def test_zero_threshold_fails_everything(self):
        reports = check_all(seeds=[0], sizes=[(3, 3)], threshold=0.0)
        assert reports and not any(r.passed for r in reports)

    def test_empty_sizes(self):
        assert check_all(seeds=[0], sizes=[]) == []

    def test_deterministic(self):
        a = check_all(seeds=[5], sizes=[(4, 4)])
        b = check_all(seeds=[5], sizes=[(4, 4)])
        assert a == b

    def test_step_halving_reduces_error(self):
        """Second-order convergence of central differences on the curved losses.

        conditional_alignment is bilinear in the features, so its central
        difference is exact up to roundoff at any admissible step; it is
        asserted at machine level instead of via the halving comparison.
        """
        sizes = [(3, 4), (5, 6)]
        coarse = check_all(seeds=[0, 1, 2], sizes=sizes, step=1e-4)
        fine = check_all(seeds=[0, 1, 2], sizes=sizes, step=5e-5)
        curved_pairs = [
            (f, c) for f, c in zip(fine, coarse) if c.op_name != "conditional_alignment"
        ]
        improved = sum(f.max_abs_err < c.max_abs_err for f, c in curved_pairs)
        assert improved >= 0.9 * len(curved_pairs)
        for rep in coarse + fine:
            if rep.op_name == "conditional_alignment":
                assert rep.max_abs_err < 1e-10


class TestBaselineGradients:
    def test_infonce_gradients(self):
        b = random_batch(Rng(3), 5, 4)
        cfg = LossConfig(tau=0.3)
        rep = check_loss_op("infonce_reference", lambda bb, cc: infonce_reference(bb, cc), b, cfg)
        assert rep.passed

    def test_supcon_gradients(self):
        rng = Rng(4)
        b = random_batch(rng, 6, 4)
        labels = rng.generator.integers(0, 3, size=6)
        cfg = LossConfig(tau=0.3)
        stacked = np.vstack([b.anchors, b.candidates])
        analytic = supcon_reference(stacked, labels, cfg).grad_anchor
        numeric = finite_diff(lambda f: supcon_reference(f, labels, cfg).value, stacked)
        rel = np.abs(analytic - numeric) / np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
        assert rel.max() < 1e-6

    def test_all_named_ops_covered(self):
        assert set(LOSS_OPS) == {
            "yaware_infonce",
            "conditional_alignment",
            "global_uniformity",
            "conditional_uniformity",
            "combined_objective",
        }
