import numpy as np
import pytest
from skimage.metrics import structural_similarity

from buff.metrics import (
    SparsificationCurve,
    ause,
    mask_quality_label,
    psnr,
    sparsification,
    ssim,
)


class TestPSNR:
    def test_identical_is_infinite(self):
        a = np.random.default_rng(0).random((8, 8))
        assert psnr(a, a) == np.inf

    def test_unit_difference_zero_db(self):
        assert psnr(np.zeros((4, 4)), np.ones((4, 4)), peak=1.0) == pytest.approx(0.0)

    def test_known_mse(self):
        a = np.zeros((10, 10))
        b = np.full((10, 10), 0.1)  # MSE 0.01
        assert psnr(a, b, peak=1.0) == pytest.approx(20.0, abs=1e-12)

    def test_symmetry_and_noise_monotonicity(self):
        rng = np.random.default_rng(1)
        a = rng.random((16, 16))
        noise = rng.standard_normal((16, 16))
        assert psnr(a, a + 0.01 * noise) == pytest.approx(psnr(a + 0.01 * noise, a))
        values = [psnr(a, a + amp * noise) for amp in (0.01, 0.05, 0.2)]
        assert values[0] > values[1] > values[2]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))


class TestSSIM:
    def test_identical_is_one(self):
        a = np.random.default_rng(2).random((16, 16))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_inverted_checker_is_negative(self):
        r, c = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
        checker = ((r // 2 + c // 2) % 2).astype(np.float64)
        assert ssim(checker, 1.0 - checker) < 0

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        a, b = rng.random((12, 12)), rng.random((12, 12))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(4)
        a = rng.random((32, 32))
        b = np.clip(a + 0.1 * rng.standard_normal((32, 32)), 0, 1)
        ref = structural_similarity(
            a, b, win_size=11, gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False, data_range=1.0,
        )
        assert ssim(a, b) == pytest.approx(ref, abs=5e-4)

    def test_too_small_input(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestSparsification:
    def test_perfect_uncertainty_curves_coincide(self):
        rng = np.random.default_rng(5)
        err = rng.random((10, 10))
        curve = sparsification(err, err, steps=10)
        np.testing.assert_allclose(curve.error_by_uncertainty, curve.error_by_oracle)

    def test_zero_fraction_is_full_mean(self):
        rng = np.random.default_rng(6)
        u, e = rng.random((6, 6)), rng.random((6, 6))
        curve = sparsification(u, e, steps=4)
        assert curve.error_by_uncertainty[0] == pytest.approx(e.mean())
        assert curve.error_by_oracle[0] == pytest.approx(e.mean())

    def test_four_pixel_tie_break_case(self):
        # flat uncertainty: ties broken by pixel index, so f=0.5 drops 0, 1
        errors = np.array([[1.0, 2.0, 3.0, 4.0]])
        flat = np.zeros((1, 4))
        curve = sparsification(flat, errors, steps=2)
        assert curve.error_by_uncertainty[1] == pytest.approx(3.5)
        assert curve.error_by_oracle[1] == pytest.approx(1.5)

    def test_oracle_curve_nonincreasing(self):
        rng = np.random.default_rng(7)
        u, e = rng.random(400), rng.random(400)
        curve = sparsification(u, e, steps=20)
        assert np.all(np.diff(curve.error_by_oracle) <= 1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            sparsification(np.zeros((2, 2)), np.zeros((2, 3)), steps=4)
        with pytest.raises(ValueError):
            sparsification(np.zeros(4), np.zeros(4), steps=1)


class TestAUSE:
    def test_perfect_uncertainty_is_zero(self):
        rng = np.random.default_rng(8)
        err = rng.random((12, 12))
        assert ause(sparsification(err, err, steps=10)) == pytest.approx(0.0, abs=1e-12)

    def test_four_pixel_brute_force(self):
        # fractions {0, 1/2}: normalized gap is 0 then (3.5-1.5)/2.5,
        # trapezoid over width 1/2 -> 0.2
        errors = np.array([[1.0, 2.0, 3.0, 4.0]])
        curve = sparsification(np.zeros((1, 4)), errors, steps=2)
        assert ause(curve) == pytest.approx(0.2, abs=1e-12)

    def test_invariant_under_monotone_transforms(self):
        rng = np.random.default_rng(9)
        u = rng.random((20, 20))
        e = rng.random((20, 20))
        base = ause(sparsification(u, e, steps=25))
        cubed = ause(sparsification(u**3, e, steps=25))
        logged = ause(sparsification(np.log1p(u), e, steps=25))
        assert cubed == pytest.approx(base, abs=1e-12)
        assert logged == pytest.approx(base, abs=1e-12)

    def test_nonnegative_up_to_tie_breaks(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            u, e = rng.random(100), rng.random(100)
            assert ause(sparsification(u, e, steps=10)) >= -1e-12

    def test_zero_error_flagged(self):
        curve = sparsification(np.ones((3, 3)), np.zeros((3, 3)), steps=3)
        with pytest.warns(UserWarning):
            assert ause(curve) == 0.0

    def test_quality_tier_labels(self):
        assert mask_quality_label(0.121) == "high"
        assert mask_quality_label(0.217) == "medium"
        assert mask_quality_label(0.308) == "low"
        assert mask_quality_label(0.05) == "high"
        assert mask_quality_label(1.0) == "low"
