import numpy as np
import pytest

from buff.errors import ConfigError
from buff.mask import RefineConfig, adjustment_factor, modulate_noise, refine_mask

SIGMA_ONE = 0.7310585786300049  # logistic(1), oracle: 1/(1+exp(-1))


class TestRefineConfig:
    def test_defaults_are_valid(self):
        cfg = RefineConfig()
        assert cfg.steepness == 10.0
        assert cfg.amp_base == 1.2

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"steepness": 0.0},
            {"amp_base": 0.9},
            {"red_base": 1.1},
            {"red_base": 0.0},
            {"intensity": -0.1},
            {"red_base": 0.2, "intensity": 0.5},  # positivity bound
            {"threshold_mode": "bogus"},
        ],
    )
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            RefineConfig(**kwargs)


class TestAdjustmentFactor:
    def test_half_at_threshold(self):
        out = adjustment_factor(np.array([[0.3]]), 0.3, 10.0)
        assert out[0, 0] == pytest.approx(0.5, abs=1e-15)

    def test_logistic_of_one(self):
        out = adjustment_factor(np.array([[0.4]]), 0.3, 10.0)
        assert out[0, 0] == pytest.approx(SIGMA_ONE, abs=1e-12)

    def test_limits_and_range(self):
        m = np.array([[-1e9, 1e9]])
        out = adjustment_factor(m, 0.0, 5.0)
        assert out[0, 0] == pytest.approx(0.0, abs=1e-12)
        assert out[0, 1] == pytest.approx(1.0, abs=1e-12)
        # strictly interior wherever float64 can represent the tails
        grid = adjustment_factor(np.linspace(-10, 10, 999).reshape(9, 111), 0.0, 3.0)
        assert np.all(grid > 0) and np.all(grid < 1)

    def test_monotone_in_mask_value(self):
        m = np.linspace(0, 1, 500)
        out = adjustment_factor(m, 0.4, 10.0)
        assert np.all(np.diff(out) >= 0)

    def test_rejects_nonpositive_steepness(self):
        with pytest.raises(ConfigError):
            adjustment_factor(np.zeros((2, 2)), 0.0, -1.0)


class TestRefineMask:
    def cfg(self, **kw):
        base = dict(threshold=0.5, steepness=10.0, amp_base=1.2, red_base=0.85,
                    intensity=0.4, threshold_mode="fixed")
        base.update(kw)
        return RefineConfig(**base)

    def test_just_above_threshold_gives_amp_base(self):
        out = refine_mask(np.array([[0.5 + 1e-9]]), self.cfg())
        assert out[0, 0] == pytest.approx(1.2, abs=1e-7)

    def test_far_below_threshold_gives_red_floor(self):
        # adjustment factor -> 0, so the factor is red_base - intensity/2
        out = refine_mask(np.array([[-1e6]]), self.cfg())
        assert out[0, 0] == pytest.approx(0.65, abs=1e-12)

    def test_uniform_mask_single_branch(self):
        m = np.full((4, 4), 0.2)
        cfg = self.cfg(threshold=0.9)
        out = refine_mask(m, cfg)
        a = 1.0 / (1.0 + np.exp(-(0.2 - 0.9) * 10.0))
        expected = 0.85 - (0.5 - a) * 0.4
        np.testing.assert_allclose(out, expected, atol=1e-14)
        assert np.ptp(out) == 0

    def test_brute_force_bounds_and_branch_monotonicity(self):
        cfg = self.cfg()
        m = np.linspace(-2.0, 3.0, 1000)
        out = refine_mask(m.reshape(1, -1), cfg)[0]
        assert np.all(out >= cfg.lower_bound - 1e-12)
        assert np.all(out <= cfg.upper_bound + 1e-12)
        above = m > cfg.threshold
        assert np.all(np.diff(out[above]) >= 0)
        assert np.all(np.diff(out[~above]) >= 0)

    def test_zero_intensity_collapses_to_two_levels(self):
        cfg = self.cfg(intensity=0.0)
        out = refine_mask(np.linspace(0, 1, 1000).reshape(10, 100), cfg)
        assert set(np.unique(out)) == {0.85, 1.2}

    def test_median_mode_branch_assignment_scale_invariant(self):
        rng = np.random.default_rng(0)
        m = rng.uniform(0.1, 2.0, size=(16, 16))
        cfg = RefineConfig(threshold_mode="per_image_median")
        above1 = refine_mask(m, cfg) >= cfg.amp_base
        above2 = refine_mask(7.3 * m, cfg) >= cfg.amp_base
        np.testing.assert_array_equal(above1, above2)

    def test_positive_everywhere(self):
        rng = np.random.default_rng(1)
        out = refine_mask(rng.uniform(0, 1, (32, 32)), RefineConfig())
        assert np.all(out > 0)


class TestModulateNoise:
    def test_identity_mask(self):
        rng = np.random.default_rng(2)
        noise = rng.standard_normal((8, 8))
        np.testing.assert_array_equal(modulate_noise(noise, np.ones((8, 8))), noise)

    def test_zero_noise(self):
        out = modulate_noise(np.zeros((4, 4)), np.full((4, 4), 1.3))
        assert np.all(out == 0)

    def test_constant_grids_match_scalar_product(self):
        noise = np.full((5, 5), 0.7)
        b = np.full((5, 5), 1.2)
        np.testing.assert_array_equal(modulate_noise(noise, b), noise * 1.2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            modulate_noise(np.zeros((4, 4)), np.ones((4, 5)))

    def test_monte_carlo_variance_is_mask_squared(self):
        rng = np.random.default_rng(3)
        b = np.array([[0.65, 1.0], [1.2, 1.4]])
        draws = rng.standard_normal((100_000, 2, 2))
        var = modulate_noise(draws, np.broadcast_to(b, draws.shape)).var(axis=0)
        se = b**2 * np.sqrt(2.0 / 100_000)
        assert np.all(np.abs(var - b**2) < 3 * se)
