"""Noise schedule construction and the forward marginal."""

import numpy as np
import pytest

import sepdiff as sd
from sepdiff.errors import ConfigurationError, DimensionError


def test_paper_training_setup():
    s = sd.make_linear_schedule(200, 1e-4, 2e-2)
    assert s.num_steps == 200
    assert s.beta[0] == 1e-4 and s.beta[-1] == 2e-2
    assert np.all((s.beta > 0) & (s.beta < 1))


def test_two_step_cumulative_product():
    s = sd.make_linear_schedule(2, 0.5, 0.5)
    np.testing.assert_allclose(s.beta, [0.5, 0.5])
    np.testing.assert_allclose(s.alpha_bar, [0.5, 0.25])


def test_sigma_closed_form_recomputation():
    """Independent recomputation of sigma from beta and the cumprod."""
    s = sd.make_linear_schedule(200, 1e-4, 2e-2)
    ab = np.cumprod(1.0 - s.beta)
    for t in range(1, 200):
        expect = np.sqrt(s.beta[t] * (1.0 - ab[t - 1]) / (1.0 - ab[t]))
        assert s.sigma[t] == pytest.approx(expect, rel=1e-14)
    assert s.sigma[0] == 0.0
    # posterior variance never exceeds the step variance
    assert np.all(s.sigma**2 <= s.beta + 1e-15)


def test_alpha_bar_strictly_decreasing():
    s = sd.make_linear_schedule(100, 1e-3, 5e-2)
    assert np.all(np.diff(s.alpha_bar) < 0)


def test_invalid_ranges_name_the_bound():
    with pytest.raises(ConfigurationError, match="num_steps"):
        sd.make_linear_schedule(1, 1e-4, 1e-2)
    with pytest.raises(ConfigurationError, match="beta_min"):
        sd.make_linear_schedule(10, 0.0, 1e-2)
    with pytest.raises(ConfigurationError, match="beta_min"):
        sd.make_linear_schedule(10, 0.2, 0.1)
    with pytest.raises(ConfigurationError, match="beta_max"):
        sd.make_linear_schedule(10, 0.5, 1.0)


def test_arrays_immutable():
    s = sd.make_linear_schedule(10, 1e-3, 1e-2)
    with pytest.raises(ValueError):
        s.beta[0] = 0.5


class TestNoiseToLevel:
    def test_zero_noise(self):
        s = sd.make_linear_schedule(50, 1e-3, 2e-2)
        x0 = np.arange(8.0)
        out = sd.noise_to_level(x0, 30, np.zeros(8), s)
        np.testing.assert_allclose(out, np.sqrt(s.alpha_bar[30]) * x0)

    def test_pure_noise_limit(self):
        # drive alpha_bar to ~0 with a long aggressive schedule
        s = sd.make_linear_schedule(400, 1e-4, 8e-2)
        assert s.alpha_bar[-1] < 1e-6
        eps = np.random.default_rng(0).standard_normal(64)
        out = sd.noise_to_level(np.ones(64), 399, eps, s)
        np.testing.assert_allclose(out, eps, atol=2e-3)

    def test_impulse_against_direct_formula(self):
        s = sd.make_linear_schedule(100, 1e-4, 2e-2)
        x0 = np.zeros(16)
        x0[3] = 1.0
        eps = np.random.default_rng(5).standard_normal(16)
        t = 50
        out = sd.noise_to_level(x0, t, eps, s)
        expect = np.sqrt(s.alpha_bar[t]) * x0 + np.sqrt(1 - s.alpha_bar[t]) * eps
        np.testing.assert_array_equal(out, expect)

    def test_shape_mismatch(self):
        s = sd.make_linear_schedule(10, 1e-3, 1e-2)
        with pytest.raises(DimensionError):
            sd.noise_to_level(np.zeros(4), 2, np.zeros(5), s)

    def test_empirical_variance_matches_schedule(self):
        """Per-coordinate variance over draws equals 1 - alpha_bar[t]."""
        s = sd.make_linear_schedule(60, 1e-3, 3e-2)
        rng = np.random.default_rng(42)
        x0 = rng.standard_normal(4)
        for t in (1, 25, 59):
            draws = np.stack(
                [sd.noise_to_level(x0, t, rng.standard_normal(4), s) for _ in range(10_000)]
            )
            var = draws.var(axis=0)
            np.testing.assert_allclose(var, 1.0 - s.alpha_bar[t], rtol=0.05)
