import numpy as np
import pytest

from conic_dispersion.geometry import (ChartMetric2D, WarpedMetric,
                                       normal_form_step, smooth_bump,
                                       smooth_step, symbol_decay_fit)


def test_smooth_step_clamps_and_is_monotone():
    x = np.linspace(-1.0, 2.0, 301)
    y = smooth_step(x)
    assert np.all(y[x <= 0.0] == 0.0)
    assert np.all(y[x >= 1.0] == 1.0)
    assert np.all(np.diff(y) >= 0.0)
    assert np.all((y >= 0.0) & (y <= 1.0))


def test_smooth_bump_support():
    # rise and fall each occupy a quarter of [1, 3]
    x = np.linspace(0.0, 4.0, 401)
    y = smooth_bump(x, 1.0, 3.0)
    assert np.all(y[(x >= 1.5) & (x <= 2.5)] == 1.0)
    assert np.all(y[x <= 1.0] == 0.0)
    assert np.all(y[x >= 3.0] == 0.0)
    assert np.all((y >= 0.0) & (y <= 1.0))


def test_flat_warped_metric_is_exact_cone():
    m = WarpedMetric(n=3, family="flat")
    r = np.linspace(0.5, 100.0, 50)
    assert np.allclose(m.f(r), r, rtol=0, atol=0)
    assert np.allclose(m.df(r), 1.0, rtol=0, atol=0)
    assert np.allclose(m.d2f(r), 0.0, rtol=0, atol=0)


def test_perturbed_metric_approaches_cone():
    m = WarpedMetric(n=3, family="power_perturb", nu=1.0, amplitude=0.3)
    r = np.geomspace(50.0, 5e4, 40)
    rel = m.f(r) / r - 1.0
    # f/r - 1 ~ amplitude * r^{-nu}
    fit = symbol_decay_fit(r, np.abs(rel))
    assert abs(fit.exponent + 1.0) < 0.05
    assert abs(fit.constant - 0.3) / 0.3 < 0.1


def test_metric_key_distinguishes_parameters():
    a = WarpedMetric(n=3, family="power_perturb", nu=1.0, amplitude=0.3)
    b = WarpedMetric(n=3, family="power_perturb", nu=0.5, amplitude=0.3)
    assert a.key() == WarpedMetric(n=3, family="power_perturb", nu=1.0,
                                   amplitude=0.3).key()
    assert a.key() != b.key()
    assert a.key() != WarpedMetric(n=3, family="flat").key()


def test_chart_metric_flat_symbol_weight():
    m = ChartMetric2D(family="flat")
    theta = np.linspace(-0.3, 0.3, 7)
    assert np.allclose(m.g(np.full_like(theta, 0.2), theta), 1.0)


def test_symbol_decay_fit_recovers_power_law():
    x = np.geomspace(10.0, 1e4, 30)
    fit = symbol_decay_fit(x, 3.0 * x ** -2.0)
    assert abs(fit.exponent + 2.0) < 1e-10
    assert abs(fit.constant - 3.0) < 1e-9
    assert fit.residual < 1e-10
    assert not fit.identically_zero


def test_symbol_decay_fit_flags_zero_input():
    x = np.geomspace(10.0, 1e4, 30)
    fit = symbol_decay_fit(x, np.zeros_like(x))
    assert fit.identically_zero


def test_normal_form_step_improves_decay():
    A = lambda x: 1.0 + 0.2 / np.sqrt(1.0 + x ** 2)
    sigma, A_next, fit = normal_form_step(A, 1.0, 1.0)
    x = np.geomspace(50.0, 1e4, 30)
    before = symbol_decay_fit(x, np.abs(A(x) - 1.0))
    assert fit.exponent < before.exponent - 0.5
    assert np.max(np.abs(A_next(x) - 1.0)) < np.max(np.abs(A(x) - 1.0))


def test_normal_form_step_rejects_bad_radius():
    with pytest.raises(ValueError):
        normal_form_step(lambda x: np.ones_like(x), 1.0, 0.0)
