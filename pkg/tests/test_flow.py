import numpy as np
import pytest

from conic_dispersion.flow import (ConicRegion, PhasePoint, integrate_flow,
                                   integrate_flow_batch, principal_symbol,
                                   region_contains, sample_region,
                                   scattering_map_batch,
                                   verify_flow_lower_bound)


REGION = ConicRegion("strongly_outgoing", R=10.0, V=(-0.3, 0.3), I=(0.5, 2.0),
                     sigma_or_eps=0.3)


def flat_line(y0, s):
    """Straight-line motion of the flat cone, written in Cartesian form."""
    r, th, rho, eta = y0
    x = np.stack([r * np.cos(th), r * np.sin(th)])
    v = 2.0 * np.stack([rho * np.cos(th) - (eta / r) * np.sin(th),
                        rho * np.sin(th) + (eta / r) * np.cos(th)])
    xs = x + s * v
    rn = np.hypot(xs[0], xs[1])
    tn = np.arctan2(xs[1], xs[0])
    rho_n = 0.5 * (v[0] * np.cos(tn) + v[1] * np.sin(tn))
    eta_n = 0.5 * rn * (-v[0] * np.sin(tn) + v[1] * np.cos(tn))
    return np.vstack([rn, tn, rho_n, eta_n])


def test_single_point_flow_matches_straight_line(chart_flat):
    pt = PhasePoint(r=15.0, theta=0.1, rho=1.1, eta=0.4)
    out = integrate_flow(chart_flat, pt, 25.0)
    oracle = flat_line(np.array([[15.0], [0.1], [1.1], [0.4]]), 25.0)[:, 0]
    got = np.array([out.r, out.theta, out.rho, out.eta])
    assert np.max(np.abs(got - oracle) / np.maximum(np.abs(oracle), 1.0)) < 1e-9


def test_sampled_points_lie_in_region(chart_flat):
    rng = np.random.Generator(np.random.Philox(5))
    y0 = sample_region(REGION, chart_flat, 32, rng)
    assert y0.shape == (4, 32)
    for i in range(32):
        pt = PhasePoint(*y0[:, i])
        assert region_contains(REGION, chart_flat, pt)


def test_energy_conserved_on_warped_chart(chart_warp):
    rng = np.random.Generator(np.random.Philox(6))
    y0 = sample_region(REGION, chart_warp, 16, rng)
    y1, _, _ = integrate_flow_batch(chart_warp, y0, 40.0)
    p0 = principal_symbol(chart_warp, y0)
    p1 = principal_symbol(chart_warp, y1)
    assert np.max(np.abs(p1 - p0) / p0) < 1e-7


def test_flow_group_property(chart_warp):
    rng = np.random.Generator(np.random.Philox(7))
    y0 = sample_region(REGION, chart_warp, 8, rng)
    one, _, _ = integrate_flow_batch(chart_warp, y0, 30.0)
    half, _, _ = integrate_flow_batch(chart_warp, y0, 12.0)
    two, _, _ = integrate_flow_batch(chart_warp, half, 18.0)
    assert np.max(np.abs(one - two) / np.maximum(np.abs(one), 1.0)) < 1e-8


def test_scattering_extrapolation_converges(chart_warp):
    rng = np.random.Generator(np.random.Philox(8))
    y0 = sample_region(REGION, chart_warp, 8, rng)
    w8, err8, _ = scattering_map_batch(chart_warp, y0, n_doublings=8)
    w9, _, _ = scattering_map_batch(chart_warp, y0, n_doublings=9)
    assert np.max(err8) < 1e-6
    assert np.max(np.abs(w9 - w8)) < 1e-6


def test_angular_momentum_preserved_by_scattering(chart_flat):
    rng = np.random.Generator(np.random.Philox(9))
    y0 = sample_region(REGION, chart_flat, 16, rng)
    w, _, _ = scattering_map_batch(chart_flat, y0)
    assert np.max(np.abs(w[3] - y0[3])) < 1e-8


def test_flow_lower_bound_certificate(chart_flat):
    out = verify_flow_lower_bound(chart_flat, REGION, sample_count=12,
                                  s_max=100.0)
    assert out["passed"]
    assert out["c_observed"] > 0.0
