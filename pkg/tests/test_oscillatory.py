import numpy as np
import pytest

from conic_dispersion.oscillatory import (FioKernelSpec, eval_kernel,
                                          product_amplitude)
from conic_dispersion.phase import ThetaDomain, build_eikonal

RHO_WIN = (1.0, 1.1)
VT_WIN = (-0.12, 0.12)


@pytest.fixture(scope="module")
def table(chart_flat):
    dom = ThetaDomain(R=8.0, V=(-0.1, 0.1), eps_sep=0.3, I=(1.0, 1.21),
                      W=VT_WIN)
    return build_eikonal(chart_flat, dom, nr=32, ntheta=6, nvartheta=16,
                         r_max=40.0)


@pytest.fixture(scope="module")
def spec(table):
    amp = product_amplitude(RHO_WIN, VT_WIN)
    return FioKernelSpec(table=table, table_prime=table, amplitude=amp,
                         h=1.0, rho_window=RHO_WIN)


def test_amplitude_vanishes_outside_windows():
    amp = product_amplitude(RHO_WIN, VT_WIN)
    z = np.zeros(1)
    assert amp(z, z, z, z, np.array([0.9]), z)[0] == 0.0
    assert amp(z, z, z, z, np.array([1.05]), np.array([0.2]))[0] == 0.0
    assert amp(z, z, z, z, np.array([1.05]), z)[0] > 0.0


def test_diagonal_kernel_equals_amplitude_integral(spec):
    # at s = 0 on the diagonal the phase difference cancels exactly, so the
    # kernel reduces to (2 pi h)^{-2} * integral of the amplitude
    v, info = eval_kernel(spec, 0.0, (12.0, 0.0, 12.0, 0.0))
    assert info["converged"]
    amp = spec.amplitude
    rho = np.linspace(RHO_WIN[0] - 0.05, RHO_WIN[1] + 0.05, 2001)
    vt = np.linspace(VT_WIN[0] - 0.05, VT_WIN[1] + 0.05, 2001)
    z = np.zeros(1)
    a_rho = np.array([amp(z, z, z, z, np.array([x]), z)[0] for x in rho])
    a_vt = np.array([amp(z, z, z, z, np.array([1.05]), np.array([x]))[0]
                     for x in vt])
    ref = np.array([amp(z, z, z, z, np.array([1.05]), z)[0]])[0]
    integral = np.trapezoid(a_rho, rho) * np.trapezoid(a_vt, vt) / ref
    expected = integral / (2.0 * np.pi) ** 2
    assert abs(v.imag) < 1e-12
    assert abs(v.real - expected) / expected < 1e-6


def test_kernel_stable_under_node_refinement(spec):
    point = (14.0, 0.02, 11.0, -0.03)
    v1, info = eval_kernel(spec, 0.0, point)
    v2, _ = eval_kernel(spec, 0.0, point, n_rho=2 * info["n_rho"],
                        n_vt=2 * info["n_vt"])
    assert abs(v1 - v2) < 1e-8 * max(1.0, abs(v1))


def test_small_h_costs_more_nodes(table):
    amp = product_amplitude(RHO_WIN, VT_WIN)
    point = (30.0, 0.0, 12.0, 0.0)
    counts = []
    for h in (1.0, 0.25):
        s = FioKernelSpec(table=table, table_prime=table, amplitude=amp,
                          h=h, rho_window=RHO_WIN)
        _, info = eval_kernel(s, 8.0, point)
        counts.append(info["n_rho"])
    assert counts[1] > counts[0]
