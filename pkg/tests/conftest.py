"""Shared fixtures: metrics, cached mode operators, small eikonal tables.

The expensive objects (eigendecompositions, phase tables) are built once
per session and shared; mode operators additionally go through a disk
cache in a session tmpdir so repeated builds are cheap.
"""

import numpy as np
import pytest

from conic_dispersion.geometry import ChartMetric2D, WarpedMetric
from conic_dispersion.phase import ThetaDomain, build_eikonal
from conic_dispersion import spectral as sp


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    return str(tmp_path_factory.mktemp("modecache"))


@pytest.fixture(scope="session")
def flat3():
    return WarpedMetric(n=3, family="flat")


@pytest.fixture(scope="session")
def warp3():
    return WarpedMetric(n=3, family="power_perturb", nu=1.0, amplitude=0.3)


@pytest.fixture(scope="session")
def chart_flat():
    return ChartMetric2D(family="flat")


@pytest.fixture(scope="session")
def chart_warp():
    return ChartMetric2D(family="power_perturb", nu=1.0, amplitude=0.3)


@pytest.fixture(scope="session")
def mode_op(cache_dir):
    """Memoized mode-operator builder shared across the whole run."""
    built = {}

    def build(metric, ell, R_max, dr):
        key = (metric.key(), ell, R_max, dr)
        if key not in built:
            built[key] = sp.build_mode_operator(metric, ell, R_max, dr,
                                                cache_dir=cache_dir)
        return built[key]

    return build


@pytest.fixture(scope="session")
def small_table(chart_flat):
    """Coarse flat eikonal table for unit tests (seconds to build)."""
    dom = ThetaDomain(R=10.0, V=(-0.15, 0.15), eps_sep=0.35, I=(1.0, 1.5))
    return build_eikonal(chart_flat, dom, nr=16, ntheta=8, nvartheta=8,
                         r_max=40.0)


def gaussian_state(metric, op, width=1.0, chirp=0.0):
    v = np.sqrt(4 * np.pi) * op.r * np.exp(-op.r ** 2 / (2 * width ** 2))
    if chirp:
        v = v * np.exp(-1j * chirp * op.r ** 2)
    return sp.FieldState(metric, op.r, op.dr, v[None, :].astype(complex))
