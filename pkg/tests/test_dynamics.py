import numpy as np
import pytest

from conic_dispersion import dynamics as dy
from conic_dispersion import spectral as sp
from conic_dispersion.dynamics import LightConeError

from conftest import gaussian_state


def test_propagation_is_unitary(flat3, mode_op):
    op = mode_op(flat3, 0, 200.0, 0.125)
    st = gaussian_state(flat3, op)
    out = dy.propagate([op], st, 3.0)
    assert abs(out.l2_norm() - st.l2_norm()) < 1e-12
    assert out.t == 3.0


def test_propagation_group_law_and_reversal(flat3, mode_op):
    op = mode_op(flat3, 0, 200.0, 0.125)
    st = gaussian_state(flat3, op)
    one = dy.propagate([op], st, 5.0)
    two = dy.propagate([op], dy.propagate([op], st, 2.0), 3.0)
    assert np.max(np.abs(one.coeffs - two.coeffs)) < 1e-12
    back = dy.propagate([op], one, -5.0)
    assert np.max(np.abs(back.coeffs - st.coeffs)) < 1e-12


def test_light_cone_guard(flat3, mode_op):
    op = mode_op(flat3, 0, 200.0, 0.125)
    st = gaussian_state(flat3, op)
    H = dy.max_horizon([op], st)
    assert 0.0 < H < np.inf
    with pytest.raises(LightConeError):
        dy.propagate([op], st, 2.0 * H)
    # the guard can be bypassed explicitly
    dy.propagate([op], st, 2.0 * H, check_cone=False)


def test_support_radius_of_localized_bump(flat3, mode_op):
    op = mode_op(flat3, 0, 200.0, 0.125)
    v = np.exp(-((op.r - 30.0) / 2.0) ** 2)
    st = sp.FieldState(flat3, op.r, op.dr, v[None, :])
    rs = dy.support_radius(st)
    assert 32.0 < rs < 60.0


def test_dispersive_fit_needs_a_decade(flat3, mode_op):
    op = mode_op(flat3, 0, 200.0, 0.125)
    st = gaussian_state(flat3, op)
    with pytest.raises(ValueError):
        dy.dispersive_fit([op], st, np.linspace(2.0, 10.0, 5))


def test_strichartz_rejects_inadmissible_pair(flat3, mode_op):
    op = mode_op(flat3, 0, 200.0, 0.125)
    with pytest.raises(ValueError):
        dy.strichartz_experiment([op], (2.0, 4.0), [sp.DyadicBand(0, "low")],
                                 lambda r: np.exp(-((r - 25.0) / 6.0) ** 2))


def test_nls_zero_data_is_a_fixed_point(flat3, mode_op):
    op = mode_op(flat3, 0, 200.0, 0.1)
    st = sp.FieldState(flat3, op.r, op.dr,
                       np.zeros((1, op.n_nodes), dtype=complex))
    run = dy.nls_picard([op], st, +1, 4.0, tol=1e-12, n_intervals=8)
    assert run.converged
    assert run.n_iterations == 1
    assert run.residual == 0.0


def test_nls_scaling_symmetry(flat3, mode_op):
    # u_lam(t, x) = lam u(lam^2 t, lam x) maps solutions to solutions at the
    # same L2 norm, so the wide/slow run reproduces the narrow/fast ladder
    # shifted by one time-doubling
    op = mode_op(flat3, 0, 200.0, 0.1)
    runs = {}
    for width, T in ((2.0, 32.0), (1.0, 16.0)):
        st = gaussian_state(flat3, op, width=width)
        st.coeffs *= 1e-2 / st.l2_norm()
        runs[width] = dy.scattering_detect(
            dy.nls_picard([op], st, +1, T, tol=1e-10, n_intervals=32))
    wide = runs[2.0]["residuals"]
    narrow = runs[1.0]["residuals"]
    assert np.max(np.abs(wide[:2] - narrow[1:]) / narrow[1:]) < 2e-2


def test_nls_solves_the_equation(flat3, mode_op):
    op = mode_op(flat3, 0, 200.0, 0.1)
    st = gaussian_state(flat3, op)
    st.coeffs *= 1e-2 / st.l2_norm()
    run = dy.nls_picard([op], st, +1, 8.0, tol=1e-12, n_intervals=16)
    assert run.converged
    assert dy.nls_pde_residual(run) < 1e-2
