"""Headline checks, one per acceptance criterion.

Each test prints a single pass/fail summary line with the observed value
and the tolerance it was held to.  Expected values come from closed-form
flat-cone oracles or from independently derived asymptotics; nothing here
is tuned to the implementation under test.
"""

import time

import numpy as np
import pytest

from conic_dispersion.flow import (ConicRegion, integrate_flow_batch,
                                   principal_symbol, sample_region,
                                   scattering_map_batch)
from conic_dispersion.geometry import (ChartMetric2D, smooth_step,
                                       symbol_decay_fit, normal_form_step)
from conic_dispersion.oscillatory import (FioKernelSpec,
                                          angular_separation_scan,
                                          dispersive_scan, eval_kernel,
                                          nonstationary_scan,
                                          product_amplitude)
from conic_dispersion.phase import (ThetaDomain, build_eikonal,
                                    check_eikonal_expansions, solve_transport,
                                    transport_b, transport_b_decay_fits)
from conic_dispersion import dynamics as dy
from conic_dispersion import spectral as sp

from conftest import gaussian_state


REGION = ConicRegion("strongly_outgoing", R=10.0, V=(-0.3, 0.3), I=(0.5, 2.0),
                     sigma_or_eps=0.3)


def report(name, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"{name}: {detail}"


def flat_line(y0, s):
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


@pytest.fixture(scope="module")
def flat_table(chart_flat):
    dom = ThetaDomain(R=10.0, V=(-0.15, 0.15), eps_sep=0.35, I=(1.0, 1.5))
    return build_eikonal(chart_flat, dom, nr=40, ntheta=20, nvartheta=20,
                         r_max=40.0)


@pytest.fixture(scope="module")
def broken_parity_table():
    # angular perturbation off the symmetry axis, so no coefficient family
    # vanishes identically
    metric = ChartMetric2D(family="power_perturb", nu=1.0, amplitude=0.3,
                           ang_amp=0.5)
    dom = ThetaDomain(R=10.0, V=(0.55, 0.85), eps_sep=0.35, I=(1.0, 1.5))
    return metric, build_eikonal(metric, dom, nr=24, ntheta=10, nvartheta=10,
                                 r_max=300.0, log_r=True)


def osc_table(metric):
    dom = ThetaDomain(R=8.0, V=(-0.1, 0.1), eps_sep=0.3, I=(1.0, 1.21),
                      W=(-0.12, 0.12))
    return build_eikonal(metric, dom, nr=96, ntheta=6, nvartheta=40,
                         r_max=700.0, log_r=True)


# --------------------------------------------------------------------------
# 1. flat-cone flow oracle

def test_flow_matches_flat_cone_oracle(chart_flat):
    rng = np.random.Generator(np.random.Philox(1))
    y0 = sample_region(REGION, chart_flat, 1000, rng)
    t0 = time.perf_counter()
    y1, _, _ = integrate_flow_batch(chart_flat, y0, 40.0)
    elapsed = time.perf_counter() - t0
    oracle = flat_line(y0, 40.0)
    err = float(np.max(np.abs(y1 - oracle) / np.maximum(np.abs(oracle), 1.0)))
    report("flow flat-cone oracle",
           err <= 1e-8 and elapsed < 5.0,
           f"max rel err {err:.2e} (tol 1e-8), {elapsed:.2f} s (< 5 s)")


# --------------------------------------------------------------------------
# 2. scattering-map oracle and the invariant radial line

def test_scattering_map_flat_oracle(chart_flat):
    rng = np.random.Generator(np.random.Philox(2))
    y0 = sample_region(REGION, chart_flat, 32, rng)
    w, _, _ = scattering_map_batch(chart_flat, y0)
    # straight-line asymptotics: (x0 . xi / |xi|, arg xi, |xi|, eta)
    r, th, rho, eta = y0
    xi = np.stack([rho * np.cos(th) - (eta / r) * np.sin(th),
                   rho * np.sin(th) + (eta / r) * np.cos(th)])
    norm = np.hypot(xi[0], xi[1])
    oracle = np.vstack([(r * np.cos(th) * xi[0] + r * np.sin(th) * xi[1]) / norm,
                        np.arctan2(xi[1], xi[0]), norm, eta])
    err = float(np.max(np.abs(w - oracle)))

    y_rad = y0.copy()
    y_rad[3] = 0.0
    y_rad[2] = np.sqrt(principal_symbol(chart_flat, y_rad))
    w_rad, _, _ = scattering_map_batch(chart_flat, y_rad, n_doublings=4)
    radial_fixed = bool(np.array_equal(w_rad[1:], y_rad[1:])
                        and np.max(np.abs(w_rad[0] - y_rad[0])) <= 1e-10)
    report("scattering-map flat oracle",
           err <= 1e-6 and radial_fixed,
           f"max dev {err:.2e} (tol 1e-6), radial line fixed: {radial_fixed}")


# --------------------------------------------------------------------------
# 3. eikonal oracle and residuals

def test_eikonal_oracle_and_residuals(flat_table, broken_parity_table,
                                      chart_warp):
    tab = flat_table
    R, T, V = np.meshgrid(tab.r, tab.theta, tab.vartheta, indexing="ij")
    psi_err = float(np.max(np.abs(tab.psi - R * np.cos(T - V))))
    hj = max(tab.hj_residual, broken_parity_table[1].hj_residual)
    gauge = tab.gauge_residual
    report("eikonal flat-cone phase",
           psi_err <= 1e-5 and hj <= 1e-6 and gauge <= 1e-5,
           f"max psi err {psi_err:.2e} (tol 1e-5), "
           f"worst HJ residual {hj:.2e} (tol 1e-6), "
           f"generating-function residual {gauge:.2e} (tol 1e-5)")


# --------------------------------------------------------------------------
# 4. expansion orders of the phase and its gradients

def test_expansion_orders(broken_parity_table):
    _, tab = broken_parity_table
    fits = check_eikonal_expansions(tab)
    cone, corr = fits["cone"], fits["correction"]
    # attained orders, each within 0.15 of the asymptotic prediction
    attained = {
        "cone psi_quad": (cone["psi_quad"].exponent, 1.0),
        "cone dpsi_r_quad": (cone["dpsi_r_quad"].exponent, 0.0),
        "cone dpsi_theta_lin": (cone["dpsi_theta_lin"].exponent, 1.0),
        "cone dpsi_vartheta_lin": (cone["dpsi_vartheta_lin"].exponent, 1.0),
        "corr psi_quad": (corr["psi_quad"].exponent, 0.0),
        "corr psi_lin": (corr["psi_lin"].exponent, 0.0),
        "corr dpsi_theta_lin": (corr["dpsi_theta_lin"].exponent, 0.0),
        "corr dpsi_vartheta_lin": (corr["dpsi_vartheta_lin"].exponent, 0.0),
    }
    worst = max(abs(got - want) for got, want in attained.values())
    # the radial correction term carries an extra cancellation at nu = 1;
    # its symbol estimate is an upper bound, so the fit must only decay at
    # least that fast
    bound_ok = corr["dpsi_r_quad"].exponent <= -1.0 + 0.15
    report("phase expansion orders",
           worst <= 0.15 and bound_ok,
           f"worst attained-order dev {worst:.3f} (tol 0.15), "
           f"radial correction order {corr['dpsi_r_quad'].exponent:.2f} "
           f"<= -0.85")


# --------------------------------------------------------------------------
# 5. transport amplitude

def test_transport_amplitude(chart_flat, flat_table):
    out = solve_transport(chart_flat, flat_table, 20.0, 0.0)
    dev = abs(out.value - 1.0)
    r = np.geomspace(10.0, 100.0, 8)
    b = transport_b(chart_flat, r, 0.0 * r, 0.0 * r + 0.03, np.sqrt(1.25), n=2)
    b_flat = float(np.max(np.abs(b)))

    # two-term decay structure, resolved away from the nu = 1 cancellation:
    # the diagonal term attains its order, the angular companion is an
    # order bound (the observed coefficient decays faster)
    metric = ChartMetric2D(family="power_perturb", nu=0.5, amplitude=0.3)
    fits = transport_b_decay_fits(metric, np.sqrt(1.25))
    diag_dev = abs(fits["diagonal_fit"].exponent + 1.5)
    ang_ok = fits["angular_fit"].exponent <= -1.0 + 0.2
    report("transport amplitude",
           dev <= 1e-8 and b_flat <= 1e-10 and diag_dev <= 0.2 and ang_ok,
           f"flat |a0-1| {dev:.2e} (tol 1e-8), flat |b| {b_flat:.2e}, "
           f"diagonal-order dev {diag_dev:.3f} (tol 0.2), angular order "
           f"{fits['angular_fit'].exponent:.2f} (<= -0.8)")


def test_transport_cancellation_at_critical_rate():
    # at nu = 1 the leading diagonal term cancels and b decays a full order
    # faster than the generic prediction
    metric = ChartMetric2D(family="power_perturb", nu=1.0, amplitude=0.3)
    fits = transport_b_decay_fits(metric, np.sqrt(1.25))
    assert fits["diagonal_fit"].exponent <= -2.5


# --------------------------------------------------------------------------
# 6. oscillatory-integral dispersion

def test_oscillatory_dispersion(chart_flat, chart_warp):
    t0 = time.perf_counter()
    amp = product_amplitude((1.0, 1.1), (-0.12, 0.12))
    rho_c = 1.05
    results = {}
    for label, metric in (("flat", chart_flat), ("warped", chart_warp)):
        tab = osc_table(metric)
        assert tab.hj_residual < 1e-6

        def spec_for_h(h, tab=tab):
            return FioKernelSpec(table=tab, table_prime=tab, amplitude=amp,
                                 h=h, rho_window=(1.0, 1.1))

        def points_for_s(s, spec):
            return [(rp + 2 * s * rho_c, 0.0, rp, 0.0)
                    for rp in (10.0, 14.0) if rp + 2 * s * rho_c < 680.0]

        rep = dispersive_scan(spec_for_h, [2.0 ** -4, 2.0 ** -5, 2.0 ** -6],
                              [24.0, 48.0, 96.0, 192.0], points_for_s,
                              hs_min_for_fit=1.5)
        results[label] = rep["hs_exponent"]
        if label == "flat":
            flat_spec_for_h = spec_for_h

    # non-stationary configurations: super-polynomial decay in h and in the
    # separation from the reachable shell (fit order <= -3 in both)
    shell = 10.0 + 2 * 5.0 * 1.1
    ns = nonstationary_scan(flat_spec_for_h,
                            [2.0 ** -4, 2.0 ** -5, 2.0 ** -6], 5.0,
                            lambda scale: (scale * shell, 0.0, 10.0, 0.0),
                            [4.0, 8.0, 16.0, 30.0])
    ang = angular_separation_scan(flat_spec_for_h(2.0 ** -5), 0.5,
                                  [0.5, 1.0, 2.0, 4.0, 8.0],
                                  (60.0, 0.0, 60.0, 0.0))
    elapsed = time.perf_counter() - t0
    dev = max(abs(results["flat"] + 1.0), abs(results["warped"] + 1.0))
    ok = (dev <= 0.15 and ns["h_exponent"] <= -3.0
          and ns["spatial_exponent"] <= -3.0 and ang["exponent"] <= -3.0
          and elapsed < 600.0)
    report("oscillatory dispersion", ok,
           f"hs-exponents {results['flat']:.3f}/{results['warped']:.3f} "
           f"(-1 +/- 0.15), nonstationary h/space/angle orders "
           f"{ns['h_exponent']:.2f}/{ns['spatial_exponent']:.2f}/"
           f"{ang['exponent']:.2f} (<= -3), {elapsed:.0f} s (< 600 s)")


# --------------------------------------------------------------------------
# 7. spectral oracles

def test_spectral_eigenvalue_oracles(flat3, mode_op):
    op = mode_op(flat3, 0, 40.0, 0.02)
    k = np.arange(1, 21)
    exact = (k * np.pi / 40.0) ** 2
    rel0 = float(np.max(np.abs(op.eigenvalues[:20] - exact) / exact))

    op1 = mode_op(flat3, 1, 40.0, 0.02)
    zeros_j1 = np.array([4.493409457909064, 7.725251836937707])
    exact1 = (zeros_j1 / 40.0) ** 2
    rel1 = float(np.max(np.abs(op1.eigenvalues[:2] - exact1) / exact1))

    coarse = mode_op(flat3, 0, 40.0, 0.04)
    e_c = abs(coarse.eigenvalues[0] - exact[0])
    e_f = abs(op.eigenvalues[0] - exact[0])
    order = float(np.log2(e_c / e_f))
    report("spectral eigenvalue oracles",
           rel0 <= 1e-3 and rel1 <= 5e-3 and order >= 1.8,
           f"l=0 rel err {rel0:.2e} (tol 1e-3), l=1 rel err {rel1:.2e} "
           f"(tol 5e-3), halving order {order:.2f} (>= 1.8)")


# --------------------------------------------------------------------------
# 8. dyadic band calculus

def test_band_decomposition(flat3, mode_op):
    rng = np.random.Generator(np.random.Philox(8))
    lam = np.concatenate([rng.uniform(0.05, 50.0, 50), [0.3, 5.0]])
    rec = max(float(np.max(sp.lp_reconstruct(lam, "low"))),
              float(np.max(sp.lp_reconstruct(lam, "high"))))

    ops = [mode_op(flat3, l, 40.0, 0.05) for l in range(3)]
    op = ops[0]
    v = rng.standard_normal(op.n_nodes)
    v /= np.linalg.norm(v)
    ortho = 0.0
    for j, l in ((0, 3), (1, 4), (0, 5)):
        bj, bl = sp.DyadicBand(j, "low"), sp.DyadicBand(l, "low")
        out = sp.apply_spectral_function(
            op, bj.cutoff, sp.apply_spectral_function(op, bl.cutoff, v))
        ortho = max(ortho, float(np.linalg.norm(out)))

    bands = [sp.DyadicBand(l, "low") for l in range(6)]
    ratios = []
    for _ in range(20):
        coeffs = (rng.standard_normal((3, op.n_nodes))
                  * np.exp(-((op.r - rng.uniform(5, 25))
                             / rng.uniform(2, 6)) ** 2))
        state = sp.FieldState(flat3, op.r, op.dr, coeffs)
        ratios.append(sp.lp_inequality_probe(ops, state, 6.0, bands)["ratio"])
    worst = float(np.max(ratios))
    report("dyadic band calculus",
           rec == 0.0 and ortho <= 1e-10 and worst <= 10.0,
           f"telescoping residual {rec:.1e} (exact), quasi-orthogonality "
           f"{ortho:.1e} (tol 1e-10), largest norm ratio {worst:.2f} "
           f"(<= 10, empirical constant recorded)")


# --------------------------------------------------------------------------
# 9. weighted resolvent plateau and local smoothing

def test_resolvent_and_smoothing(flat3, mode_op):
    ops = [mode_op(flat3, l, 80.0, 0.05) for l in (0, 1)]
    levels, plateaus = [], []
    for lam in (0.1, 0.3, 0.5, 0.7, 0.9):
        res = sp.resolvent_probe(ops, lam)
        levels.append(res["level"])
        plateaus.append(res["plateau"])
    levels = np.array(levels)
    res_spread = float(levels.max() / levels.min())

    sm_ops = [mode_op(flat3, 0, 60.0, 0.075)]
    op = sm_ops[0]
    v = np.exp(-((op.r - 8.0) ** 2)) * (1 + 0.3 * np.cos(op.r))
    st = sp.FieldState(flat3, op.r, op.dr, v[None, :])
    vals = {}
    for ell in (0, 2, 4):  # eps = 1, 1/2, 1/4
        band = sp.DyadicBand(ell, "low")
        vals[ell] = [sp.smoothing_probe(sm_ops, band, st, T)
                     for T in (10.0, 20.0)]
    sm_spread = max(max(v) for v in vals.values()) \
        / min(min(v) for v in vals.values())
    doubling = max(v[1] / v[0] for v in vals.values())
    ok = (all(plateaus) and res_spread < 3.0 and sm_spread < 3.0
          and doubling < 1.5)
    report("resolvent plateau and smoothing", ok,
           f"plateaus at 5 energies, level spread {res_spread:.2f} (< 3), "
           f"smoothing spread {sm_spread:.2f} (< 3), worst T-doubling "
           f"growth {doubling:.2f} (< 1.5)")


# --------------------------------------------------------------------------
# 10. dispersive decay of the free evolution

def test_dispersive_decay(flat3, warp3, mode_op):
    op = mode_op(flat3, 0, 80.0, 0.05)
    st = gaussian_state(flat3, op)
    worst = 0.0
    for t in (0.0, 0.5, 1.0, 2.0, 3.0, 5.0):
        sup = sp.lq_norm(dy.propagate([op], st, t), np.inf)
        exact = (1.0 + 4.0 * t ** 2) ** -0.75
        worst = max(worst, abs(sup - exact) / exact)

    band = sp.DyadicBand(2, "low")
    exponents = {}
    for label, metric in (("warped", warp3), ("flat", flat3)):
        opb = mode_op(metric, 0, 500.0, 0.25)
        bump = np.exp(-((opb.r - 20.0) / 4.0) ** 2)
        stb = sp.FieldState(metric, opb.r, opb.dr, bump[None, :])
        chi = stb.copy()
        chi.coeffs = chi.coeffs * smooth_step((opb.r - 10.0) / 4.0)
        u0b = sp.apply_to_state([opb], band.cutoff, chi)
        H = dy.max_horizon([opb], u0b)
        top = 0.98 * H
        bot = max(4.0 * band.scale ** -2, top / 12.0)
        fit = dy.dispersive_fit([opb], stb, np.geomspace(bot, top, 9),
                                band=band, exterior_radius=10.0)
        exponents[label] = fit.exponent
    ok = (worst <= 0.01 and exponents["warped"] <= -1.3
          and exponents["flat"] <= -1.3)
    report("dispersive decay", ok,
           f"Gaussian sup-norm err {worst:.2e} (tol 1e-2), exterior band "
           f"exponents {exponents['warped']:.2f}/{exponents['flat']:.2f} "
           f"(<= -1.3, target -1.5)")


# --------------------------------------------------------------------------
# 11. Strichartz ratios across nine dyadic bands

def test_strichartz_bands(flat3, warp3, mode_op):
    pair = (2.0, 6.0)
    fine = [sp.DyadicBand(l, "low") for l in range(0, 5)]
    coarse = [sp.DyadicBand(l, "low") for l in range(5, 9)]
    summary = {}
    for label, metric in (("flat", flat3), ("warped", warp3)):
        op_f = mode_op(metric, 0, 500.0, 0.25)
        rep_f = dy.strichartz_experiment(
            [op_f], pair, fine,
            lambda r: np.exp(-((r - 25.0) / 6.0) ** 2), n_t=129)
        op_c = mode_op(metric, 0, 4000.0, 2.0)
        rep_c = dy.strichartz_experiment(
            [op_c], pair, coarse,
            lambda r: np.exp(-((r - 100.0) / 24.0) ** 2), n_t=129)
        ratios = np.concatenate([rep_f.ratios, rep_c.ratios])
        summary[label] = (float(ratios.max() / ratios.min()),
                          max(rep_f.doubling_increment,
                              rep_c.doubling_increment))
    ok = all(spread <= 5.0 and incr < 0.05
             for spread, incr in summary.values())
    report("strichartz band uniformity", ok,
           "; ".join(f"{k}: 9-band spread {s:.2f} (<= 5), T-doubling "
                     f"increment {i * 100:.1f}% (< 5%)"
                     for k, (s, i) in summary.items()))


# --------------------------------------------------------------------------
# 12. small-data NLS: contraction, conservation, scattering

def test_nls_contraction_and_scattering(flat3, mode_op):
    op = mode_op(flat3, 0, 200.0, 0.1)
    tol = 1e-10

    st = gaussian_state(flat3, op)
    st.coeffs *= 1e-2 / st.l2_norm()
    run = dy.nls_picard([op], st, +1, 8.0, tol=tol, n_intervals=16)
    masses = [np.sqrt(np.sum(np.abs(run.mode_history[i]) ** 2) * run.dr)
              for i in range(0, run.times.size, 12)]
    drift = max(abs(m - masses[0]) for m in masses)

    sizes = [1e-2, 5e-3, 2.5e-3]
    factors = []
    for size in sizes:
        s0 = gaussian_state(flat3, op)
        s0.coeffs *= size / s0.l2_norm()
        factors.append(dy.nls_picard([op], s0, +1, 8.0, tol=1e-13,
                                     n_intervals=16).contraction_factors[0])
    slope = float(np.polyfit(np.log(sizes), np.log(factors), 1)[0])

    # quadratic chirp shifts the time origin off the symmetry point, so the
    # nonlinearity decays strictly faster than the doubling rate
    sc = gaussian_state(flat3, op, chirp=0.5)
    sc.coeffs *= 1e-2 / sc.l2_norm()
    T = min(16.0, 0.95 * dy.max_horizon([op], sc))
    run_c = dy.nls_picard([op], sc, +1, T, tol=tol, n_intervals=32)
    det = dy.scattering_detect(run_c)
    res = det["residuals"]
    ladder = float(np.min(res[1:] / res[:-1]))
    ok = (run.converged and run.n_iterations <= 12 and drift <= 10 * tol
          and abs(slope - 4.0 / 3.0) <= 0.2 and det["decreasing_toward_T"]
          and ladder >= 2.0)
    report("small-data NLS", ok,
           f"{run.n_iterations} Picard iterations (<= 12), mass drift "
           f"{drift:.1e} (tol {10 * tol:.0e}), contraction exponent "
           f"{slope:.3f} (4/3 +/- 0.2), scattering ladder ratio "
           f"{ladder:.2f} (>= 2)")


# --------------------------------------------------------------------------
# 13. normal-form decay improvement

def test_normal_form_improves_decay():
    A = lambda x: 1.0 + 0.2 / np.sqrt(1.0 + x ** 2)
    grid = np.geomspace(300.0, 2e4, 48)
    before = symbol_decay_fit(grid, np.abs(A(grid) - 1.0))
    _, _, fit = normal_form_step(A, 1.0, 1.0, fit_grid=grid)
    ok = abs(before.exponent + 1.0) <= 0.05 and fit.exponent <= -1.8
    report("normal-form step", ok,
           f"decay exponent {before.exponent:.2f} -> {fit.exponent:.2f} "
           f"(<= -1.8)")
