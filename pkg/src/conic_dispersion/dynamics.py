"""Schroedinger dynamics on the discrete model: dispersion, Strichartz
norms, and the mass-critical NLS Picard loop.

The linear propagator is exact (eigenphases mode by mode), so every
time-dependent claim reduces to quadrature and norm evaluation.  Horizons
are capped by a Dirichlet light-cone rule: spectral content moving at
speed 2 sqrt(lam) must stay inside 80% of the box, otherwise wall
reflections would contaminate the measurement.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import DecayFit, WarpedMetric, smooth_step
from .spectral import (DyadicBand, FieldState, RadialModeOperator,
                       apply_to_state, lq_norm, spectral_content_max)

__all__ = [
    "LightConeError",
    "StrichartzReport",
    "NlsRun",
    "propagate",
    "support_radius",
    "max_horizon",
    "dispersive_fit",
    "strichartz_experiment",
    "nls_picard",
    "scattering_detect",
]

_CONE_FRACTION = 0.8


class LightConeError(RuntimeError):
    """Requested horizon would let spectral content reach the Dirichlet wall."""


def support_radius(state: FieldState, mass_tol: float = 1e-4) -> float:
    """Smallest radius containing all but a mass_tol fraction of the L2 mass."""
    dens = np.sum(np.abs(state.coeffs) ** 2, axis=0)
    total = float(np.sum(dens))
    if total == 0.0:
        return 0.0
    tail = np.cumsum(dens[::-1])[::-1]
    idx = np.nonzero(tail > mass_tol * total)[0]
    return float(state.r[idx[-1]])


def max_horizon(ops: Sequence[RadialModeOperator], state: FieldState) -> float:
    """Largest T allowed by the light-cone rule for this state."""
    lam_max = spectral_content_max(ops, state)
    r_supp = support_radius(state)
    budget = _CONE_FRACTION * ops[0].R_max - r_supp
    if budget <= 0:
        return 0.0
    return budget / (2.0 * np.sqrt(max(lam_max, 1e-300)))


def propagate(ops: Sequence[RadialModeOperator], state: FieldState, t: float,
              check_cone: bool = True) -> FieldState:
    """Exact e^{-itP} applied mode by mode."""
    if check_cone and t != 0.0:
        T_max = max_horizon(ops, state)
        if abs(t) > T_max:
            raise LightConeError(
                f"|t| = {abs(t):g} exceeds the light-cone horizon {T_max:g} "
                f"for this box (R_max = {ops[0].R_max:g})")
    out = apply_to_state(ops, lambda lam: np.exp(-1j * lam * t), state)
    out.t = state.t + t
    return out


# ---------------------------------------------------------------------------
# dispersive decay

def dispersive_fit(ops: Sequence[RadialModeOperator], state: FieldState,
                   t_values: Sequence[float], band: Optional[DyadicBand] = None,
                   exterior_radius: Optional[float] = None,
                   exterior_margin: float = 4.0) -> DecayFit:
    """Decay exponent of the sup norm along a time ladder.

    Optionally projects the data onto one dyadic band and cuts it off to
    the exterior region r > exterior_radius before evolving.  A window
    shorter than one decade in t raises: the fit would be meaningless.
    """
    t_values = np.asarray(sorted(t_values), dtype=float)
    if t_values[0] <= 0:
        raise ValueError("time ladder must be positive")
    if t_values[-1] / t_values[0] < 10.0:
        raise ValueError("time window spans less than one decade")
    u0 = state.copy()
    if exterior_radius is not None:
        chi = smooth_step((u0.r - exterior_radius) / exterior_margin)
        u0.coeffs = u0.coeffs * chi[None, :]
    # band projection last so the evolved data is exactly band-limited
    if band is not None:
        u0 = apply_to_state(ops, band.cutoff, u0)
    T_max = max_horizon(ops, u0)
    if t_values[-1] > T_max:
        raise LightConeError(
            f"ladder top {t_values[-1]:g} exceeds the horizon {T_max:g}")
    # the exterior estimate cuts off both sides: measure the sup over r > R
    sel = slice(None) if exterior_radius is None \
        else slice(int(np.searchsorted(u0.r, exterior_radius)), None)

    def sup_norm(u: FieldState) -> float:
        rest = FieldState(u.metric, u.r[sel], u.dr, u.coeffs[:, sel], u.t)
        return lq_norm(rest, np.inf)

    sup = np.array([sup_norm(propagate(ops, u0, t, check_cone=False))
                    for t in t_values])
    mask = sup > 0
    if mask.sum() < 3:
        return DecayFit(exponent=0.0, constant=0.0, residual=np.inf,
                        n_samples=int(mask.sum()), identically_zero=True)
    lx, ly = np.log(t_values[mask]), np.log(sup[mask])
    slope, logc = np.polyfit(lx, ly, 1)
    resid = float(np.max(np.abs(ly - (slope * lx + logc))))
    return DecayFit(exponent=float(slope), constant=float(np.exp(logc)),
                    residual=resid, n_samples=int(mask.sum()),
                    identically_zero=False)


# ---------------------------------------------------------------------------
# Strichartz norms

@dataclass
class StrichartzReport:
    p: float
    q: float
    admissibility_residual: float
    bands: list
    ratios: np.ndarray
    horizons: np.ndarray
    half_horizon_ratios: np.ndarray

    @property
    def spread(self) -> float:
        lo = float(np.min(self.ratios))
        if lo <= 0.0:
            return np.inf
        return float(np.max(self.ratios)) / lo

    @property
    def doubling_increment(self) -> float:
        """Largest relative growth from the half-horizon to the full run."""
        half = self.half_horizon_ratios
        if np.min(half) <= 0.0:
            return np.inf
        return float(np.max(self.ratios / half - 1.0))


def _space_time_norm(ops, state, p, q, T, n_t=33):
    """(int_0^T ||u(t)||_q^p dt)^{1/p} by composite Simpson, or sup_t for p=inf."""
    if n_t % 2 == 0:
        n_t += 1
    times = np.linspace(0.0, T, n_t)
    vals = np.array([lq_norm(propagate(ops, state, t, check_cone=False), q)
                     for t in times])
    if not np.isfinite(p):
        return float(np.max(vals))
    h = times[1] - times[0]
    integ = h / 3.0 * (vals[0] ** p + vals[-1] ** p + 4 * np.sum(vals[1:-1:2] ** p)
                       + 2 * np.sum(vals[2:-2:2] ** p))
    return float(integ ** (1.0 / p))


def strichartz_experiment(ops: Sequence[RadialModeOperator], pair: tuple,
                          bands: Sequence[DyadicBand],
                          data: Callable[[np.ndarray], np.ndarray],
                          n_t: int = 33) -> StrichartzReport:
    """Per-band space-time norms of the free evolution, L2-normalized data.

    The horizon of each band is the largest T the light-cone rule allows
    for that band's data; stabilization is probed by re-measuring at T/2.
    Inadmissible (p, q) pairs are rejected.
    """
    p, q = pair
    n = ops[0].metric.n
    resid = (2.0 / p if np.isfinite(p) else 0.0) + n / q - n / 2.0
    if abs(resid) > 1e-12:
        raise ValueError(f"pair {pair} is not admissible: residual {resid:g}")
    op = ops[0]
    raw = FieldState(op.metric, op.r, op.dr, data(op.r)[None, :])
    ratios, horizons, half = [], [], []
    for band in bands:
        u0 = apply_to_state(ops, band.cutoff, raw)
        nrm = u0.l2_norm()
        if nrm == 0:
            raise ValueError(f"band {band} captures none of the data")
        u0.coeffs /= nrm
        T = max_horizon(ops, u0)
        ratios.append(_space_time_norm(ops, u0, p, q, T, n_t))
        half.append(_space_time_norm(ops, u0, p, q, T / 2.0, n_t))
        horizons.append(T)
    return StrichartzReport(p=p, q=q, admissibility_residual=float(resid),
                            bands=list(bands), ratios=np.asarray(ratios),
                            horizons=np.asarray(horizons),
                            half_horizon_ratios=np.asarray(half))


# ---------------------------------------------------------------------------
# NLS Picard loop

@dataclass
class NlsRun:
    sigma: int
    u0_norm: float
    T: float
    n_iterations: int
    converged: bool
    residual: float
    contraction_factors: np.ndarray
    times: np.ndarray
    mode_history: np.ndarray  # (n_times, n_modes, n_nodes) converged iterate
    metric: WarpedMetric
    r: np.ndarray
    dr: float
    ops: Sequence[RadialModeOperator] = field(repr=False, default=())

    def state_at(self, i: int) -> FieldState:
        return FieldState(self.metric, self.r, self.dr, self.mode_history[i],
                          t=self.times[i])


def _nonlinearity(metric: WarpedMetric, r, coeffs: np.ndarray,
                  power: float) -> np.ndarray:
    """|u|^power u evaluated on a de-aliased polar collocation grid.

    Reconstructs u from Liouville-gauge modes, applies the power law
    pointwise, and projects back with Gauss-Legendre exactness (node
    count 1.5x the mode count, rounded up, so the product does not alias
    back into the retained modes).
    """
    n_modes = coeffs.shape[0]
    if n_modes == 1:
        f = metric.f(r)
        u = coeffs[0] / f
        return (np.abs(u) ** power * u * f)[None, :]
    n_polar = int(np.ceil(1.5 * n_modes)) + 8
    x, w = np.polynomial.legendre.leggauss(n_polar)
    Y = np.zeros((n_modes, n_polar))
    for ell in range(n_modes):
        c = np.zeros(ell + 1)
        c[ell] = 1.0
        Y[ell] = np.sqrt((2 * ell + 1) / (4.0 * np.pi)) \
            * np.polynomial.legendre.legval(x, c)
    f = metric.f(r)
    u = (coeffs / f[None, :]).T @ Y
    Nu = np.abs(u) ** power * u
    back = 2.0 * np.pi * (Nu * w[None, :]) @ Y.T  # (n_nodes, n_modes)
    return back.T * f[None, :]


def nls_picard(ops: Sequence[RadialModeOperator], u0: FieldState, sigma: int,
               T: float, tol: float = 1e-10, max_iter: int = 20,
               n_intervals: int = 16) -> NlsRun:
    """Picard iteration for i du/dt - P u = sigma |u|^{4/n} u via Duhamel.

    Works in the interaction picture w(t) = e^{itP} u(t): the Duhamel
    integral becomes a plain primitive of W(s) = e^{isP} N(u(s)), which
    is accumulated per uniform mesh interval from a 4-point collocation
    (the two endpoints plus the two interior Gauss nodes) by exact cubic
    integration.  Divergence (three consecutive contraction factors
    >= 1) stops the loop early.
    """
    if abs(T) > max_horizon(ops, u0):
        raise LightConeError("horizon exceeds the light-cone budget")
    n = u0.metric.n
    power = 4.0 / n
    n_modes = u0.coeffs.shape[0]
    m = u0.r.size
    eigs = np.array([ops[ell].eigenvalues for ell in range(n_modes)])
    Z = [ops[ell].eigenvectors for ell in range(n_modes)]

    mesh = np.linspace(0.0, T, n_intervals + 1)
    h = mesh[1] - mesh[0]
    g1, g2 = 0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)
    # collocation times: endpoints plus interior Gauss nodes, sorted
    times = np.unique(np.concatenate(
        [mesh, (mesh[:-1, None] + h * np.array([g1, g2])[None, :]).ravel()]))
    n_times = times.size

    # precompute c0(t) = mode coefficients of the free part in the
    # interaction picture (constant: e^{itP} e^{-itP} u0 = u0)
    c0 = np.stack([Z[ell].T @ u0.coeffs[ell] for ell in range(n_modes)])

    def interaction_W(cw: np.ndarray, t: float) -> np.ndarray:
        """W(t) = e^{itP} N(e^{-itP} w) in mode coefficients."""
        phase = np.exp(-1j * eigs * t)
        coeffs = np.stack([Z[ell] @ (phase[ell] * cw[ell])
                           for ell in range(n_modes)])
        Nc = _nonlinearity(u0.metric, u0.r, coeffs, power)
        return np.stack([np.conj(phase[ell]) * (Z[ell].T @ Nc[ell])
                         for ell in range(n_modes)])

    # cubic Lagrange integration weights on [0,1] nodes (0, g1, g2, 1),
    # primitives evaluated at g1, g2, 1
    nodes = np.array([0.0, g1, g2, 1.0])
    Vand = np.vander(nodes, 4, increasing=True)
    coeff_to_poly = np.linalg.inv(Vand)  # values -> monomial coefficients

    def primitive_weights(upto: float) -> np.ndarray:
        powers = upto ** np.arange(1, 5) / np.arange(1, 5)
        return powers @ coeff_to_poly

    w_g1 = primitive_weights(g1)
    w_g2 = primitive_weights(g2)
    w_end = primitive_weights(1.0)

    W_shape = (n_times, n_modes, m)
    cw = np.broadcast_to(c0, W_shape).copy()  # iterate 0: free evolution
    factors = []
    prev_diff = None
    residual = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        W = np.empty(W_shape, dtype=complex)
        for i, t in enumerate(times):
            W[i] = interaction_W(cw[i], t)
        new = np.empty_like(cw)
        acc = np.zeros((n_modes, m), dtype=complex)
        for j in range(n_intervals):
            i0 = 3 * j
            block = W[i0:i0 + 4]
            for i_loc, wts in ((1, w_g1), (2, w_g2)):
                new[i0 + i_loc] = c0 + (sigma / 1j) * (
                    acc + h * np.tensordot(wts, block, axes=(0, 0)))
            acc = acc + h * np.tensordot(w_end, block, axes=(0, 0))
            new[i0 + 3] = c0 + (sigma / 1j) * acc
        new[0] = c0
        diff = float(np.max(np.sqrt(np.sum(np.abs(new - cw) ** 2, axis=(1, 2))
                                    * u0.dr)))
        if prev_diff is not None and prev_diff > 0:
            factors.append(diff / prev_diff)
        prev_diff = diff
        cw = new
        residual = diff
        if diff < tol:
            converged = True
            break
        if len(factors) >= 3 and all(f >= 1.0 for f in factors[-3:]):
            break

    # physical-picture history at the collocation times
    history = np.empty(W_shape, dtype=complex)
    for i, t in enumerate(times):
        phase = np.exp(-1j * eigs * t)
        history[i] = np.stack([Z[ell] @ (phase[ell] * cw[i, ell])
                               for ell in range(n_modes)])
    return NlsRun(sigma=sigma, u0_norm=u0.l2_norm(), T=T, n_iterations=it,
                  converged=converged, residual=residual,
                  contraction_factors=np.asarray(factors), times=times,
                  mode_history=history, metric=u0.metric, r=u0.r, dr=u0.dr,
                  ops=tuple(ops))


def nls_pde_residual(run: NlsRun) -> float:
    """Max interior defect of i du/dt - P u - sigma |u|^{4/n} u.

    du/dt by centered differences on the collocation times, P spectrally.
    """
    ops = run.ops
    n_modes = run.mode_history.shape[1]
    power = 4.0 / run.metric.n
    worst = 0.0
    for i in range(1, run.times.size - 1):
        dt_f = run.times[i + 1] - run.times[i]
        dt_b = run.times[i] - run.times[i - 1]
        # nonuniform 3-point first derivative
        du = (run.mode_history[i + 1] * dt_b / (dt_f * (dt_f + dt_b))
              - run.mode_history[i - 1] * dt_f / (dt_b * (dt_f + dt_b))
              + run.mode_history[i] * (dt_f - dt_b) / (dt_f * dt_b))
        u = run.mode_history[i]
        Pu = np.stack([ops[ell].matvec(u[ell]) for ell in range(n_modes)])
        Nu = _nonlinearity(run.metric, run.r, u, power)
        defect = 1j * du - Pu - run.sigma * Nu
        worst = max(worst, float(np.sqrt(np.sum(np.abs(defect) ** 2) * run.dr)))
    return worst


def scattering_detect(run: NlsRun, n_ladder: int = 3) -> dict:
    """Cauchy test for the interaction-picture limit w(t) = e^{itP} u(t).

    Residuals ||w(T/2^{k-1}) - w(T/2^k)|| along a time-doubling ladder;
    scattering shows up as the ladder decreasing toward 0.
    """
    ops = run.ops
    n_modes = run.mode_history.shape[1]

    def w_at(t_target: float) -> np.ndarray:
        i = int(np.argmin(np.abs(run.times - t_target)))
        t = run.times[i]
        u = run.mode_history[i]
        return np.stack([
            np.exp(1j * ops[ell].eigenvalues * t)
            * (ops[ell].eigenvectors.T @ u[ell]) for ell in range(n_modes)])

    t_ladder = [run.T / 2.0 ** k for k in range(n_ladder + 1)]
    ws = [w_at(t) for t in t_ladder]
    residuals = np.array([
        np.sqrt(np.sum(np.abs(ws[k] - ws[k + 1]) ** 2) * run.dr)
        for k in range(n_ladder)])
    decreasing = bool(np.all(residuals[:-1] <= residuals[1:] * (1 + 1e-12)))
    cauchy = bool(np.all(residuals[:-1] <= 0.75 * residuals[1:])) \
        if np.all(residuals > 0) else decreasing
    return {"times": np.asarray(t_ladder), "residuals": residuals,
            "decreasing_toward_T": decreasing, "cauchy": cauchy,
            "u_plus_modes": ws[0]}
