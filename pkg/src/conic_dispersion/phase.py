"""Eikonal phase tables, transport amplitudes, and the finite-time WKB phase.

The phase phi(r, theta, varrho, vartheta) = varrho * psi(r, theta, vartheta)
generates the graph of the classical scattering map: its gradient in
(r, theta) is the unique momentum (rho, eta) whose trajectory has asymptotic
momentum varrho and asymptotic angle vartheta.  psi is built on a tensor
grid by Newton inversion of that correspondence at every node, followed by
line integration of the closed 1-form (rho dr + eta dtheta - eta_bar
dvartheta) / varrho from an anchor on the diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .flow import (_richardson, integrate_flow_batch, principal_symbol,
                   scattering_map_batch)
from .geometry import ChartMetric2D, DecayFit, symbol_decay_fit

__all__ = [
    "ThetaDomain",
    "EikonalTable",
    "TransportAmplitude",
    "invert_lagrangian",
    "build_eikonal",
    "save_table",
    "load_table",
    "check_eikonal_expansions",
    "characteristic",
    "transport_b",
    "transport_b_decay_fits",
    "solve_transport",
    "wkb_phase",
]


@dataclass(frozen=True)
class ThetaDomain:
    """Angular domain for the eikonal: r > R, theta in V, |theta - vartheta| < eps_sep.

    ``W`` is the vartheta window (defaults to V); ``I`` the energy window for
    varrho^2; sign +1 for the outgoing branch, -1 for the incoming one.
    """

    R: float
    V: Tuple[float, float]
    eps_sep: float
    I: Tuple[float, float] = (0.5, 2.0)
    sign: int = +1
    W: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.R <= 0 or self.eps_sep <= 0:
            raise ValueError("R and eps_sep must be positive")
        if not (self.I[0] > 0 and self.I[1] > self.I[0]):
            raise ValueError("energy interval must satisfy 0 < I_min < I_max")
        if self.sign not in (+1, -1):
            raise ValueError("sign must be +1 or -1")
        if self.W is None:
            object.__setattr__(self, "W", self.V)
        sep = max(abs(self.V[0] - self.W[1]), abs(self.V[1] - self.W[0]))
        if sep > self.eps_sep:
            raise ValueError(
                f"angular windows violate the separation bound: max|theta-vartheta| = "
                f"{sep:g} > eps_sep = {self.eps_sep:g}")


# ---------------------------------------------------------------------------
# quadrature helper: cumulative integral by local quadratics (Simpson-grade,
# valid on non-uniform grids)

def _triple_integral(xa, xb, xc, ya, yb, yc, u, v):
    def seg(p, q, den):
        F = lambda t: t**3 / 3.0 - (p + q) * t**2 / 2.0 + p * q * t
        return (F(v) - F(u)) / den
    return (ya * seg(xb, xc, (xa - xb) * (xa - xc))
            + yb * seg(xa, xc, (xb - xa) * (xb - xc))
            + yc * seg(xa, xb, (xc - xa) * (xc - xb)))


def cumulative_quadratic(y: np.ndarray, x: np.ndarray, start: int, axis: int = -1):
    """Cumulative integral of samples y(x) from x[start], along ``axis``.

    Each interval is integrated with the quadratic through its three nearest
    nodes (averaging the two one-sided choices in the interior), so the
    scheme is Simpson-grade on non-uniform grids.
    """
    y = np.moveaxis(np.asarray(y, dtype=float), axis, -1)
    n = x.size
    if y.shape[-1] != n:
        raise ValueError("length mismatch between samples and abscissae")
    T = np.zeros(y.shape[:-1] + (n - 1,))
    for i in range(n - 1):
        u, v = x[i], x[i + 1]
        parts = []
        if i - 1 >= 0:
            parts.append(_triple_integral(x[i - 1], x[i], x[i + 1],
                                          y[..., i - 1], y[..., i], y[..., i + 1], u, v))
        if i + 2 <= n - 1:
            parts.append(_triple_integral(x[i], x[i + 1], x[i + 2],
                                          y[..., i], y[..., i + 1], y[..., i + 2], u, v))
        T[..., i] = sum(parts) / len(parts)
    out = np.zeros_like(y)
    for i in range(start + 1, n):
        out[..., i] = out[..., i - 1] + T[..., i - 1]
    for i in range(start - 1, -1, -1):
        out[..., i] = out[..., i + 1] - T[..., i]
    return np.moveaxis(out, -1, axis)


# ---------------------------------------------------------------------------
# Lagrangian inversion

def _invert_batch(metric: ChartMetric2D, r, th, varrho, vt, tol: float = 1e-10,
                  n_doublings: int = 8, eps_scale: float = 1.0, max_iter: int = 15):
    """Solve (rho, eta) -> (rho_bar, theta_bar) = (varrho, vt) at many nodes.

    All inputs broadcast to a common 1-d shape; ``varrho`` may be scalar.
    Returns (rho, eta, w, resid) where w holds the full asymptotic data of
    the solution and resid the final scaled Newton residual per node.
    """
    r, th, vt = np.broadcast_arrays(np.atleast_1d(r).astype(float),
                                    np.atleast_1d(th).astype(float),
                                    np.atleast_1d(vt).astype(float))
    m = r.size
    r, th, vt = r.ravel(), th.ravel(), vt.ravel()
    vr = np.broadcast_to(np.atleast_1d(varrho).astype(float), (m,)).ravel()
    direction = 1.0 if vr.flat[0] > 0 else -1.0

    rho = vr.copy()
    eta = r * vr * (vt - th)
    scale = np.abs(vr)
    h_rho = 1e-6 * scale
    h_eta = 1e-6 * np.maximum(np.abs(eta), r * scale * 1e-2)

    resid = np.full(m, np.inf)
    w = None
    for _ in range(max_iter):
        y = np.empty((4, 3 * m))
        y[0] = np.tile(r, 3)
        y[1] = np.tile(th, 3)
        y[2] = np.concatenate([rho, rho + h_rho, rho])
        y[3] = np.concatenate([eta, eta, eta + h_eta])
        wall, _, _ = scattering_map_batch(metric, y, direction=direction, tol=tol,
                                          n_doublings=n_doublings, eps_scale=eps_scale)
        w, wa, wb = wall[:, :m], wall[:, m:2 * m], wall[:, 2 * m:]
        F1 = w[2] - vr
        F2 = w[1] - vt
        resid = np.maximum(np.abs(F1) / scale, np.abs(F2))
        if np.max(resid) < tol * 10:
            break
        J11 = (wa[2] - w[2]) / h_rho
        J21 = (wa[1] - w[1]) / h_rho
        J12 = (wb[2] - w[2]) / h_eta
        J22 = (wb[1] - w[1]) / h_eta
        det = J11 * J22 - J12 * J21
        if np.any(np.abs(det) < 1e-14):
            raise ArithmeticError("Lagrangian inversion: singular Jacobian")
        rho = rho - (J22 * F1 - J12 * F2) / det
        eta = eta - (-J21 * F1 + J11 * F2) / det
    if np.max(resid) > 1e3 * tol:
        j = int(np.argmax(resid))
        raise ArithmeticError(
            f"Newton did not converge at (r, theta, vartheta) = "
            f"({r[j]:.4g}, {th[j]:.4g}, {vt[j]:.4g}); residual {resid[j]:.3g}")
    return rho, eta, w, resid


def invert_lagrangian(metric: ChartMetric2D, r: float, theta: float, varrho: float,
                      vartheta: float, tol: float = 1e-10,
                      eps_scale: float = 1.0) -> Tuple[float, float]:
    """Momenta (rho, eta) whose trajectory has asymptotic data (varrho, vartheta)."""
    rho, eta, _, _ = _invert_batch(metric, r, theta, varrho, vartheta, tol=tol,
                                   eps_scale=eps_scale)
    return float(rho[0]), float(eta[0])


# ---------------------------------------------------------------------------
# eikonal table

@dataclass
class EikonalTable:
    """Gridded phase psi(r, theta, vartheta) with gradient access.

    ``dpsi_*`` hold the exact gradient from the pointwise inversion (not a
    difference of psi): dpsi_r = rho/varrho, dpsi_theta = eta/varrho,
    dpsi_vartheta = -eta_bar/varrho.  phi(r, theta, varrho, vartheta) =
    varrho * psi(r, theta, vartheta) for varrho of the table's sign.
    """

    domain: ThetaDomain
    metric: ChartMetric2D
    eps_scale: float
    varrho: float
    r: np.ndarray
    theta: np.ndarray
    vartheta: np.ndarray
    psi: np.ndarray
    dpsi_r: np.ndarray
    dpsi_theta: np.ndarray
    dpsi_vartheta: np.ndarray
    r_bar: np.ndarray
    newton_residual: float
    hj_residual: float
    closedness_residual: float
    gauge_residual: float
    _interp: dict = field(default_factory=dict, repr=False)

    def _get_interp(self, name: str):
        if name not in self._interp:
            data = getattr(self, name)
            self._interp[name] = RegularGridInterpolator(
                (np.log(self.r), self.theta, self.vartheta), data, method="cubic",
                bounds_error=True)
        return self._interp[name]

    def _eval(self, name, r, theta, vartheta):
        r = np.asarray(r, dtype=float)
        pts = np.broadcast_arrays(np.log(r), theta, vartheta)
        stack = np.stack([p.ravel() for p in pts], axis=-1)
        out = self._get_interp(name)(stack)
        return out.reshape(pts[0].shape)

    def psi_at(self, r, theta, vartheta):
        return self._eval("psi", r, theta, vartheta)

    def grad_at(self, r, theta, vartheta):
        """(d_r psi, d_theta psi, d_vartheta psi) by cubic interpolation."""
        return (self._eval("dpsi_r", r, theta, vartheta),
                self._eval("dpsi_theta", r, theta, vartheta),
                self._eval("dpsi_vartheta", r, theta, vartheta))

    def contains(self, r, theta) -> bool:
        return bool(np.all((r >= self.r[0]) & (r <= self.r[-1])
                           & (theta >= self.theta[0]) & (theta <= self.theta[-1])))


def _grid_with(vals: np.ndarray, anchor: float) -> np.ndarray:
    g = np.union1d(vals, [anchor])
    return g


def build_eikonal(metric: ChartMetric2D, domain: ThetaDomain, nr: int = 40,
                  ntheta: int = 20, nvartheta: int = 20, r_max: float = 40.0,
                  tol: float = 1e-10, n_doublings: int = 8, log_r: bool = False,
                  eps_scale: float = 1.0) -> EikonalTable:
    """Construct the eikonal table on a tensor grid over the domain.

    The phase is anchored by psi(r_min, theta_c, theta_c) = r_min at the
    common center theta_c of the angular windows (inserted into both grids),
    matching the normalization psi = r + lower order on the diagonal.
    """
    if r_max <= domain.R:
        raise ValueError("r_max must exceed the domain's inner radius")
    theta_c = 0.5 * (domain.W[0] + domain.W[1])
    if not (domain.V[0] <= theta_c <= domain.V[1]):
        raise ValueError("angular windows must overlap at their common center")
    if log_r:
        r_grid = np.geomspace(domain.R, r_max, nr)
    else:
        r_grid = np.linspace(domain.R, r_max, nr)
    th_grid = _grid_with(np.linspace(domain.V[0], domain.V[1], ntheta), theta_c)
    vt_grid = _grid_with(np.linspace(domain.W[0], domain.W[1], nvartheta), theta_c)
    jc = int(np.searchsorted(th_grid, theta_c))
    kc = int(np.searchsorted(vt_grid, theta_c))

    varrho = domain.sign * float(np.sqrt(0.5 * (domain.I[0] + domain.I[1])))
    R, T, V = np.meshgrid(r_grid, th_grid, vt_grid, indexing="ij")
    shape = R.shape
    rho, eta, w, resid = _invert_batch(metric, R.ravel(), T.ravel(), varrho,
                                       V.ravel(), tol=tol, n_doublings=n_doublings,
                                       eps_scale=eps_scale)
    dpsi_r = (rho / varrho).reshape(shape)
    dpsi_th = (eta / varrho).reshape(shape)
    dpsi_vt = (-w[3] / varrho).reshape(shape)
    r_bar = w[0].reshape(shape)

    # line integration: r-leg on the diagonal, then theta-leg at vartheta_c,
    # then the vartheta-leg
    psi_r = r_grid[0] + cumulative_quadratic(dpsi_r[:, jc, kc], r_grid, 0)
    dth = cumulative_quadratic(dpsi_th[:, :, kc], th_grid, jc, axis=1)
    dvt = cumulative_quadratic(dpsi_vt, vt_grid, kc, axis=2)
    psi = psi_r[:, None, None] + dth[:, :, None] + dvt

    # Hamilton-Jacobi residual straight from the inverted momenta
    g = metric.g(eps_scale * R, T)
    hj = np.abs(rho.reshape(shape) ** 2 + g * eta.reshape(shape) ** 2 / R**2 - varrho**2)
    hj_residual = float(np.max(hj)) / varrho**2

    closed = _max_plaquette_circulation(r_grid, th_grid, vt_grid,
                                        dpsi_r, dpsi_th, dpsi_vt)
    gauge = float(np.max(np.abs(psi - r_bar)))

    table = EikonalTable(
        domain=domain, metric=metric, eps_scale=eps_scale, varrho=varrho,
        r=r_grid, theta=th_grid, vartheta=vt_grid, psi=psi,
        dpsi_r=dpsi_r, dpsi_theta=dpsi_th, dpsi_vartheta=dpsi_vt, r_bar=r_bar,
        newton_residual=float(np.max(resid)), hj_residual=hj_residual,
        closedness_residual=closed, gauge_residual=gauge)
    if closed > 1e-4:
        raise ArithmeticError(
            f"1-form circulation {closed:.3g} too large: inverted data is not "
            f"a Lagrangian graph at this resolution")
    return table


def _max_plaquette_circulation(r, th, vt, fr, fth, fvt) -> float:
    """Max trapezoid circulation of the 1-form over all coordinate plaquettes."""

    def circ(x1, x2, f1, f2, ax1, ax2):
        # loop integral over cells of the (ax1, ax2) plane
        d1 = np.diff(x1).reshape([-1 if a == ax1 else 1 for a in range(3)])
        d2 = np.diff(x2).reshape([-1 if a == ax2 else 1 for a in range(3)])

        def edge(f, ax):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[ax], hi[ax] = slice(None, -1), slice(1, None)
            return 0.5 * (f[tuple(lo)] + f[tuple(hi)])

        # bottom/top edges run along ax1; left/right along ax2
        e1 = edge(f1, ax1)
        lo2 = [slice(None)] * 3
        hi2 = [slice(None)] * 3
        lo2[ax2], hi2[ax2] = slice(None, -1), slice(1, None)
        bottom = e1[tuple(lo2)] * d1
        top = e1[tuple(hi2)] * d1
        e2 = edge(f2, ax2)
        lo1 = [slice(None)] * 3
        hi1 = [slice(None)] * 3
        lo1[ax1], hi1[ax1] = slice(None, -1), slice(1, None)
        left = e2[tuple(lo1)] * d2
        right = e2[tuple(hi1)] * d2
        return np.max(np.abs(bottom + right - top - left))

    c1 = circ(r, th, fr, fth, 0, 1)
    c2 = circ(r, vt, fr, fvt, 0, 2)
    c3 = circ(th, vt, fth, fvt, 1, 2)
    return float(max(c1, c2, c3))


def check_eikonal_expansions(table: EikonalTable, deg: int = 4,
                             gbar: float = 1.0) -> dict:
    """Fit the small-angle symbol structure of psi and its gradient in r.

    At the central theta slice each field is expanded in delta = vartheta -
    theta_c.  For a metric approaching the exact cone with angular
    coefficient ``gbar``, the cone values of the Taylor coefficients are
    explicit (psi_cone = r cos(sqrt(gbar) delta) / sqrt(gbar) up to the
    radial normalization); the deviation of each fitted coefficient from
    its cone value is a decaying symbol whose order drops by the metric
    decay rate nu.  Returns power-law fits

    * ``cone``: {name: DecayFit} for the leading (cone) coefficients --
      orders 1, 0, 1 for the psi / d_r psi / d_theta psi entries;
    * ``correction``: {name: DecayFit} for coefficient minus cone value --
      each expected one order of nu lower (1 - nu, -nu, 1 - nu).
    """
    theta_c = 0.5 * (table.domain.W[0] + table.domain.W[1])
    jc = int(np.searchsorted(table.theta, theta_c))
    delta = table.vartheta - theta_c
    r = table.r
    A = np.vander(delta, deg + 1, increasing=True)

    def coeffs(vals):
        c, *_ = np.linalg.lstsq(A, vals.T, rcond=None)
        return c

    c_psi = coeffs(table.psi[:, jc, :] - r[:, None])
    c_dr = coeffs(table.dpsi_r[:, jc, :] - 1.0)
    c_dth = coeffs(table.dpsi_theta[:, jc, :])
    c_dvt = coeffs(table.dpsi_vartheta[:, jc, :])
    cone = {
        "psi_quad": symbol_decay_fit(r, c_psi[2]),
        "dpsi_r_quad": symbol_decay_fit(r, c_dr[2]),
        "dpsi_theta_lin": symbol_decay_fit(r, c_dth[1]),
        "dpsi_vartheta_lin": symbol_decay_fit(r, c_dvt[1]),
    }
    correction = {
        "psi_quad": symbol_decay_fit(r, c_psi[2] + 0.5 * gbar * r),
        "dpsi_r_quad": symbol_decay_fit(r, c_dr[2] + 0.5 * gbar),
        "dpsi_theta_lin": symbol_decay_fit(r, c_dth[1] - gbar * r),
        "dpsi_vartheta_lin": symbol_decay_fit(r, c_dvt[1] + gbar * r),
        "psi_lin": symbol_decay_fit(r, c_psi[1]),
        "dpsi_r_lin": symbol_decay_fit(r, c_dr[1]),
    }
    return {"cone": cone, "correction": correction}


# ---------------------------------------------------------------------------
# table persistence: CSV of grid nodes plus a JSON sidecar with metadata

def save_table(table: EikonalTable, path_prefix: str) -> None:
    """Write the table as <prefix>.csv (node rows) and <prefix>.json."""
    import json

    R, T, V = np.meshgrid(table.r, table.theta, table.vartheta, indexing="ij")
    cols = np.column_stack([R.ravel(), T.ravel(), V.ravel(), table.psi.ravel(),
                            table.dpsi_r.ravel(), table.dpsi_theta.ravel(),
                            table.dpsi_vartheta.ravel(), table.r_bar.ravel()])
    header = "r,theta,vartheta,psi,dpsi_r,dpsi_theta,dpsi_vartheta,r_bar"
    np.savetxt(path_prefix + ".csv", cols, delimiter=",", header=header, comments="")
    meta = {
        "domain": {"R": table.domain.R, "V": list(table.domain.V),
                   "W": list(table.domain.W), "eps_sep": table.domain.eps_sep,
                   "I": list(table.domain.I), "sign": table.domain.sign},
        "metric": {"n": table.metric.n, "family": table.metric.family,
                   "nu": table.metric.nu, "amplitude": table.metric.amplitude,
                   "R_M": table.metric.R_M, "ang_amp": table.metric.ang_amp},
        "eps_scale": table.eps_scale,
        "varrho": table.varrho,
        "shape": [int(table.r.size), int(table.theta.size), int(table.vartheta.size)],
        "residuals": {"newton": table.newton_residual, "hj": table.hj_residual,
                      "closedness": table.closedness_residual,
                      "gauge": table.gauge_residual},
    }
    with open(path_prefix + ".json", "w") as fh:
        json.dump(meta, fh, indent=1)


def load_table(path_prefix: str) -> EikonalTable:
    import json

    with open(path_prefix + ".json") as fh:
        meta = json.load(fh)
    cols = np.loadtxt(path_prefix + ".csv", delimiter=",", skiprows=1)
    shape = tuple(meta["shape"])
    grids = [np.unique(cols[:, i]) for i in range(3)]
    dom = ThetaDomain(R=meta["domain"]["R"], V=tuple(meta["domain"]["V"]),
                      eps_sep=meta["domain"]["eps_sep"], I=tuple(meta["domain"]["I"]),
                      sign=meta["domain"]["sign"], W=tuple(meta["domain"]["W"]))
    metric = ChartMetric2D(**meta["metric"])
    res = meta["residuals"]
    return EikonalTable(
        domain=dom, metric=metric, eps_scale=meta["eps_scale"], varrho=meta["varrho"],
        r=grids[0], theta=grids[1], vartheta=grids[2],
        psi=cols[:, 3].reshape(shape), dpsi_r=cols[:, 4].reshape(shape),
        dpsi_theta=cols[:, 5].reshape(shape), dpsi_vartheta=cols[:, 6].reshape(shape),
        r_bar=cols[:, 7].reshape(shape), newton_residual=res["newton"],
        hj_residual=res["hj"], closedness_residual=res["closedness"],
        gauge_residual=res["gauge"])


# ---------------------------------------------------------------------------
# characteristics and transport

def characteristic(metric: ChartMetric2D, table: EikonalTable, r: float, theta: float,
                   s_values: Sequence[float], varrho: Optional[float] = None,
                   vartheta: Optional[float] = None, tol: float = 1e-10) -> dict:
    """Flow from (r, theta, grad phi) and check the phase-gradient invariance.

    At each requested time the momenta of the trajectory are compared with
    varrho * grad psi evaluated at the transported base point by a fresh
    Lagrangian inversion (the defining property of a generating phase).
    """
    varrho = table.varrho if varrho is None else varrho
    theta_c = 0.5 * (table.domain.W[0] + table.domain.W[1])
    vartheta = theta_c if vartheta is None else vartheta
    if np.sign(varrho) != np.sign(table.varrho):
        raise ValueError("varrho sign must match the table branch")
    rho0, eta0, _, _ = _invert_batch(metric, r, theta, varrho, vartheta, tol=tol,
                                     eps_scale=table.eps_scale)
    y0 = np.array([[r], [theta], [rho0[0]], [eta0[0]]])
    s_values = np.asarray(s_values, dtype=float)
    if np.any(s_values * table.domain.sign < 0):
        raise ValueError("time signs must match the domain branch")
    order = np.argsort(np.abs(s_values))
    s_sorted = s_values[order]
    y_end, states, info = integrate_flow_batch(
        metric, y0, float(s_sorted[-1]), tol=tol, eps_scale=table.eps_scale,
        checkpoints=list(s_sorted[:-1]))
    states = states + [y_end]
    traj = np.concatenate(states, axis=1)  # (4, len(s))
    inside = np.array([table.contains(traj[0, i], traj[1, i]) for i in range(traj.shape[1])])
    resid = np.full(traj.shape[1], np.nan)
    ok = np.nonzero(inside)[0]
    if ok.size:
        rho_i, eta_i, _, _ = _invert_batch(metric, traj[0, ok], traj[1, ok], varrho,
                                           np.full(ok.size, vartheta), tol=tol,
                                           eps_scale=table.eps_scale)
        resid[ok] = np.maximum(np.abs(traj[2, ok] - rho_i) / abs(varrho),
                               np.abs(traj[3, ok] - eta_i) / (abs(varrho) * traj[0, ok]))
    inv = np.argsort(order)
    return {
        "trajectory": traj[:, inv],
        "s": s_values,
        "invariance_residual": resid[inv],
        "inside": inside[inv],
        "exited": bool(~np.all(inside)),
    }


_D1_STENCIL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0  # 4th-order d/dx


def transport_b(metric: ChartMetric2D, r, theta, vartheta, varrho: float,
                n: int = 2, rel_step: float = 1e-3, tol: float = 1e-12,
                eps_scale: float = 1.0) -> np.ndarray:
    """Transport coefficient b = -[Laplacian]phi at the given points.

    The second derivatives of phi are central differences (relative step
    ``rel_step``) of the Newton-accurate first derivatives delivered by the
    Lagrangian inversion, so b is available at any point of the scattering
    region, not just on a stored table.  ``n`` sets the (n-1)/r radial
    drift of the chart Laplacian.
    """
    r, theta, vartheta = np.broadcast_arrays(np.atleast_1d(r).astype(float),
                                             theta, vartheta)
    shape = r.shape
    r, th, vt = r.ravel(), theta.ravel(), vartheta.ravel()
    m = r.size
    h_r = rel_step * r
    h_t = np.full(m, rel_step)
    offs = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    # one batched inversion: 5 radial stencil points and 4 angular ones
    r_stack = np.concatenate([(r[None, :] + offs[:, None] * h_r[None, :]).ravel(),
                              np.tile(r, 4)])
    t_offs = offs[np.abs(offs) > 0]
    th_stack = np.concatenate([np.tile(th, 5),
                               (th[None, :] + t_offs[:, None] * h_t[None, :]).ravel()])
    vt_stack = np.tile(vt, 9)
    rho_all, eta_all, _, _ = _invert_batch(metric, r_stack, th_stack, varrho,
                                           vt_stack, tol=tol, eps_scale=eps_scale)
    dr_block = (rho_all[:5 * m] / varrho).reshape(5, m)
    dth_center = eta_all[2 * m:3 * m] / varrho
    dth_block = np.empty((5, m))
    dth_block[[0, 1, 3, 4]] = (eta_all[5 * m:] / varrho).reshape(4, m)
    dth_block[2] = dth_center
    psi_rr = np.einsum("k,km->m", _D1_STENCIL, dr_block) / h_r
    psi_tt = np.einsum("k,km->m", _D1_STENCIL, dth_block) / h_t
    dpsi_r = dr_block[2]
    re = eps_scale * r
    g = metric.g(re, th)
    w = -0.5 * eps_scale * metric.dg_dr(re, th) / g
    w_t = 0.5 * metric.dg_dtheta(re, th) / r**2
    lap = (psi_rr + g / r**2 * psi_tt + (n - 1) / r * dpsi_r
           + w * dpsi_r + w_t * dth_center)
    return (-varrho * lap).reshape(shape)


@dataclass(frozen=True)
class TransportAmplitude:
    """Transport solution a0 at a base point, with its ladder diagnostics."""

    value: complex
    boundary_constant: complex
    b_integral: float
    ladder: np.ndarray
    extrapolation_error: float
    coverage: float  # fraction of quadrature nodes inside the table


def solve_transport(metric: ChartMetric2D, table: EikonalTable, r: float, theta: float,
                    boundary_C: complex = 1.0, source: Optional[Callable] = None,
                    n: int = 2, vartheta: Optional[float] = None, tol: float = 1e-10,
                    n_doublings: int = 8, nodes_per_octave: int = 16) -> TransportAmplitude:
    """Amplitude a0 = C exp(int_0^inf b ds) - int_0^inf f exp(int_0^s b) ds.

    The characteristic through (r, theta) with the table's (varrho,
    vartheta) labels is integrated on a horizon-doubling ladder; partial
    integrals are Richardson-extrapolated exactly as in the scattering map.
    ``source`` is f(r, theta) evaluated along the characteristic.  b is
    evaluated pointwise along the characteristic (fresh inversions), so the
    quadrature is not limited to the table's radial extent.
    """
    theta_c = 0.5 * (table.domain.W[0] + table.domain.W[1])
    vartheta = theta_c if vartheta is None else vartheta
    gr = table.grad_at(r, theta, vartheta)
    varrho = table.varrho
    y0 = np.array([[r], [theta], [varrho * float(gr[0])], [varrho * float(gr[1])]])
    p0 = principal_symbol(metric, y0, table.eps_scale)[0]
    S0 = 10.0 * r / np.sqrt(p0)
    sign = table.domain.sign
    times = [np.linspace(0.0, S0, 4 * nodes_per_octave + 1)]
    for k in range(n_doublings):
        times.append(np.geomspace(S0 * 2**k, S0 * 2**(k + 1), nodes_per_octave + 1)[1:])
    s_nodes = np.concatenate(times)
    y_end, states, _ = integrate_flow_batch(metric, y0, sign * float(s_nodes[-1]), tol=tol,
                                            eps_scale=table.eps_scale,
                                            checkpoints=list(sign * s_nodes[1:-1]))
    traj = np.concatenate([y0] + states + [y_end], axis=1)
    b_vals = transport_b(metric, traj[0], traj[1], np.full(traj.shape[1], vartheta),
                         varrho, n=n, eps_scale=table.eps_scale)
    coverage = 1.0
    # cumulative integral of b along the characteristic
    I = cumulative_quadratic(b_vals, s_nodes, 0)
    ladder_times = S0 * 2.0 ** np.arange(n_doublings + 1)
    idx = np.searchsorted(s_nodes, ladder_times)
    idx = np.clip(idx, 0, s_nodes.size - 1)
    I_ladder = I[idx]
    I_inf, err = _richardson([np.array([[v]]) for v in I_ladder])
    I_inf = float(I_inf[0, 0])
    value = boundary_C * np.exp(I_inf)
    if source is not None:
        f_vals = np.asarray(source(traj[0], traj[1]), dtype=complex)
        integrand = f_vals * np.exp(I)
        F = cumulative_quadratic(integrand.real, s_nodes, 0) \
            + 1j * cumulative_quadratic(integrand.imag, s_nodes, 0)
        F_ladder = F[idx]
        F_inf_re, _ = _richardson([np.array([[v.real]]) for v in F_ladder])
        F_inf_im, _ = _richardson([np.array([[v.imag]]) for v in F_ladder])
        value = value - (float(F_inf_re[0, 0]) + 1j * float(F_inf_im[0, 0]))
    return TransportAmplitude(value=complex(value), boundary_constant=complex(boundary_C),
                              b_integral=I_inf, ladder=I_ladder,
                              extrapolation_error=float(err[0]), coverage=coverage)


def transport_b_decay_fits(metric: ChartMetric2D, varrho: float, theta_c: float = 0.0,
                           delta: float = 0.05, r_min: float = 10.0,
                           r_max: float = 1000.0, n_r: int = 16, n: int = 2,
                           eps_scale: float = 1.0) -> dict:
    """Decay fits isolating the two-term structure of b near spatial infinity.

    * ``diagonal_fit``: |b(r, theta_c, theta_c)| across radii -- the
      r^{-1-nu} term (this is also the decay seen along a radial
      characteristic, where the travelled radius plays the role of r).
    * ``angular_fit``: (b(r, theta_c, theta_c + delta) - diagonal) across
      radii -- the companion term linear in the angular offset, of order
      r^{-1}.
    """
    r = np.geomspace(r_min, r_max, n_r)
    b_diag = transport_b(metric, r, np.full(n_r, theta_c), np.full(n_r, theta_c),
                         varrho, n=n, eps_scale=eps_scale)
    b_off = transport_b(metric, r, np.full(n_r, theta_c),
                        np.full(n_r, theta_c + delta), varrho, n=n,
                        eps_scale=eps_scale)
    return {"diagonal_fit": symbol_decay_fit(r, b_diag),
            "angular_fit": symbol_decay_fit(r, b_off - b_diag),
            "delta_used": float(delta), "r": r,
            "b_diagonal": b_diag, "b_offset": b_off}


# ---------------------------------------------------------------------------
# finite-time WKB phase

def wkb_phase(metric: ChartMetric2D, R: float, s: float, rho: float, eta_over_r: float,
              nr: int = 24, ntheta: int = 12, V: Tuple[float, float] = (-0.3, 0.3),
              width: float = 2.0, eps_scale: float = 1.0, tol: float = 1e-10,
              max_iter: int = 30) -> dict:
    """Short-time phase from the initial condition phi(0) = r rho + theta eta.

    Solves the time-dependent eikonal equation by characteristics on an
    annulus r in [R/width, width R]: flow each covector (rho, eta) forward,
    invert the position map by Newton, and accumulate the action (the
    Hamiltonian is quadratic in momenta, so the running Lagrangian equals p).
    Verifies |phi(s) - phi(0) + s p| <= C s^2 / R and reports C.
    """
    r_grid = np.geomspace(R / width, R * width, nr)
    th_grid = np.linspace(V[0], V[1], ntheta)
    Rm, Tm = np.meshgrid(r_grid, th_grid, indexing="ij")
    rq, tq = Rm.ravel(), Tm.ravel()
    m = rq.size
    eta = eta_over_r * rq

    # Newton on the starting position: flow(x0, (rho, eta(x0))) = target
    x_r, x_t = rq.copy(), tq.copy()
    hr = 1e-6 * np.maximum(rq, 1.0)
    ht = np.full(m, 1e-6)
    resid = np.inf
    for _ in range(max_iter):
        y = np.empty((4, 3 * m))
        y[0] = np.concatenate([x_r, x_r + hr, x_r])
        y[1] = np.concatenate([x_t, x_t, x_t + ht])
        y[2] = rho
        y[3] = eta_over_r * y[0]
        y_end, _, _ = integrate_flow_batch(metric, y, s, tol=tol, eps_scale=eps_scale)
        w, wa, wb = y_end[:, :m], y_end[:, m:2 * m], y_end[:, 2 * m:]
        F1, F2 = w[0] - rq, w[1] - tq
        resid = float(np.max(np.maximum(np.abs(F1) / rq, np.abs(F2))))
        if resid < 10 * tol:
            break
        J11, J21 = (wa[0] - w[0]) / hr, (wa[1] - w[1]) / hr
        J12, J22 = (wb[0] - w[0]) / ht, (wb[1] - w[1]) / ht
        det = J11 * J22 - J12 * J21
        if np.any(np.abs(det) < 1e-12):
            raise ArithmeticError(f"characteristic map not invertible at s = {s:g}")
        x_r = x_r - (J22 * F1 - J12 * F2) / det
        x_t = x_t - (-J21 * F1 + J11 * F2) / det
    if resid > 1e-6:
        raise ArithmeticError(
            f"characteristic inversion failed (residual {resid:.3g}); "
            f"|s| likely exceeds the short-time window t0 R")
    y0 = np.vstack([x_r, x_t, np.full(m, rho), eta_over_r * x_r])
    p_start = principal_symbol(metric, y0, eps_scale)
    phi0_start = x_r * rho + x_t * (eta_over_r * x_r)
    phi_s = phi0_start + s * p_start  # action along characteristics
    phi0_here = rq * rho + tq * (eta_over_r * rq)
    p_here = principal_symbol(metric, np.vstack([rq, tq, np.full(m, rho),
                                                 eta_over_r * rq]), eps_scale)
    defect = phi_s - phi0_here + s * p_here
    C = float(np.max(np.abs(defect)) * R / s**2) if s != 0 else 0.0
    return {
        "r": r_grid, "theta": th_grid,
        "phi": phi_s.reshape(Rm.shape),
        "phi0": phi0_here.reshape(Rm.shape),
        "defect": defect.reshape(Rm.shape),
        "C_observed": C,
        "newton_residual": resid,
    }
