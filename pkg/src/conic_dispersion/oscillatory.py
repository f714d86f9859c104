"""Oscillatory-integral kernels built from eikonal phase tables.

The kernel is the 2-D semiclassical integral

    I^h(s; r, theta, r', theta') =
        (2 pi h)^{-2} int int e^{i Phi / h} A(r, theta, r', theta', varrho,
        vartheta) dvarrho dvartheta,

    Phi = varrho [psi(r, theta, vartheta) - psi(r', theta', vartheta)]
          - s varrho^2,

evaluated by tensor Gauss-Legendre quadrature at a node count estimated
from the phase gradient (Nyquist), with a doubling convergence check.  The
scans verify the non-stationary, angular-separation, stationary-phase
dispersive, and weighted parametrix-propagation decay rates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .geometry import smooth_bump, symbol_decay_fit
from .phase import EikonalTable

__all__ = [
    "FioKernelSpec",
    "product_amplitude",
    "eval_kernel",
    "nonstationary_scan",
    "angular_separation_scan",
    "dispersive_scan",
    "parametrix_weight_scan",
]

_MAX_NODES = 8192


def product_amplitude(rho_window: Tuple[float, float],
                      vartheta_window: Tuple[float, float],
                      margin: float = 0.25) -> Callable:
    """Smooth product bump A(varrho) A(vartheta), independent of positions."""

    def A(r, theta, rp, thetap, rho, vartheta):
        return (smooth_bump(rho, rho_window[0], rho_window[1], margin)
                * smooth_bump(vartheta, vartheta_window[0], vartheta_window[1], margin))

    return A


@dataclass
class FioKernelSpec:
    """Kernel specification: phase tables, amplitude, and scales.

    ``table_prime`` may alias ``table``.  The amplitude is a callable
    A(r, theta, r', theta', varrho, vartheta) supported inside the tables'
    varrho and vartheta windows; ``h`` is the semiclassical parameter.
    """

    table: EikonalTable
    table_prime: EikonalTable
    amplitude: Callable
    h: float
    rho_window: Optional[Tuple[float, float]] = None
    vartheta_window: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("h must be positive")
        if self.rho_window is None:
            I = self.table.domain.I
            self.rho_window = (float(np.sqrt(I[0])), float(np.sqrt(I[1])))
        if self.vartheta_window is None:
            lo = max(self.table.vartheta[0], self.table_prime.vartheta[0])
            hi = min(self.table.vartheta[-1], self.table_prime.vartheta[-1])
            self.vartheta_window = (float(lo), float(hi))
        if self.table.domain.sign < 0:
            # the incoming branch integrates over negative varrho
            self.rho_window = (-self.rho_window[1], -self.rho_window[0])


def _gauss_nodes(lo: float, hi: float, n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


def _node_estimate(phase_range: float, minimum: int = 24) -> int:
    """Gauss-Legendre node count resolving ``phase_range`` radians.

    Gauss rules resolve oscillations once the order passes ~range/4; a 4/3
    safety factor plus a floor covers the preasymptotic regime, and the
    refinement check in eval_kernel guards the estimate.
    """
    return max(minimum, int(phase_range / 3.0) + minimum)


def _eval_once(spec: FioKernelSpec, s: float, r: float, theta: float,
               rp: float, thetap: float, n_rho: int, n_vt: int):
    rho, w_r = _gauss_nodes(spec.rho_window[0], spec.rho_window[1], n_rho)
    vt, w_t = _gauss_nodes(spec.vartheta_window[0], spec.vartheta_window[1], n_vt)
    D = spec.table.psi_at(r, theta, vt) - spec.table_prime.psi_at(rp, thetap, vt)
    A = spec.amplitude(r, theta, rp, thetap, rho[:, None], vt[None, :])
    A = np.broadcast_to(A, (n_rho, n_vt))
    phase = (np.outer(rho, D) - s * rho[:, None] ** 2) / spec.h
    M = A * np.exp(1j * phase)
    pref = (2.0 * np.pi * spec.h) ** -2
    val = complex((w_r @ M @ w_t) * pref)
    amp_mass = float(np.abs(w_r) @ np.abs(A) @ np.abs(w_t)) * pref
    return val, amp_mass


def eval_kernel(spec: FioKernelSpec, s: float, point: Tuple[float, float, float, float],
                n_rho: Optional[int] = None, n_vt: Optional[int] = None,
                check_convergence: bool = True, conv_rtol: float = 1e-4):
    """Evaluate the kernel at one space-time configuration.

    ``point`` is (r, theta, r', theta').  Node counts default to the
    Nyquist estimate from the corner phase gradients; exceeding the node
    cap raises before any evaluation.  Returns (value, info) with
    info = {n_rho, n_vt, converged, refine_diff}.
    """
    r, theta, rp, thetap = point
    rho_lo, rho_hi = spec.rho_window
    vt_grid = np.linspace(spec.vartheta_window[0], spec.vartheta_window[1], 65)
    D = spec.table.psi_at(r, theta, vt_grid) - spec.table_prime.psi_at(rp, thetap, vt_grid)
    Dp = np.gradient(D, vt_grid)
    rho_absmax = max(abs(rho_lo), abs(rho_hi))
    # phase gradient bounds over the support corners
    dphi_drho = np.max(np.abs(D)) + 2.0 * abs(s) * rho_absmax
    dphi_dvt = rho_absmax * np.max(np.abs(Dp))
    if n_rho is None:
        n_rho = _node_estimate(dphi_drho * (rho_hi - rho_lo) / spec.h)
    if n_vt is None:
        n_vt = _node_estimate(
            dphi_dvt * (spec.vartheta_window[1] - spec.vartheta_window[0]) / spec.h)
    if max(n_rho, n_vt) > _MAX_NODES:
        raise ValueError(
            f"quadrature would need ({n_rho}, {n_vt}) nodes, above the cap "
            f"{_MAX_NODES}; h too small for this configuration")
    val, amp_mass = _eval_once(spec, s, r, theta, rp, thetap, n_rho, n_vt)
    # round-off floor: the quadrature sums ~n terms of size ~amp_mass, so
    # cancellation below this level is numerically meaningless
    floor = 1e-13 * amp_mass * np.sqrt(n_rho * n_vt)
    info = {"n_rho": n_rho, "n_vt": n_vt, "converged": True, "refine_diff": 0.0,
            "noise_floor": floor, "below_floor": False}
    if not check_convergence:
        return val, info
    for _ in range(4):
        val2, _ = _eval_once(spec, s, r, theta, rp, thetap,
                             (3 * n_rho) // 2, (3 * n_vt) // 2)
        diff = abs(val2 - val) / max(abs(val2), floor)
        info.update(refine_diff=float(diff), n_rho=n_rho, n_vt=n_vt)
        if diff < conv_rtol:
            info["converged"] = True
            val = val2
            break
        info["converged"] = False
        val = val2
        if 2 * max(n_rho, n_vt) > _MAX_NODES:
            break
        n_rho, n_vt = 2 * n_rho, 2 * n_vt
        val, amp_mass = _eval_once(spec, s, r, theta, rp, thetap, n_rho, n_vt)
        floor = 1e-13 * amp_mass * np.sqrt(n_rho * n_vt)
        info["noise_floor"] = floor
    info["below_floor"] = bool(abs(val) <= info["noise_floor"])
    return val, info


def _loglog_fit(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = y > 0
    if np.count_nonzero(keep) < 2:
        return np.nan, np.nan
    c = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(c[0]), float(np.exp(c[1]))


def nonstationary_scan(spec_for_h: Callable[[float], FioKernelSpec],
                       h_values: Sequence[float], s: float,
                       point_for_scale: Callable[[float], Tuple],
                       scales: Sequence[float]) -> dict:
    """Decay of |I^h| in h and in the spatial scale, away from stationary points.

    ``point_for_scale`` maps a spatial scale to a configuration that keeps
    the phase gradient bounded below (the non-stationary regime);
    ``spec_for_h`` builds the kernel spec at each h.  Exponents are slopes
    of log|I| against log(1/h) (at the first scale) and against log(scale)
    (at the first h); both should be <= -3 in the valid regime.
    """
    h_values = np.asarray(h_values, dtype=float)
    vals_h = []
    for h in h_values:
        spec = spec_for_h(h)
        v, info = eval_kernel(spec, s, point_for_scale(scales[0]))
        ok = info["converged"] and not info["below_floor"]
        vals_h.append(abs(v) if ok else np.nan)
    vals_x = []
    spec = spec_for_h(h_values[0])
    for scale in scales:
        v, info = eval_kernel(spec, s, point_for_scale(scale))
        ok = info["converged"] and not info["below_floor"]
        vals_x.append(abs(v) if ok else np.nan)
    h_slope, _ = _loglog_fit(1.0 / h_values, np.asarray(vals_h))
    x_slope, _ = _loglog_fit(np.asarray(scales), np.asarray(vals_x))
    return {"h_exponent": h_slope, "spatial_exponent": x_slope,
            "h_values": h_values, "values_h": np.asarray(vals_h),
            "scales": np.asarray(scales), "values_spatial": np.asarray(vals_x)}


def angular_separation_scan(spec: FioKernelSpec, delta: float,
                            s_values: Sequence[float],
                            base_point: Tuple[float, float, float, float]) -> dict:
    """Decay of h^n |I^h| in s/h under the separation r |theta - theta'| >= delta |s|.

    The base point's angular offset is rescaled per s to sit exactly on the
    separation threshold; configurations with |s| < h are skipped.
    """
    r, theta, rp, thetap = base_point
    ratios, vals = [], []
    for s in s_values:
        if abs(s) < spec.h:
            continue
        dtheta = delta * abs(s) / r
        point = (r, theta + dtheta, rp, thetap)
        if not spec.table.contains(r, theta + dtheta):
            break
        v, info = eval_kernel(spec, s, point)
        if not info["converged"] or info["below_floor"]:
            continue
        ratios.append(abs(s) / spec.h)
        vals.append(abs(v) * spec.h ** 2)
    slope, _ = _loglog_fit(np.asarray(ratios), np.asarray(vals))
    return {"exponent": slope, "s_over_h": np.asarray(ratios),
            "scaled_values": np.asarray(vals), "delta": delta}


def dispersive_scan(spec_for_h: Callable[[float], FioKernelSpec],
                    h_values: Sequence[float], s_values: Sequence[float],
                    points_for_s: Callable[[float, FioKernelSpec], Sequence[Tuple]],
                    hs_min_for_fit: float = 4.0) -> dict:
    """Sup of |I^h| against min(h^{-2}, |hs|^{-1}) over an (h, s) grid.

    ``points_for_s`` supplies, per time, sample configurations containing
    the stationary shell.  Returns the envelope constant C_fit and the
    fitted exponent of sup|I| in hs over the large-|hs| regime (expected
    -n/2 = -1).
    """
    rows = []
    for h in h_values:
        spec = spec_for_h(h)
        for s in s_values:
            best = 0.0
            for point in points_for_s(s, spec):
                v, info = eval_kernel(spec, s, point)
                if info["converged"]:
                    best = max(best, abs(v))
            if best > 0:
                bound = min(h ** -2.0, abs(h * s) ** -1.0) if s != 0 else h ** -2.0
                rows.append((h, s, best, bound))
    rows_arr = np.array(rows)
    C_fit = float(np.max(rows_arr[:, 2] / rows_arr[:, 3]))
    hs = rows_arr[:, 0] * np.abs(rows_arr[:, 1])
    mask = hs >= hs_min_for_fit
    exponent = np.nan
    if np.count_nonzero(mask) >= 3:
        # envelope in hs: keep the max |I| per hs value
        vals = {}
        for hsv, iv in zip(hs[mask], rows_arr[mask, 2]):
            key = round(float(np.log2(hsv)), 6)
            vals[key] = max(vals.get(key, 0.0), iv)
        xs = np.array([2.0 ** k for k in sorted(vals)])
        ys = np.array([vals[k] for k in sorted(vals)])
        exponent, _ = _loglog_fit(xs, ys)
    return {"C_fit": C_fit, "hs_exponent": exponent, "rows": rows_arr}


def parametrix_weight_scan(spec: FioKernelSpec, N: int, s_values: Sequence[float],
                           points_for_s: Callable[[float], Sequence[Tuple]]) -> dict:
    """Boundedness of the weighted kernel <r>^{-N} |K(s)| (r' + s)^N.

    Also verifies the pointwise lower bound behind the proof: the outgoing
    radial derivative of the phase satisfies
    d(phase)/d(varrho) = psi'(r', theta', vartheta) + 2 s varrho >= c (r' + s)
    on the sampled configurations; the observed infimum of the ratio is
    reported as ``phase_lower_c``.
    """
    sup_vals, c_inf = [], np.inf
    rho_ref = 0.5 * (spec.rho_window[0] + spec.rho_window[1])
    for s in s_values:
        best = 0.0
        for point in points_for_s(s):
            r, theta, rp, thetap = point
            v, info = eval_kernel(spec, s, point)
            vt_mid = 0.5 * (spec.vartheta_window[0] + spec.vartheta_window[1])
            dphase = float(spec.table_prime.psi_at(rp, thetap, vt_mid)) \
                + 2.0 * abs(s) * abs(rho_ref)
            c_inf = min(c_inf, dphase / (rp + abs(s)))
            if info["converged"]:
                w = (1.0 + r) ** (-N) * abs(v) * (rp + abs(s)) ** N
                best = max(best, w)
        sup_vals.append(best)
    s_arr = np.asarray(s_values, dtype=float)
    slope, _ = _loglog_fit(np.abs(s_arr), np.asarray(sup_vals))
    return {"weighted_sup": np.asarray(sup_vals), "s": s_arr,
            "s_exponent": slope, "phase_lower_c": float(c_inf),
            "bounded": bool(slope <= 0.1)}
