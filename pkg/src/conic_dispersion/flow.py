"""Hamiltonian flow in the conic chart and the classical scattering map.

The Hamiltonian is p(r, theta, rho, eta) = rho^2 + g(r, theta) eta^2 / r^2
(optionally with the rescaled coefficient g(eps_scale * r, theta)).  The
scattering map is the limit of the flow composed with the inverse free
radial flow, extracted by a horizon-doubling ladder with Richardson
extrapolation.  Region predicates and the flow-estimate verifiers used by
the test harness live here as well.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ._ode import integrate_batch
from .geometry import ChartMetric2D, DecayFit, symbol_decay_fit

__all__ = [
    "PhasePoint",
    "ScatteringData",
    "ConicRegion",
    "DomainExit",
    "principal_symbol",
    "integrate_flow",
    "integrate_flow_batch",
    "scattering_map",
    "scattering_map_batch",
    "region_contains",
    "sample_region",
    "verify_flow_lower_bound",
    "verify_outgoing_threshold",
    "verify_flow_derivative_bounds",
]


class DomainExit(RuntimeError):
    """A trajectory crossed the inner chart boundary r = R_M."""

    def __init__(self, exit_time: float):
        self.exit_time = exit_time
        super().__init__(f"trajectory left the chart (r <= R_M) near s = {exit_time:.6g}")


@dataclass(frozen=True)
class PhasePoint:
    r: float
    theta: float
    rho: float
    eta: float

    def __post_init__(self):
        vals = (self.r, self.theta, self.rho, self.eta)
        if not all(np.isfinite(vals)):
            raise ValueError("phase point must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([[self.r], [self.theta], [self.rho], [self.eta]])

    @staticmethod
    def from_array(y: np.ndarray) -> "PhasePoint":
        return PhasePoint(float(y[0]), float(y[1]), float(y[2]), float(y[3]))


@dataclass(frozen=True)
class ScatteringData:
    """Asymptotic data (r_bar, theta_bar, rho_bar, eta_bar) of a trajectory."""

    r_bar: float
    theta_bar: float
    rho_bar: float
    eta_bar: float
    horizon_used: float
    extrapolation_error: float


@dataclass(frozen=True)
class ConicRegion:
    """Outgoing/incoming phase-space region over the chart.

    Strong regions require +/- rho > (1 - eps^2) p^{1/2}; weak regions
    +/- rho > sigma p^{1/2}.  All inequalities strict.
    """

    kind: str  # outgoing | incoming | strongly_outgoing | strongly_incoming
    R: float
    V: Tuple[float, float]
    I: Tuple[float, float]
    sigma_or_eps: float
    eps_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("outgoing", "incoming", "strongly_outgoing", "strongly_incoming"):
            raise ValueError(f"unknown region kind {self.kind!r}")
        if not (self.I[0] > 0 and self.I[1] > self.I[0]):
            raise ValueError("energy interval must satisfy 0 < I_min < I_max")
        if self.kind.startswith("strongly"):
            if not (0 < self.sigma_or_eps < 1):
                raise ValueError("strong region needs eps in (0, 1)")
        else:
            if not (-1 < self.sigma_or_eps < 1):
                raise ValueError("weak region needs sigma in (-1, 1)")

    @property
    def sign(self) -> float:
        return 1.0 if "outgoing" in self.kind else -1.0

    @property
    def threshold(self) -> float:
        if self.kind.startswith("strongly"):
            return 1.0 - self.sigma_or_eps**2
        return self.sigma_or_eps


def principal_symbol(metric: ChartMetric2D, y, eps_scale: float = 1.0):
    """p = rho^2 + g(eps_scale*r, theta) * eta^2 / r^2 (vectorized)."""
    scalar = isinstance(y, PhasePoint)
    if scalar:
        y = y.as_array()
    r, th, rho, eta = y
    p = rho**2 + metric.g(eps_scale * r, th) * eta**2 / r**2
    if scalar:
        return float(p[0])
    return p if np.ndim(p) else float(p)


def _rhs(metric: ChartMetric2D, eps_scale: float):
    def rhs(s, y):
        r, th, rho, eta = y
        re = eps_scale * r
        g = metric.g(re, th)
        gr = eps_scale * metric.dg_dr(re, th)
        gt = metric.dg_dtheta(re, th)
        inv_r2 = 1.0 / r**2
        out = np.empty_like(y)
        out[0] = 2.0 * rho
        out[1] = 2.0 * g * eta * inv_r2
        out[2] = -(eta**2) * (gr * inv_r2 - 2.0 * g / r**3)
        out[3] = -(eta**2) * gt * inv_r2
        return out

    return rhs


def integrate_flow_batch(metric: ChartMetric2D, y0: np.ndarray, s: float,
                         tol: float = 1e-10, eps_scale: float = 1.0,
                         checkpoints=None):
    """Integrate a batch of phase points; returns (y_end, states, info).

    info carries the minimum radius reached and the first boundary-crossing
    time if any trajectory dipped below R_M.
    """
    track = {"min_r": np.full(y0.shape[1], np.inf), "exit_s": None}

    def monitor(si, yi):
        track["min_r"] = np.minimum(track["min_r"], yi[0])
        if track["exit_s"] is None and np.any(yi[0] <= metric.R_M):
            track["exit_s"] = si

    y_end, states = integrate_batch(_rhs(metric, eps_scale), y0, s, tol=tol,
                                    checkpoints=checkpoints, step_monitor=monitor)
    info = {"min_r": track["min_r"], "exit_s": track["exit_s"]}
    return y_end, states, info


def integrate_flow(metric: ChartMetric2D, pt: PhasePoint, s: float,
                   tol: float = 1e-10, eps_scale: float = 1.0) -> PhasePoint:
    """Flow a single phase point for time s.

    Raises DomainExit if the trajectory reaches r <= R_M, and checks energy
    conservation to 10 * tol * |s| as a sanity bound.
    """
    y_end, _, info = integrate_flow_batch(metric, pt.as_array(), s, tol=tol,
                                          eps_scale=eps_scale)
    if info["exit_s"] is not None:
        raise DomainExit(info["exit_s"])
    p0 = principal_symbol(metric, pt, eps_scale)
    p1 = principal_symbol(metric, PhasePoint.from_array(y_end[:, 0]), eps_scale)
    drift = abs(p1 - p0)
    if drift > 10.0 * tol * max(abs(s), 1.0) * max(p0, 1.0):
        raise ArithmeticError(f"energy drift {drift:.3g} exceeds tolerance budget")
    return PhasePoint.from_array(y_end[:, 0])


def _free_comparison(y: np.ndarray, s: float) -> np.ndarray:
    """Compose with the inverse free radial flow: (r - 2 s rho, theta, rho, eta)."""
    out = y.copy()
    out[0] = y[0] - 2.0 * s * y[2]
    return out


def _richardson(values: Sequence[np.ndarray], max_order: int = 3):
    """Neville extrapolation for v_k = v + c1/s_k + c2/s_k^2 + ..., s_k doubling."""
    tableau = [np.asarray(v, dtype=float) for v in values]
    prev_final = None
    for m in range(1, min(max_order, len(tableau) - 1) + 1):
        nxt = []
        for k in range(1, len(tableau)):
            nxt.append(tableau[k] + (tableau[k] - tableau[k - 1]) / (2.0**m - 1.0))
        prev_final = tableau[-1]
        tableau = nxt
    err = np.max(np.abs(tableau[-1] - prev_final), axis=0) if prev_final is not None \
        else np.zeros(tableau[-1].shape[1])
    return tableau[-1], err


def scattering_map_batch(metric: ChartMetric2D, y0: np.ndarray, direction: float = 1.0,
                         tol: float = 1e-10, n_doublings: int = 8,
                         eps_scale: float = 1.0):
    """Asymptotic data for a batch of points; returns (w, err, info).

    The horizon ladder starts at S0 = 10 * max(r / p^{1/2}) and doubles
    ``n_doublings`` times; the four components (r - 2 s rho, theta, rho, eta)
    along the flow are Richardson-extrapolated over the ladder.
    """
    p = principal_symbol(metric, y0, eps_scale)
    if np.any(p <= 0):
        raise ValueError("zero-energy point has no scattering data")
    S0 = 10.0 * float(np.max(y0[0] / np.sqrt(p)))
    ladder = [S0 * 2.0**k for k in range(n_doublings + 1)]
    signed = [direction * s for s in ladder]
    y_end, states, info = integrate_flow_batch(metric, y0, signed[-1], tol=tol,
                                               eps_scale=eps_scale, checkpoints=signed[:-1])
    states = states + [y_end]
    ws = [_free_comparison(yk, sk) for yk, sk in zip(states, signed)]
    w, err = _richardson(ws)
    increments = [float(np.max(np.abs(ws[k + 1] - ws[k]))) for k in range(len(ws) - 1)]
    tail_ok = all(increments[k + 1] <= increments[k] * 1.05 + 1e-13
                  for k in range(len(increments) // 2, len(increments) - 1))
    info = dict(info)
    info.update({"horizon": ladder[-1], "increments": increments, "converged": tail_ok})
    return w, err, info


def scattering_map(metric: ChartMetric2D, pt: PhasePoint, direction: float = 1.0,
                   tol: float = 1e-10, n_doublings: int = 8,
                   eps_scale: float = 1.0) -> ScatteringData:
    """Classical scattering data of a single phase point.

    ``direction`` +1 follows the forward (outgoing) limit, -1 the backward
    (incoming) one.  Raises if the ladder increments fail to decrease.
    """
    w, err, info = scattering_map_batch(metric, pt.as_array(), direction=direction,
                                        tol=tol, n_doublings=n_doublings,
                                        eps_scale=eps_scale)
    if info["exit_s"] is not None:
        raise DomainExit(info["exit_s"])
    if not info["converged"]:
        raise ArithmeticError(
            f"scattering ladder not converging; increments = {info['increments']}")
    data = ScatteringData(float(w[0, 0]), float(w[1, 0]), float(w[2, 0]), float(w[3, 0]),
                          horizon_used=info["horizon"],
                          extrapolation_error=float(err[0]))
    p0 = principal_symbol(metric, pt, eps_scale)
    if data.rho_bar**2 > p0 * (1.0 + 1e-8) + 1e-12:
        raise ArithmeticError("asymptotic radial momentum exceeds the energy budget")
    return data


def region_contains(region: ConicRegion, metric: ChartMetric2D, pt: PhasePoint) -> bool:
    """Strict membership test for the region's defining inequalities."""
    p = principal_symbol(metric, pt, region.eps_scale)
    if not (pt.r > region.R):
        return False
    if not (region.V[0] < pt.theta < region.V[1]):
        return False
    if not (region.I[0] < p < region.I[1]):
        return False
    return region.sign * pt.rho > region.threshold * np.sqrt(p)


def sample_region(region: ConicRegion, metric: ChartMetric2D, count: int,
                  rng: np.random.Generator, r_cap: Optional[float] = None,
                  margin: float = 1e-3) -> np.ndarray:
    """Draw phase points strictly inside the region; returns array (4, count).

    Radii are drawn log-uniformly on (R, r_cap); the direction parameter
    mu = sign * rho / p^{1/2} uniformly on (threshold + margin, 1).
    """
    r_cap = 10.0 * region.R if r_cap is None else r_cap
    r = np.exp(rng.uniform(np.log(region.R * (1 + margin)), np.log(r_cap), count))
    th = rng.uniform(region.V[0] + margin * np.ptp(region.V),
                     region.V[1] - margin * np.ptp(region.V), count)
    p = rng.uniform(region.I[0] * (1 + margin), region.I[1] * (1 - margin), count)
    lo = region.threshold + margin
    mu = rng.uniform(lo, 1.0, count)
    rho = region.sign * mu * np.sqrt(p)
    g = metric.g(region.eps_scale * r, th)
    eta = rng.choice([-1.0, 1.0], count) * r * np.sqrt(np.maximum(p - rho**2, 0.0) / g)
    return np.vstack([r, th, rho, eta])


def verify_flow_lower_bound(metric: ChartMetric2D, region: ConicRegion,
                            sample_count: int = 50, s_max: float = 200.0,
                            tol: float = 1e-10, seed: int = 0) -> dict:
    """Check r(s) >= c (r + |s| p^{1/2}) along the region's escape direction.

    Returns the observed infimum c and the worst sample; a domain exit is a
    failure (the region's R was too small).
    """
    rng = np.random.Generator(np.random.Philox(seed))
    y0 = sample_region(region, metric, sample_count, rng)
    p = principal_symbol(metric, y0, region.eps_scale)
    times = np.geomspace(s_max / 256.0, s_max, 9) * region.sign
    y_end, states, info = integrate_flow_batch(metric, y0, times[-1], tol=tol,
                                               eps_scale=region.eps_scale,
                                               checkpoints=list(times[:-1]))
    states = states + [y_end]
    c = np.inf
    worst = None
    for sk, yk in zip(times, states):
        ratio = yk[0] / (y0[0] + abs(sk) * np.sqrt(p))
        j = int(np.argmin(ratio))
        if ratio[j] < c:
            c = float(ratio[j])
            worst = {"s": float(sk), "start": y0[:, j].tolist(), "r": float(yk[0, j])}
    passed = info["exit_s"] is None and c > 0
    return {"c_observed": c, "worst_case": worst, "passed": passed,
            "domain_exit": info["exit_s"]}


def verify_outgoing_threshold(metric: ChartMetric2D, region: ConicRegion,
                              eps_strong: float, sample_count: int = 20,
                              tol: float = 1e-10, seed: int = 0,
                              horizon_factor: float = 5e3) -> dict:
    """First time each sample becomes strongly outgoing, scaled by p^{1/2}/r.

    Bisects the first s* with sign * rho(s) / p^{1/2} > 1 - eps_strong^2 and
    reports T_observed = max over samples of s* p^{1/2} / r.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    y0 = sample_region(region, metric, sample_count, rng)
    p = principal_symbol(metric, y0, region.eps_scale)
    thr = 1.0 - eps_strong**2
    sign = region.sign
    scale = y0[0] / np.sqrt(p)  # natural time unit per sample
    s_star = np.full(sample_count, np.nan)
    horizon = horizon_factor * float(np.max(scale))
    grid = np.concatenate([[0.0], np.geomspace(1e-3 * float(np.min(scale)), horizon, 40)])
    y_end, states, _ = integrate_flow_batch(metric, y0, sign * grid[-1], tol=tol,
                                            eps_scale=region.eps_scale,
                                            checkpoints=list(sign * grid[1:-1]))
    states = [y0] + states + [y_end]
    crossed = np.zeros(sample_count, dtype=bool)
    lo = np.zeros(sample_count)
    hi = np.full(sample_count, np.nan)
    for sk, yk in zip(grid, states):
        cond = sign * yk[2] > thr * np.sqrt(p)
        newly = cond & ~crossed
        hi[newly] = sk
        crossed |= cond
        lo[~crossed] = sk
    attained = np.isfinite(hi)
    # bisect each bracketing interval (independently; scalar integrations)
    for j in np.nonzero(attained)[0]:
        a, b = lo[j], hi[j]
        if b <= 0:
            s_star[j] = 0.0
            continue
        yj = y0[:, j:j + 1]
        for _ in range(40):
            mid = 0.5 * (a + b)
            y_mid, _, _ = integrate_flow_batch(metric, yj, sign * mid, tol=tol,
                                               eps_scale=region.eps_scale)
            if sign * y_mid[2, 0] > thr * np.sqrt(p[j]):
                b = mid
            else:
                a = mid
            if b - a < 1e-6 * max(b, 1.0):
                break
        s_star[j] = 0.5 * (a + b)
    T_observed = float(np.nanmax(s_star * np.sqrt(p) / y0[0])) if np.any(attained) else np.inf
    return {"T_observed": T_observed, "s_star": s_star, "attained": attained,
            "passed": bool(np.all(attained))}


def verify_flow_derivative_bounds(metric: ChartMetric2D, region: ConicRegion,
                                  s: float = 50.0, orders=(0, 1, 2),
                                  n_radii: int = 12, r_span: float = 100.0,
                                  tol: float = 1e-11, seed: int = 0) -> dict:
    """Decay fits of radial derivatives of the normalized flow components.

    The four quantities ((r(s) - r - 2 s rho)/s, theta(s), rho(s), eta(s)/r)
    are differentiated in the initial radius by central differences over a
    radius ladder; their j-th derivatives should decay at least like r^{-j}.
    Also reports the two-sided constant C with (r + s)/C <= r(s) <= C (r + s).
    """
    rng = np.random.Generator(np.random.Philox(seed))
    base = sample_region(region, metric, 1, rng)[:, 0]
    radii = np.geomspace(region.R * 1.5, region.R * 1.5 * r_span, n_radii)
    rel = 1e-4 if max(orders) <= 1 else 1e-3
    names = ["radial_defect", "theta", "rho", "eta_over_r"]
    fits = {}
    values = {j: np.zeros((4, n_radii)) for j in orders}
    C_bound = 0.0
    for i, r0 in enumerate(radii):
        h = rel * r0
        stencil = np.array([r0 - 2 * h, r0 - h, r0, r0 + h, r0 + 2 * h])
        y0 = np.tile(base[:, None], (1, stencil.size))
        y0[0] = stencil
        # keep eta/r fixed across the stencil so the ray family is comparable
        y0[3] = base[3] / base[0] * stencil
        sgn = region.sign
        y_end, _, _ = integrate_flow_batch(metric, y0, sgn * s, tol=tol,
                                           eps_scale=region.eps_scale)
        q = np.vstack([
            (y_end[0] - stencil - 2 * sgn * s * y0[2]) / (sgn * s),
            y_end[1],
            y_end[2],
            y_end[3] / stencil,
        ])
        for j in orders:
            if j == 0:
                values[j][:, i] = q[:, 2]
            elif j == 1:
                values[j][:, i] = (q[:, 3] - q[:, 1]) / (2 * h)
            elif j == 2:
                values[j][:, i] = (q[:, 3] - 2 * q[:, 2] + q[:, 1]) / h**2
            else:
                raise ValueError("orders above 2 not supported")
        p0 = principal_symbol(metric, y0[:, 2], region.eps_scale)
        travel = r0 + s * np.sqrt(p0)
        C_bound = max(C_bound, y_end[0, 2] / travel, travel / y_end[0, 2])
    for j in orders:
        for c, name in enumerate(names):
            fits[(name, j)] = symbol_decay_fit(radii, values[j][c])
    return {"fits": fits, "C_two_sided": float(C_bound), "radii": radii}
