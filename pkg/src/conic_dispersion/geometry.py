"""Metric models, symbol-class decay fits, rescaling, and the radial normal form.

Two metric reductions are supported:

* ``WarpedMetric`` -- a rotationally symmetric warped product with radial
  profile f(r) = r(1 + v(r)), used by the spectral and dynamics modules.
* ``ChartMetric2D`` -- a single chart with one angular variable and inverse
  angular coefficient g(r, theta), used by the classical flow, phase and
  oscillatory modules.

Both carry a long-range decay order nu: the perturbation and its first two
radial derivatives decay like <r>^{-nu-j}.  Every such membership claim is
checked numerically with ``symbol_decay_fit`` (log-log least squares).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

__all__ = [
    "WarpedMetric",
    "ChartMetric2D",
    "DecayFit",
    "GridFunction",
    "modified_bracket",
    "symbol_decay_fit",
    "normal_form_step",
    "apply_rescaling",
    "gamma",
    "smooth_step",
    "smooth_bump",
]

_FAMILIES = ("flat", "power_perturb", "bump_perturb")

# Fixed shape parameters of the bump family (center and width of the
# Gaussian perturbation); kept out of the config surface on purpose.
_BUMP_CENTER = 6.0
_BUMP_WIDTH = 2.0


def _bracket(r):
    """Smooth Japanese bracket <r> = (1 + r^2)^(1/2)."""
    return np.sqrt(1.0 + np.asarray(r, dtype=float) ** 2)


def _perturb_profile(family: str, nu: float, r):
    """m(r), m'(r), m''(r) for the chosen perturbation shape (amplitude 1)."""
    r = np.asarray(r, dtype=float)
    if family == "flat":
        z = np.zeros_like(r)
        return z, z.copy(), z.copy()
    if family == "power_perturb":
        w = 1.0 + r**2
        m = w ** (-nu / 2.0)
        dm = -nu * r * w ** (-nu / 2.0 - 1.0)
        d2m = -nu * w ** (-nu / 2.0 - 1.0) + nu * (nu + 2.0) * r**2 * w ** (-nu / 2.0 - 2.0)
        return m, dm, d2m
    if family == "bump_perturb":
        z = (r - _BUMP_CENTER) / _BUMP_WIDTH
        m = np.exp(-(z**2))
        dm = -2.0 * z / _BUMP_WIDTH * m
        d2m = (4.0 * z**2 - 2.0) / _BUMP_WIDTH**2 * m
        return m, dm, d2m
    raise ValueError(f"unknown metric family {family!r}")


@dataclass(frozen=True)
class WarpedMetric:
    """Rotationally symmetric warp f(r) = r(1 + amplitude*m(r)).

    ``n`` is the spatial dimension, ``nu`` the long-range decay order and
    ``r_flat`` the radius below which the modified bracket equals 1.
    """

    n: int = 3
    family: str = "flat"
    nu: float = 1.0
    amplitude: float = 0.0
    r_flat: float = 10.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("spatial dimension n must be >= 2")
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown metric family {self.family!r}")
        if self.nu <= 0:
            raise ValueError("decay order nu must be positive")
        if self.family != "flat" and abs(self.amplitude) >= 0.9:
            raise ValueError("perturbation amplitude too large for ellipticity")

    def vtilde(self, r):
        """Perturbation v(r) = f(r)/r - 1."""
        m, _, _ = _perturb_profile(self.family, self.nu, r)
        return self.amplitude * m

    def f(self, r):
        r = np.asarray(r, dtype=float)
        return r * (1.0 + self.vtilde(r))

    def df(self, r):
        r = np.asarray(r, dtype=float)
        m, dm, _ = _perturb_profile(self.family, self.nu, r)
        return 1.0 + self.amplitude * (m + r * dm)

    def d2f(self, r):
        r = np.asarray(r, dtype=float)
        _, dm, d2m = _perturb_profile(self.family, self.nu, r)
        return self.amplitude * (2.0 * dm + r * d2m)

    def key(self) -> str:
        """Short deterministic identifier used for operator caching."""
        return (
            f"{self.family}-n{self.n}-nu{self.nu:g}-a{self.amplitude:g}-"
            f"rf{self.r_flat:g}"
        )


@dataclass(frozen=True)
class ChartMetric2D:
    """Chart model with inverse angular coefficient g(r, theta).

    The classical Hamiltonian is p = rho^2 + g(r, theta) eta^2 / r^2, with
    g - 1 in S^{-nu}.  ``ang_amp`` modulates the perturbation in theta
    (default 0: rotationally symmetric chart).
    """

    n: int = 2
    family: str = "flat"
    nu: float = 1.0
    amplitude: float = 0.0
    R_M: float = 1.0
    ang_amp: float = 0.0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown metric family {self.family!r}")
        if self.nu <= 0:
            raise ValueError("decay order nu must be positive")
        if abs(self.amplitude) * (1.0 + abs(self.ang_amp)) >= 0.9:
            raise ValueError("perturbation too large: ellipticity 1/C <= g <= C lost")

    def _mod(self, theta):
        th = np.asarray(theta, dtype=float)
        return 1.0 + self.ang_amp * np.cos(th), -self.ang_amp * np.sin(th)

    def g(self, r, theta):
        m, _, _ = _perturb_profile(self.family, self.nu, r)
        a, _ = self._mod(theta)
        return 1.0 + self.amplitude * m * a

    def dg_dr(self, r, theta):
        _, dm, _ = _perturb_profile(self.family, self.nu, r)
        a, _ = self._mod(theta)
        return self.amplitude * dm * a

    def d2g_dr2(self, r, theta):
        _, _, d2m = _perturb_profile(self.family, self.nu, r)
        a, _ = self._mod(theta)
        return self.amplitude * d2m * a

    def dg_dtheta(self, r, theta):
        m, _, _ = _perturb_profile(self.family, self.nu, r)
        _, da = self._mod(theta)
        return self.amplitude * m * da


@dataclass(frozen=True)
class DecayFit:
    """Least-squares power-law fit |value| ~ constant * x^exponent.

    ``residual`` is the max relative deviation of |value| * x^{-exponent}
    from the fitted constant.  ``identically_zero`` flags all-zero input,
    for which slope and constant are undefined.
    """

    exponent: float
    constant: float
    residual: float
    n_samples: int
    identically_zero: bool = False


def symbol_decay_fit(x: np.ndarray, values: np.ndarray) -> DecayFit:
    """Fit log|values| against log x by least squares.

    Zero entries are dropped from the fit; an all-zero sample returns the
    distinguished identically-zero result.
    """
    x = np.asarray(x, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    if x.shape != v.shape or x.ndim != 1:
        raise ValueError("x and values must be 1-d arrays of equal length")
    if np.any(x <= 0):
        raise ValueError("sample abscissae must be positive")
    floor = np.max(v) * 1e-13 if np.max(v) > 0 else 0.0
    keep = v > floor
    if not np.any(keep):
        return DecayFit(np.nan, np.nan, 0.0, 0, identically_zero=True)
    lx, lv = np.log(x[keep]), np.log(v[keep])
    if lx.size < 2 or np.ptp(lx) == 0:
        raise ValueError("need at least two distinct abscissae")
    slope, intercept = np.polyfit(lx, lv, 1)
    const = float(np.exp(intercept))
    compensated = v[keep] * x[keep] ** (-slope)
    residual = float(np.max(np.abs(compensated / const - 1.0)))
    return DecayFit(float(slope), const, residual, int(keep.sum()))


def modified_bracket(r, r_flat: float):
    """Modified bracket: 1 on [0, r_flat], r beyond 2 r_flat, C^2 in between.

    The blend is the cubic Hermite interpolant matching value and slope at
    both ends of [r_flat, 2 r_flat]; it is monotone for any r_flat > 0.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("negative radius")
    if r_flat <= 0:
        raise ValueError("r_flat must be positive")
    a, b = r_flat, 2.0 * r_flat
    t = np.clip((r - a) / (b - a), 0.0, 1.0)
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2
    blend = h00 * 1.0 + h10 * 0.0 + h01 * b + h11 * (b - a)
    out = np.where(r <= a, 1.0, np.where(r >= b, r, blend))
    return out if out.ndim else float(out)


def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, exp(-1/x) glue between."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.maximum(x, 1e-300)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.maximum(1.0 - x, 1e-300)), 0.0)
    out = a / (a + b)
    return out if out.ndim else float(out)


def smooth_bump(x, lo: float, hi: float, margin: float = 0.25):
    """Smooth bump equal to 1 on the middle of [lo, hi], 0 outside.

    The rise and fall each occupy a ``margin`` fraction of the interval.
    """
    if hi <= lo:
        raise ValueError("need lo < hi")
    t = (np.asarray(x, dtype=float) - lo) / (hi - lo)
    return smooth_step(t / margin) * smooth_step((1.0 - t) / margin)


def gamma(k: int) -> int:
    """Decay-order multiplier after k normal-form steps: gamma(k) = 2^k - 1.

    Satisfies gamma(0) = 0 and gamma(k+1) = 2 gamma(k) + 1.
    """
    if k < 0 or int(k) != k:
        raise ValueError("k must be a nonnegative integer")
    return 2 ** int(k) - 1


def normal_form_step(
    A: Callable[[np.ndarray], np.ndarray],
    nu: float,
    R: float,
    fit_grid: Optional[np.ndarray] = None,
):
    """One radial normal-form step.

    Solves the balance equation 2(x sigma' + sigma) = 1 - A(x) with
    sigma(R) = 0, i.e. sigma(x) = (2x)^{-1} \\int_R^x (1 - A(t)) dt, and
    returns the radial coefficient after the change of variable
    x -> x + x sigma(x):

        A_next(x) = A(D(x)) * D'(x)^2,   D(x) = x (1 + sigma(x)).

    The balance equation makes D'(x) = 1 + (1 - A(x))/2 exactly, and the
    first-order parts cancel, so A_next - 1 gains a factor <x>^{-nu}.

    Returns ``(sigma, A_next, fit)`` where sigma and A_next are callables
    and ``fit`` certifies the decay of A_next - 1 on ``fit_grid`` (default:
    log-spaced on [10 R, 10^4 R]).
    """
    if R <= 0:
        raise ValueError("inner radius R must be positive")

    # Antiderivative of 1 - A on a dense log grid, evaluated once.
    xs = np.geomspace(R, 2e4 * R, 4000)
    integrand = 1.0 - np.asarray(A(xs), dtype=float)
    # cumulative integral from R by the trapezoid rule on the dense grid
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(xs))])
    cum_spline = CubicSpline(xs, cum)

    def _integral(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        inside = (x >= xs[0]) & (x <= xs[-1])
        out[inside] = cum_spline(x[inside])
        for i in np.nonzero(~inside)[0]:
            out[i] = quad(lambda t: 1.0 - float(A(np.array([t]))[0]), R, float(x[i]), limit=200)[0]
        return out

    def sigma(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return _integral(x) / (2.0 * x)

    def dsigma(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        a = np.asarray(A(x), dtype=float)
        return ((1.0 - a) - 2.0 * sigma(x)) / (2.0 * x)

    def diffeo(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return x * (1.0 + sigma(x))

    def ddiffeo(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return 1.0 + sigma(x) + x * dsigma(x)

    grid = np.geomspace(10.0 * R, 1e4 * R, 60) if fit_grid is None else np.asarray(fit_grid, float)

    dd = ddiffeo(grid)
    if np.min(np.abs(dd)) < 0.1:
        bad = grid[int(np.argmin(np.abs(dd)))]
        raise ArithmeticError(
            f"diffeomorphism not invertible: |1 + sigma + x sigma'| = "
            f"{np.min(np.abs(dd)):.3g} at x = {bad:.6g}"
        )

    def A_next(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.asarray(A(diffeo(x)), dtype=float) * ddiffeo(x) ** 2

    fit = symbol_decay_fit(grid, A_next(grid) - 1.0)
    return sigma, A_next, fit


def invert_diffeo(sigma: Callable, y, bracket_lo: float, bracket_hi: float, tol: float = 1e-12):
    """Invert x -> x(1 + sigma(x)) by Newton with bisection fallback."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x = y.copy()
    for _ in range(60):
        s = sigma(x)
        h = 1e-6 * np.maximum(np.abs(x), 1.0)
        ds = (sigma(x + h) - s) / h
        fx = x * (1.0 + s) - y
        step = fx / (1.0 + s + x * ds)
        x = np.clip(x - step, bracket_lo, bracket_hi)
        if np.max(np.abs(fx)) < tol * np.max(np.abs(y)):
            break
    return x


@dataclass(frozen=True)
class GridFunction:
    """Function of (r, theta) sampled on a tensor grid; values[i, j] = v(r_i, theta_j)."""

    r: np.ndarray
    theta: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.r.size, self.theta.size):
            raise ValueError("values shape must be (len(r), len(theta))")

    def weighted_l2(self, metric: WarpedMetric) -> float:
        """Discrete L^2 norm with measure f(r)^{n-1} dr dtheta."""
        w = metric.f(self.r) ** (metric.n - 1)
        per_theta = np.trapezoid(np.abs(self.values) ** 2 * w[:, None], self.r, axis=0)
        return float(np.sqrt(np.trapezoid(per_theta, self.theta)))


def apply_rescaling(
    v: GridFunction,
    eps: float,
    n: int,
    direction: str = "forward",
    R_M: float = 0.0,
    target_r: Optional[np.ndarray] = None,
) -> GridFunction:
    """Rescaling (D_eps v)(r, theta) = eps^{n/2} v(eps r, theta).

    Forward requires supp(v) in {r > R_M}; the output lives on the dilated
    grid r/eps (support lands in {r > R_M/eps}).  ``direction='inverse'``
    applies the inverse scaling.  If ``target_r`` is given, the result is
    resampled onto it by cubic splines in r (zero outside the data range).
    """
    if not (0.0 < eps <= 1.0):
        raise ValueError("eps must lie in (0, 1]")
    if direction not in ("forward", "inverse"):
        raise ValueError("direction must be 'forward' or 'inverse'")
    scale = eps if direction == "forward" else 1.0 / eps

    support_floor = R_M if direction == "forward" else R_M / eps
    if R_M > 0:
        inside = v.r <= support_floor
        if np.any(np.abs(v.values[inside, :]) > 1e-13 * max(np.max(np.abs(v.values)), 1e-300)):
            raise ValueError(f"support violation: values present at r <= {support_floor:g}")

    new_r = v.r / scale
    new_vals = scale ** (n / 2.0) * v.values
    if target_r is None:
        return GridFunction(new_r, v.theta, new_vals)
    out = np.zeros((len(target_r), v.theta.size), dtype=v.values.dtype)
    spl = CubicSpline(new_r, new_vals, axis=0)
    mask = (target_r >= new_r[0]) & (target_r <= new_r[-1])
    out[mask, :] = spl(np.asarray(target_r)[mask])
    return GridFunction(np.asarray(target_r, dtype=float), v.theta, out)
