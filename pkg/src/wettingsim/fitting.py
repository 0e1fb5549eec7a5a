"""Stretched-exponential fits of correlation curves and derived quantities.

The decay family is amplitude * exp(-(j/length)**exponent).  Fits run a
damped Gauss-Newton iteration in (log amplitude, log length, log exponent),
which keeps all three parameters positive without constraints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, InvalidParamsError, NoCrossingError
from .observables import CorrelationEstimate

DEFAULT_FIT_RANGE = (0.0, 100.0)
DEFAULT_NOISE_FLOOR_SIGMA = 3.0
MAX_ITERATIONS = 200
PARAM_TOL = 1e-10


@dataclass
class StretchedExpFit:
    """Fitted decay amplitude * exp(-(j/length)**exponent) over fit_range."""

    amplitude: float
    length: float
    exponent: float
    rms_residual: float
    fit_range: tuple[float, float]
    converged: bool
    n_points: int


def stretched_exp(j, amplitude: float, length: float, exponent: float):
    """Evaluate the decay curve; j may be scalar or array."""
    j = np.asarray(j, dtype=np.float64)
    return amplitude * np.exp(-((j / length) ** exponent))


def _usable_points(estimate: CorrelationEstimate, lo: float, hi: float, noise_floor_sigma: float):
    j = estimate.lags.astype(np.float64)
    mask = (j >= lo) & (j <= hi) & (estimate.f > 0)
    if estimate.stderr_defined:
        mask &= estimate.f >= noise_floor_sigma * estimate.stderr
    return j[mask], estimate.f[mask], estimate.stderr[mask]


def _initial_guess(estimate: CorrelationEstimate) -> tuple[float, float]:
    """(amplitude, length) start values from the full curve.

    Length starts at the first lag where f drops to f(0)/e, linearly
    interpolated between lag neighbors.
    """
    f = estimate.f
    a0 = float(f[0]) if f[0] > 0 else float(np.max(f[f > 0]))
    target = a0 / math.e
    b0 = float(estimate.max_lag) / 2.0 or 1.0
    below = np.nonzero(f <= target)[0]
    if below.size and below[0] > 0:
        k = below[0]
        frac = (f[k - 1] - target) / (f[k - 1] - f[k])
        b0 = (k - 1) + float(frac)
    return a0, max(b0, 1e-6)


def _gauss_newton(j, f, weights, a0, b0, c0):
    theta = np.log([a0, b0, c0])
    sw = np.sqrt(weights)

    def residuals(th):
        a, b, c = np.exp(th)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            t = (j / b) ** c
            logjb = np.where(j > 0, np.log(np.where(j > 0, j, 1.0) / b), 0.0)
        m = a * np.exp(-t)
        r = sw * (m - f)
        jac = np.column_stack((m, m * c * t, -m * c * t * logjb)) * sw[:, None]
        return r, jac

    r, jac = residuals(theta)
    ssr = float(r @ r)
    converged = False
    for _ in range(MAX_ITERATIONS):
        delta, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        step = 1.0
        improved = False
        for _ in range(50):
            cand = theta + step * delta
            r_new, jac_new = residuals(cand)
            ssr_new = float(r_new @ r_new)
            if ssr_new <= ssr:
                theta, r, jac, ssr = cand, r_new, jac_new, ssr_new
                improved = True
                break
            step *= 0.5
        if not improved:
            # stuck in the line search; accept current iterate
            converged = float(np.max(np.abs(delta))) < math.sqrt(PARAM_TOL)
            break
        if float(np.max(np.abs(step * delta))) < PARAM_TOL:
            converged = True
            break
    a, b, c = np.exp(theta)
    return float(a), float(b), float(c), converged


def fit_stretched_exp(
    estimate: CorrelationEstimate,
    fit_range: tuple[float, float] = DEFAULT_FIT_RANGE,
    noise_floor_sigma: float = DEFAULT_NOISE_FLOOR_SIGMA,
) -> StretchedExpFit:
    """Weighted least-squares fit of f(j) over the given lag range.

    Weights are 1/stderr^2 when errors are available, unit otherwise.
    Points with f <= 0 or below the noise floor (f < noise_floor_sigma *
    stderr) are excluded.  Non-convergence returns the best iterate with
    ``converged=False``.
    """
    lo, hi = fit_range
    j, f, err = _usable_points(estimate, lo, hi, noise_floor_sigma)
    if j.size < 4:
        raise InsufficientDataError(
            f"need >= 4 usable lags in [{lo}, {hi}], found {j.size}"
        )
    weights = 1.0 / err**2 if np.all(err > 0) else np.ones_like(f)
    a0, b0 = _initial_guess(estimate)
    a, b, c, converged = _gauss_newton(j, f, weights, a0, b0, 1.0)
    resid = stretched_exp(j, a, b, c) - f
    return StretchedExpFit(
        amplitude=a,
        length=b,
        exponent=c,
        rms_residual=float(np.sqrt(np.mean(resid**2))),
        fit_range=(float(lo), float(hi)),
        converged=converged,
        n_points=int(j.size),
    )


def inflection_point(fit: StretchedExpFit) -> float:
    """Lag where the fitted curve switches concave -> convex.

    length * ((exponent-1)/exponent)**(1/exponent) for exponent > 1; a
    pure (or compressed) exponential is convex everywhere, so 0.
    """
    c = fit.exponent
    if c <= 1.0:
        return 0.0
    return fit.length * ((c - 1.0) / c) ** (1.0 / c)


def split_range_fits(
    estimate: CorrelationEstimate,
    split: float,
    noise_floor_sigma: float = DEFAULT_NOISE_FLOOR_SIGMA,
) -> tuple[StretchedExpFit, StretchedExpFit]:
    """Independent fits over lags <= split and lags > split.

    The spread of the two exponents brackets the uncertainty of the
    full-range exponent.
    """
    low = fit_stretched_exp(estimate, (0.0, float(split)), noise_floor_sigma)
    high = fit_stretched_exp(
        estimate, (math.nextafter(float(split), math.inf), float(estimate.max_lag)),
        noise_floor_sigma,
    )
    return low, high


def common_point(curves, labels=None):
    """Median pairwise crossing of correlation curves on a shared lag grid.

    Returns (j_star, f_star, dispersion): the median crossing lag over all
    curve pairs with a strict sign change, the median curve value there,
    and the standard deviation of the pair crossings as a quality measure.
    Pairs whose difference never changes sign are skipped; if all pairs
    are skipped a NoCrossingError is raised.
    """
    curves = list(curves)
    if len(curves) < 2:
        raise InsufficientDataError("common point needs >= 2 curves")
    max_lag = curves[0].max_lag
    if any(c.max_lag != max_lag for c in curves):
        raise InvalidSizeError("curves must share the lag grid")
    lags = np.arange(max_lag + 1, dtype=np.float64)
    crossings = []
    for p in range(len(curves)):
        for q in range(p + 1, len(curves)):
            d = curves[p].f - curves[q].f
            sign_change = np.nonzero(d[:-1] * d[1:] < 0)[0]
            if sign_change.size == 0:
                continue
            i = int(sign_change[0])
            crossings.append(i + d[i] / (d[i] - d[i + 1]))
    if not crossings:
        raise NoCrossingError("no curve pair difference changes sign")
    crossings = np.array(crossings)
    j_star = float(np.median(crossings))
    f_star = float(np.median([np.interp(j_star, lags, c.f) for c in curves]))
    return j_star, f_star, float(crossings.std())


def scaling_exponent(points):
    """Log-log least-squares slope of value vs pressure.

    ``points`` is a sequence of (pressure, value) pairs, all positive.
    Returns (slope, intercept, slope_stderr); the intercept is in log
    (natural) units.
    """
    points = list(points)
    if len(points) < 3:
        raise InsufficientDataError("scaling fit needs >= 3 points")
    pressures = np.array([p for p, _ in points], dtype=np.float64)
    values = np.array([v for _, v in points], dtype=np.float64)
    if np.any(pressures <= 0) or np.any(values <= 0):
        raise InvalidParamsError("scaling fit needs positive pressures and values")
    x = np.log(pressures)
    y = np.log(values)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ y) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    dof = len(points) - 2
    stderr = math.sqrt(max(float(resid @ resid), 0.0) / dof / sxx) if dof > 0 else 0.0
    return slope, intercept, stderr
