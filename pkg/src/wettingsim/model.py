"""Interface model: parameters, configurations, energy, and the exact
single-site conditional density used by the heat-bath dynamics.

The energy of a periodic film ``h`` over substrate ``s`` is

    E(h) = coupling * sum_i |h[i+1] - h[i]|  +  pressure * sum_i h[i]

with index arithmetic mod n (each periodic bond counted once) and the hard
constraint h[i] >= s[i].  Temperature is fixed at kT = 1; the two couplings
already absorb it.

Conditioned on its two neighbors, a site's height follows a density
proportional to exp(-J|h-left| - J|h-right| - K h) on [floor, inf), which
is piecewise exponential with at most three pieces.  All piece bookkeeping
is done in the log domain so couplings up to ~1e3 neither overflow nor
collapse the total mass to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .errors import InvalidParamsError, InvalidSizeError
from .substrate import SubstrateSample

# Below this |slope|, exponential piece integrals go through the linear
# (flat) formula with a first-order series correction; the exact expression
# (e^{sw}-1)/s has a removable singularity at s = 0.
FLAT_SLOPE_EPS = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """Couplings of the interface Hamiltonian.  kT is fixed at 1."""

    coupling: float  # energy per unit height difference, >= 0
    pressure: float  # energy per unit film height, > 0

    kT: ClassVar[float] = 1.0

    def __post_init__(self):
        if not (self.coupling >= 0 and math.isfinite(self.coupling)):
            raise InvalidParamsError(f"coupling must be finite and >= 0, got {self.coupling}")
        if not (self.pressure > 0 and math.isfinite(self.pressure)):
            raise InvalidParamsError(
                f"pressure must be finite and > 0 for a normalizable ensemble, got {self.pressure}"
            )


@dataclass
class FieldConfig:
    """Periodic film heights over a substrate; heights[i] >= substrate[i].

    Single-writer: the sweep mutates ``heights`` in place, concurrent
    readers are safe between sweeps.
    """

    heights: np.ndarray
    substrate: SubstrateSample

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=np.float64)
        if self.heights.shape != self.substrate.heights.shape:
            raise InvalidSizeError(
                f"heights shape {self.heights.shape} != substrate shape {self.substrate.heights.shape}"
            )
        if np.any(self.heights < self.substrate.heights):
            raise ValueError("film heights must lie on or above the substrate")

    @property
    def n(self) -> int:
        return self.heights.size

    def copy(self) -> "FieldConfig":
        return FieldConfig(self.heights.copy(), self.substrate)


def total_energy(config: FieldConfig, params: ModelParams) -> float:
    """Energy of a periodic configuration, each bond counted once."""
    h = config.heights
    gradient = np.abs(h - np.roll(h, -1)).sum()
    return params.coupling * float(gradient) + params.pressure * float(h.sum())


def film_volume(config: FieldConfig) -> float:
    """Total film volume sum_i (h[i] - s[i]) >= 0."""
    return float((config.heights - config.substrate.heights).sum())


def log_piece_mass(slope: float, width: float) -> float:
    """log of integral_0^width exp(slope * x) dx, stable for |slope*width| up to ~1e4.

    ``width`` may be inf, which requires slope < 0.
    """
    if width == 0.0:
        return -math.inf
    if math.isinf(width):
        if slope >= 0:
            raise InvalidParamsError("infinite piece needs a negative slope")
        return -math.log(-slope)
    t = slope * width
    if abs(slope) < FLAT_SLOPE_EPS:
        return math.log(width) + math.log1p(0.5 * t)
    if t > 0:
        return t + math.log(-math.expm1(-t)) - math.log(slope)
    return math.log(-math.expm1(t)) - math.log(-slope)


def _piece_quantile(v: float, slope: float, width: float) -> float:
    """Offset x in [0, width) with integral_0^x ~ v * integral_0^width."""
    if math.isinf(width):
        return math.log1p(-v) / slope
    t = slope * width
    if abs(slope) < FLAT_SLOPE_EPS:
        return v * width
    if t > 0:
        return width + math.log(v + (1.0 - v) * math.exp(-t)) / slope
    return math.log1p(v * math.expm1(t)) / slope


@dataclass(frozen=True)
class PiecewiseExpDensity:
    """Unnormalized density exp(logw[p] + slopes[p]*(h - breaks[p])) per piece.

    ``breaks`` holds each piece's lower edge, starting at the floor; the
    last piece extends to +inf and must have a negative slope.  Weights
    are anchored at each piece's own lower edge, so no exponential of a
    large positive number is ever formed.
    """

    breaks: np.ndarray
    slopes: np.ndarray
    logw: np.ndarray

    def __post_init__(self):
        breaks = np.asarray(self.breaks, dtype=np.float64)
        slopes = np.asarray(self.slopes, dtype=np.float64)
        logw = np.asarray(self.logw, dtype=np.float64)
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "logw", logw)
        if not (breaks.size == slopes.size == logw.size >= 1):
            raise InvalidParamsError("pieces must be non-empty and consistent")
        if np.any(np.diff(breaks) <= 0):
            raise InvalidParamsError("breakpoints must be strictly increasing")
        if slopes[-1] >= 0:
            raise InvalidParamsError("final piece must decay (slope < 0)")

    @property
    def floor(self) -> float:
        return float(self.breaks[0])

    @property
    def n_pieces(self) -> int:
        return self.breaks.size

    def _widths(self) -> np.ndarray:
        return np.append(np.diff(self.breaks), np.inf)

    def log_masses(self) -> np.ndarray:
        """Per-piece log of the unnormalized integral."""
        widths = self._widths()
        return np.array(
            [
                self.logw[p] + log_piece_mass(float(self.slopes[p]), float(widths[p]))
                for p in range(self.n_pieces)
            ]
        )

    def piece_probabilities(self) -> np.ndarray:
        lm = self.log_masses()
        m = lm.max()
        w = np.exp(lm - m)
        return w / w.sum()

    def cdf(self, h):
        """Normalized CDF, 0 below the floor, -> 1 as h -> inf."""
        scalar = np.ndim(h) == 0
        h = np.atleast_1d(np.asarray(h, dtype=np.float64))
        lm = self.log_masses()
        m = lm.max()
        masses = np.exp(lm - m)
        total = masses.sum()
        cum = np.concatenate([[0.0], np.cumsum(masses)])
        widths = self._widths()
        out = np.empty_like(h)
        for k, x in enumerate(h):
            if x <= self.breaks[0]:
                out[k] = 0.0
                continue
            p = int(np.searchsorted(self.breaks, x, side="right") - 1)
            dx = min(x - self.breaks[p], widths[p])
            partial = math.exp(
                self.logw[p] + log_piece_mass(float(self.slopes[p]), float(dx)) - m
            )
            out[k] = (cum[p] + partial) / total
        return float(out[0]) if scalar else out

    def quantile(self, u):
        """Exact inverse CDF; u in [0, 1) maps to [floor, inf)."""
        scalar = np.ndim(u) == 0
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        if np.any((u < 0) | (u >= 1)):
            raise InvalidParamsError("quantile argument must lie in [0, 1)")
        probs = self.piece_probabilities()
        cum = np.concatenate([[0.0], np.cumsum(probs)])
        cum[-1] = 1.0
        widths = self._widths()
        out = np.empty_like(u)
        for k, uk in enumerate(u):
            p = min(int(np.searchsorted(cum, uk, side="right") - 1), self.n_pieces - 1)
            v = (uk - cum[p]) / probs[p]
            v = min(max(v, 0.0), 1.0 - 2.0**-53)
            out[k] = self.breaks[p] + _piece_quantile(float(v), float(self.slopes[p]), float(widths[p]))
        return float(out[0]) if scalar else out


def local_conditional(
    params: ModelParams, left: float, right: float, floor: float
) -> PiecewiseExpDensity:
    """Conditional density of one site's height given its two neighbors.

    Proportional to exp(-J|h-left| - J|h-right| - K h) on [floor, inf).
    Log-slopes are +2J-K below both neighbors, -K between them, -(2J+K)
    above both; pieces entirely below the floor are dropped.
    """
    if floor < 0:
        raise InvalidParamsError(f"floor must be >= 0, got {floor}")
    J, K = params.coupling, params.pressure
    if J == 0.0:
        return PiecewiseExpDensity([floor], [-K], [0.0])
    lo, hi = (left, right) if left <= right else (right, left)
    breaks = [floor, max(floor, lo), max(floor, hi)]
    slopes = [2.0 * J - K, -K, -(2.0 * J + K)]
    keep_b, keep_s, keep_w = [], [], []
    logw = 0.0
    for p in range(3):
        upper = breaks[p + 1] if p < 2 else math.inf
        if upper > breaks[p]:
            keep_b.append(breaks[p])
            keep_s.append(slopes[p])
            keep_w.append(logw)
        if p < 2:
            logw += slopes[p] * (breaks[p + 1] - breaks[p])
    keep_w = np.array(keep_w) - keep_w[0]  # re-anchor; normalization cancels
    return PiecewiseExpDensity(keep_b, keep_s, keep_w)
