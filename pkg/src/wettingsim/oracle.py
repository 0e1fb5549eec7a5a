"""Exact Gibbs expectations for small systems via transfer operators.

Heights are discretized on per-site trapezoid grids; the kernel between
neighboring sites i, i+1 is

    T_i[x, y] = w_y * exp(-J |x - y| - K y),    y >= substrate[i+1],

with the quadrature weight folded into the column.  The trace of the
cyclic product gives the periodic partition function; height moments
follow from diagonal insertions.  Every stored product carries a running
log scale so that nothing under- or overflows.

This module is the designated generator of trusted values for validating
the Monte-Carlo pipeline: periodic moments check the sweep dynamics, the
row-normalized chain marginals check the forward sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParamsError
from .model import ModelParams
from .substrate import SubstrateSample

# h_max must clear every substrate peak by at least this many units of 1/K,
# else the truncated tail mass is not negligible against the moments.
MIN_MARGIN_OVER_PRESSURE = 10.0
DEFAULT_MARGIN_OVER_PRESSURE = 12.0


@dataclass(frozen=True)
class HeightGrid:
    """Uniform per-site grids: nodes at floor, floor + delta, ..., <= h_max."""

    delta: float
    h_max: float

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise InvalidParamsError(f"grid spacing must be > 0, got {self.delta}")
        if not math.isfinite(self.h_max):
            raise InvalidParamsError("h_max must be finite")

    @classmethod
    def for_model(
        cls,
        substrate: SubstrateSample,
        params: ModelParams,
        delta: float = 0.02,
        margin_over_pressure: float = DEFAULT_MARGIN_OVER_PRESSURE,
    ) -> "HeightGrid":
        h_max = float(substrate.heights.max()) + margin_over_pressure / params.pressure
        return cls(delta=delta, h_max=h_max)

    def nodes(self, floor: float) -> np.ndarray:
        steps = int(math.floor((self.h_max - floor) / self.delta))
        if steps < 1:
            raise InvalidParamsError(
                f"empty node set: h_max {self.h_max} leaves no room above floor {floor}"
            )
        return floor + self.delta * np.arange(steps + 1)

    def weights(self, nodes: np.ndarray) -> np.ndarray:
        w = np.full(nodes.size, self.delta)
        w[0] = w[-1] = self.delta / 2.0
        return w

    def refined(self) -> "HeightGrid":
        return HeightGrid(delta=self.delta / 2.0, h_max=self.h_max)


@dataclass
class TransferOperators:
    """Normalized bond kernels plus their log scales and node geometry."""

    matrices: list[np.ndarray]
    log_scales: list[float]
    node_sets: list[np.ndarray]
    weights: list[np.ndarray]
    params: ModelParams

    @property
    def n_sites(self) -> int:
        return len(self.matrices)


def build_transfer_operators(
    substrate: SubstrateSample, params: ModelParams, grid: HeightGrid
) -> TransferOperators:
    """Kernel matrices for every periodic bond of the substrate."""
    peak = float(substrate.heights.max())
    if grid.h_max < peak + MIN_MARGIN_OVER_PRESSURE / params.pressure:
        raise InvalidParamsError(
            f"h_max {grid.h_max} must exceed the substrate peak {peak} "
            f"by at least {MIN_MARGIN_OVER_PRESSURE}/pressure"
        )
    J, K = params.coupling, params.pressure
    n = substrate.n
    node_sets = [grid.nodes(float(s)) for s in substrate.heights]
    weights = [grid.weights(nodes) for nodes in node_sets]
    matrices, log_scales = [], []
    for i in range(n):
        x = node_sets[i][:, None]
        y = node_sets[(i + 1) % n][None, :]
        log_kernel = -J * np.abs(x - y) - K * y + np.log(weights[(i + 1) % n])[None, :]
        scale = float(log_kernel.max())
        matrices.append(np.exp(log_kernel - scale))
        log_scales.append(scale)
    return TransferOperators(matrices, log_scales, node_sets, weights, params)


def _rescaled(matrix: np.ndarray, log_acc: float) -> tuple[np.ndarray, float]:
    scale = float(matrix.max())
    return matrix / scale, log_acc + math.log(scale)


def _prefixes_suffixes(ops: TransferOperators):
    n = ops.n_sites
    g0 = ops.node_sets[0].size
    prefixes = [(np.eye(g0), 0.0)]
    for i in range(n):
        mat, log_acc = prefixes[-1]
        prefixes.append(_rescaled(mat @ ops.matrices[i], log_acc + ops.log_scales[i]))
    suffixes = [None] * (n + 1)
    suffixes[n] = (np.eye(g0), 0.0)
    for i in range(n - 1, -1, -1):
        mat, log_acc = suffixes[i + 1]
        suffixes[i] = _rescaled(ops.matrices[i] @ mat, log_acc + ops.log_scales[i])
    return prefixes, suffixes


@dataclass
class OracleMoments:
    """Exact periodic-ensemble moments on the quadrature grid."""

    mean_heights: np.ndarray  # <h_i>
    pair_moments: np.ndarray  # [i, j] = <h_i h_{(i+j) mod N}>, j = 0..max_lag
    f: np.ndarray  # site-averaged covariance per lag
    max_lag: int
    log_partition: float


def exact_moments_periodic(ops: TransferOperators, max_lag: int | None = None) -> OracleMoments:
    """Moments of the periodic Gibbs measure via the cyclic operator trace."""
    n = ops.n_sites
    if max_lag is None:
        max_lag = n // 2
    if not 0 <= max_lag < n:
        raise InvalidParamsError(f"max_lag must lie in [0, {n - 1}], got {max_lag}")
    prefixes, suffixes = _prefixes_suffixes(ops)
    full, full_log = prefixes[n]
    log_z = math.log(float(np.trace(full))) + full_log

    means = np.empty(n)
    squares = np.empty(n)
    for i in range(n):
        pmat, plog = prefixes[i]
        smat, slog = suffixes[i]
        diag = np.einsum("xa,ax->x", smat, pmat)
        scale = math.exp(plog + slog - log_z)
        nodes = ops.node_sets[i]
        means[i] = float(diag @ nodes) * scale
        squares[i] = float(diag @ nodes**2) * scale

    # <h_p h_q> for every unordered site pair within max_lag of each other
    pair_value = {}
    for p in range(n - 1):
        pmat, plog = prefixes[p]
        x = pmat * ops.node_sets[p][None, :]
        xlog = plog
        for q in range(p + 1, n):
            x = x @ ops.matrices[q - 1]
            xlog += ops.log_scales[q - 1]
            x, xlog = _rescaled(x, xlog)
            dist = q - p
            if min(dist, n - dist) > max_lag:
                continue
            smat, slog = suffixes[q]
            diag = np.einsum("xa,ax->x", smat, x)
            pair_value[(p, q)] = float(diag @ ops.node_sets[q]) * math.exp(
                xlog + slog - log_z
            )

    pair_moments = np.empty((n, max_lag + 1))
    pair_moments[:, 0] = squares
    for j in range(1, max_lag + 1):
        for i in range(n):
            q = (i + j) % n
            pair_moments[i, j] = pair_value[(min(i, q), max(i, q))]
    f = np.array(
        [
            np.mean(pair_moments[:, j] - means * means[(np.arange(n) + j) % n])
            for j in range(max_lag + 1)
        ]
    )
    return OracleMoments(means, pair_moments, f, max_lag, log_z)


def exact_site_marginals(ops: TransferOperators) -> list[np.ndarray]:
    """Per-site node masses of the periodic measure (each sums to 1)."""
    n = ops.n_sites
    prefixes, suffixes = _prefixes_suffixes(ops)
    _, full_log = prefixes[n]
    log_z = math.log(float(np.trace(prefixes[n][0]))) + full_log
    masses = []
    for i in range(n):
        pmat, plog = prefixes[i]
        smat, slog = suffixes[i]
        diag = np.einsum("xa,ax->x", smat, pmat)
        masses.append(diag * math.exp(plog + slog - log_z))
    return masses


@dataclass
class ChainMarginals:
    """Exact marginals of the fixed-start forward chain on the grid."""

    node_sets: list[np.ndarray]
    masses: list[np.ndarray]
    weights: list[np.ndarray]


def exact_chain_marginals(
    substrate: SubstrateSample, params: ModelParams, grid: HeightGrid, h_start: float
) -> ChainMarginals:
    """Iterate the row-normalized transition kernel from a fixed start.

    Site 0 is the deterministic start (a point mass); sites 1..n-1 carry
    quadrature masses.  Row normalization is the chain's own per-step
    normalization, distinct from the periodic Gibbs trace.
    """
    s = substrate.heights
    if h_start < s[0]:
        raise InvalidParamsError(f"h_start {h_start} below substrate height {s[0]}")
    J, K = params.coupling, params.pressure
    node_sets = [np.array([h_start])]
    masses = [np.array([1.0])]
    weights = [np.array([1.0])]
    prev_nodes = node_sets[0]
    prev_mass = masses[0]
    for i in range(1, substrate.n):
        nodes = grid.nodes(float(s[i]))
        w = grid.weights(nodes)
        log_kernel = (
            -J * np.abs(prev_nodes[:, None] - nodes[None, :])
            - K * nodes[None, :]
            + np.log(w)[None, :]
        )
        log_kernel -= log_kernel.max(axis=1, keepdims=True)
        kernel = np.exp(log_kernel)
        kernel /= kernel.sum(axis=1, keepdims=True)
        prev_mass = prev_mass @ kernel
        prev_nodes = nodes
        node_sets.append(nodes)
        masses.append(prev_mass)
        weights.append(w)
    return ChainMarginals(node_sets, masses, weights)


def marginal_cdf(nodes: np.ndarray, masses: np.ndarray, weights: np.ndarray):
    """Piecewise-linear CDF interpolator from quadrature masses.

    Integrates the implied density (mass/weight) with the trapezoid rule,
    then normalizes; suitable for KS comparisons against samples.
    """
    density = masses / weights
    gaps = np.diff(nodes)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (density[:-1] + density[1:]) * gaps)])
    cum /= cum[-1]

    def cdf(x):
        return np.interp(x, nodes, cum, left=0.0, right=1.0)

    return cdf
