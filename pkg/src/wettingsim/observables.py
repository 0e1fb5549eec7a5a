"""Measurement accumulation: profiles, autocovariance, spectra, disorder averages.

The central estimator is the time average of the per-measurement circular
spatial autocovariance

    f(j) = (1/T) sum_t [ (1/N) sum_i h_i h_{i+j}  -  ((1/N) sum_i h_i)^2 ]

with index arithmetic mod N.  Statistical errors use batch means (32
contiguous batches by default) so the correlation between measurements a
few sweeps apart does not deflate the error bars.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError, InvalidSizeError
from .model import FieldConfig

DEFAULT_MAX_LAG = 100
DEFAULT_BATCHES = 32


@dataclass
class CorrelationEstimate:
    """f(j) for lags 0..max_lag with per-lag standard errors."""

    max_lag: int
    f: np.ndarray
    stderr: np.ndarray
    n_measurements: int
    n_replicas: int
    stderr_defined: bool = True

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=np.float64)
        self.stderr = np.asarray(self.stderr, dtype=np.float64)
        if self.f.shape != (self.max_lag + 1,) or self.stderr.shape != self.f.shape:
            raise InvalidSizeError("correlation arrays must have max_lag + 1 entries")
        if np.any(self.stderr < 0):
            raise ValueError("standard errors must be >= 0")

    @property
    def lags(self) -> np.ndarray:
        return np.arange(self.max_lag + 1)


@dataclass
class SpectrumEstimate:
    """Power spectrum |(a/L) sum_n h_n e^{2 i pi n a k}|^2 at k = m/(N a), a = 1."""

    spacing: float
    length: float
    psd: np.ndarray
    mean_height: float


def _heights_of(config_or_heights) -> np.ndarray:
    if isinstance(config_or_heights, FieldConfig):
        return config_or_heights.heights
    return np.asarray(config_or_heights, dtype=np.float64)


def circular_autocovariance(heights, max_lag: int) -> np.ndarray:
    """FFT-based circular autocovariance (1/N) sum_i h_i h_{i+j} - hbar^2."""
    h = _heights_of(heights)
    n = h.size
    if not 0 <= max_lag < n:
        raise InvalidSizeError(f"max_lag must lie in [0, {n - 1}], got {max_lag}")
    centered = h - h.mean()
    spectrum = np.abs(np.fft.rfft(centered)) ** 2
    return np.fft.irfft(spectrum, n)[: max_lag + 1] / n


def circular_autocovariance_naive(heights, max_lag: int) -> np.ndarray:
    """Brute-force double-loop reference estimator (small n only)."""
    h = _heights_of(heights)
    n = h.size
    mean = sum(h) / n
    out = np.empty(max_lag + 1)
    for j in range(max_lag + 1):
        acc = 0.0
        for i in range(n):
            acc += h[i] * h[(i + j) % n]
        out[j] = acc / n - mean * mean
    return out


class MeasurementAccumulator:
    """Single-writer sink collecting the mean profile and f(j) per run.

    Per-measurement autocovariances are retained for batch-means errors;
    with ``keep_profiles=True`` per-measurement profiles are retained too
    (intended for small systems, where per-site error bars are needed).
    """

    def __init__(
        self,
        n_sites: int,
        max_lag: int = DEFAULT_MAX_LAG,
        n_batches: int = DEFAULT_BATCHES,
        keep_profiles: bool = False,
    ):
        if max_lag >= n_sites:
            raise InvalidSizeError(f"max_lag {max_lag} must be < n_sites {n_sites}")
        self.n_sites = n_sites
        self.max_lag = max_lag
        self.n_batches = n_batches
        self.keep_profiles = keep_profiles
        self.count = 0
        self.profile_sums = np.zeros(n_sites)
        self._covariances: list[np.ndarray] = []
        self._profiles: list[np.ndarray] = []

    def accumulate(self, config_or_heights) -> None:
        h = _heights_of(config_or_heights)
        if h.size != self.n_sites:
            raise InvalidSizeError(f"expected {self.n_sites} sites, got {h.size}")
        self.profile_sums += h
        self._covariances.append(circular_autocovariance(h, self.max_lag))
        if self.keep_profiles:
            self._profiles.append(h.copy())
        self.count += 1

    def _batch_index(self, count: int, n_batches: int) -> np.ndarray:
        return (np.arange(count) * n_batches) // count

    def _batch_stderr(self, samples: np.ndarray) -> np.ndarray:
        """Standard error of the time average via contiguous batch means."""
        count = samples.shape[0]
        nb = min(self.n_batches, count)
        idx = self._batch_index(count, nb)
        means = np.stack([samples[idx == b].mean(axis=0) for b in range(nb)])
        return means.std(axis=0, ddof=1) / math.sqrt(nb)

    def finalize(self):
        """Return (mean profile, CorrelationEstimate) over all measurements."""
        if self.count == 0:
            raise InsufficientDataError("no measurements accumulated")
        profile = self.profile_sums / self.count
        samples = np.stack(self._covariances)
        f = samples.mean(axis=0)
        if self.count >= 2:
            stderr = self._batch_stderr(samples)
            defined = True
        else:
            stderr = np.zeros(self.max_lag + 1)
            defined = False
        estimate = CorrelationEstimate(
            max_lag=self.max_lag,
            f=f,
            stderr=stderr,
            n_measurements=self.count,
            n_replicas=1,
            stderr_defined=defined,
        )
        return profile, estimate

    def profile_stderr(self) -> np.ndarray:
        """Per-site standard error of the mean profile (needs keep_profiles)."""
        if not self.keep_profiles:
            raise InsufficientDataError("profile errors need keep_profiles=True")
        if self.count < 2:
            raise InsufficientDataError("profile errors need >= 2 measurements")
        return self._batch_stderr(np.stack(self._profiles))


class EnergyTrace:
    """Sink recording energy and film volume of every measured configuration."""

    def __init__(self, params):
        self.params = params
        self.energies: list[float] = []
        self.volumes: list[float] = []

    def accumulate(self, config: FieldConfig) -> None:
        from .model import film_volume, total_energy

        self.energies.append(total_energy(config, self.params))
        self.volumes.append(film_volume(config))


def psd(config_or_heights) -> SpectrumEstimate:
    """Discrete power spectrum of a height vector (or mean profile)."""
    h = _heights_of(config_or_heights)
    n = h.size
    half = np.abs(np.fft.rfft(h)) ** 2 / n**2
    power = np.concatenate([half, half[(n - 1) // 2 : 0 : -1]])
    return SpectrumEstimate(spacing=1.0, length=float(n), psd=power, mean_height=float(h.mean()))


def disorder_average(estimates) -> CorrelationEstimate:
    """Average replica correlation estimates over the quenched disorder.

    The combined error is the between-replica standard error added in
    quadrature with the mean within-replica error.
    """
    estimates = list(estimates)
    if not estimates:
        raise InsufficientDataError("disorder average needs at least one replica")
    max_lag = estimates[0].max_lag
    if any(e.max_lag != max_lag for e in estimates):
        raise InvalidSizeError("replica estimates must share the lag grid")
    stacked = np.stack([e.f for e in estimates])
    n_rep = len(estimates)
    f = stacked.mean(axis=0)
    within = np.stack([e.stderr for e in estimates]).mean(axis=0)
    if n_rep > 1:
        between = stacked.std(axis=0, ddof=1) / math.sqrt(n_rep)
    else:
        between = np.zeros_like(f)
    return CorrelationEstimate(
        max_lag=max_lag,
        f=f,
        stderr=np.hypot(between, within),
        n_measurements=sum(e.n_measurements for e in estimates),
        n_replicas=sum(e.n_replicas for e in estimates),
        stderr_defined=n_rep > 1 or all(e.stderr_defined for e in estimates),
    )


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _meta_lines(meta: dict | None) -> str:
    if not meta:
        return ""
    return "".join(f"# {k}={v}\n" for k, v in meta.items())


def write_correlation_csv(path, estimate: CorrelationEstimate, meta: dict | None = None) -> None:
    rows = [
        f"{j},{format(estimate.f[j], '.17g')},{format(estimate.stderr[j], '.17g')},"
        f"{estimate.n_measurements},{estimate.n_replicas}"
        for j in range(estimate.max_lag + 1)
    ]
    text = _meta_lines(meta) + "j,f_mean,f_stderr,n_meas,n_replicas\n" + "\n".join(rows) + "\n"
    atomic_write_text(path, text)


def read_correlation_csv(path) -> tuple[CorrelationEstimate, dict]:
    lines = Path(path).read_text().splitlines()
    meta = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line.lstrip("# ").partition("=")
            meta[key] = value
        elif line.strip():
            body.append(line)
    if not body or body[0].split(",") != ["j", "f_mean", "f_stderr", "n_meas", "n_replicas"]:
        raise InvalidSizeError(f"{path}: not a correlation CSV")
    js, fs, errs, n_meas, n_rep = [], [], [], 1, 1
    for row in body[1:]:
        parts = row.split(",")
        if len(parts) != 5:
            raise InvalidSizeError(f"{path}: malformed row {row!r}")
        js.append(int(parts[0]))
        fs.append(float(parts[1]))
        errs.append(float(parts[2]))
        n_meas = int(parts[3])
        n_rep = int(parts[4])
    if js != list(range(len(js))):
        raise InvalidSizeError(f"{path}: lag column must be 0..max_lag")
    estimate = CorrelationEstimate(
        max_lag=len(js) - 1,
        f=np.array(fs),
        stderr=np.array(errs),
        n_measurements=n_meas,
        n_replicas=n_rep,
        stderr_defined=bool(np.any(np.array(errs) > 0)),
    )
    return estimate, meta


def write_profile_csv(path, substrate_heights, profile, meta: dict | None = None) -> None:
    substrate_heights = np.asarray(substrate_heights)
    profile = np.asarray(profile)
    rows = [
        f"{i},{format(substrate_heights[i], '.17g')},{format(profile[i], '.17g')}"
        for i in range(profile.size)
    ]
    text = _meta_lines(meta) + "i,substrate,mean_height\n" + "\n".join(rows) + "\n"
    atomic_write_text(path, text)


def write_spectrum_csv(path, spectrum: SpectrumEstimate, meta: dict | None = None) -> None:
    n = spectrum.psd.size
    rows = [
        f"{m},{format(m / (n * spectrum.spacing), '.17g')},{format(spectrum.psd[m], '.17g')}"
        for m in range(n)
    ]
    text = _meta_lines(meta) + "m,k,psd\n" + "\n".join(rows) + "\n"
    atomic_write_text(path, text)
