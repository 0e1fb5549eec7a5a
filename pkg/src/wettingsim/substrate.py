"""Quenched random substrates: generation, persistence, characterization.

A substrate is a frozen sequence of non-negative heights, one per lattice
site.  It is fully determined by (seed, generator_id, n, distribution), so
samples are never stored in experiment configs, only their seed tuples.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _rng
from .errors import ChecksumMismatchError, InvalidSizeError, MalformedFileError

FILE_MAGIC = "# wettingsim-substrate v1"


class Distribution(str, enum.Enum):
    """Supported substrate height laws."""

    EXP_MEAN_ONE = "exp_mean_one"
    FLAT_ZERO = "flat_zero"


@dataclass(frozen=True)
class SubstrateSample:
    """One realization of the quenched disorder.

    Heights are immutable; regeneration from the seed tuple reproduces
    them bit-exactly.
    """

    heights: np.ndarray
    seed: int
    generator_id: str
    distribution: Distribution

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=np.float64)
        h.setflags(write=False)
        object.__setattr__(self, "heights", h)
        if h.ndim != 1 or h.size < 2:
            raise InvalidSizeError(f"substrate needs >= 2 sites, got shape {h.shape}")
        if np.any(h < 0) or not np.all(np.isfinite(h)):
            raise ValueError("substrate heights must be finite and >= 0")

    @property
    def n(self) -> int:
        return self.heights.size

    def seed_tuple(self) -> tuple[int, str, int, str]:
        return (self.seed, self.generator_id, self.n, self.distribution.value)


def generate_substrate(n: int, seed: int, distribution: Distribution | str) -> SubstrateSample:
    """Draw a substrate of ``n`` sites.

    ``exp_mean_one`` draws i.i.d. unit-mean exponentials by inverse CDF,
    -log(1-U) with U in [0,1), so log(0) can never occur.  ``flat_zero``
    returns all zeros (the flat-substrate reference case).
    """
    if n < 2:
        raise InvalidSizeError(f"substrate needs n >= 2, got {n}")
    distribution = Distribution(distribution)
    if distribution is Distribution.FLAT_ZERO:
        heights = np.zeros(n)
    else:
        u = _rng.substrate_uniforms(seed, n)
        heights = -np.log1p(-u)
    return SubstrateSample(heights, seed, _rng.GENERATOR_ID, distribution)


def autocovariance(sample: SubstrateSample, max_lag: int | None = None):
    """Circular autocovariance of the substrate heights, lags 0..max_lag.

    Lattice spacing is 1; lag j pairs site i with site (i+j) mod n.
    Returns a :class:`~wettingsim.observables.CorrelationEstimate` with
    zero statistical error (the substrate is a single frozen sample).
    """
    from .observables import CorrelationEstimate, circular_autocovariance

    n = sample.n
    if max_lag is None:
        max_lag = min(100, n // 2)
    f = circular_autocovariance(sample.heights, max_lag)
    return CorrelationEstimate(
        max_lag=max_lag,
        f=f,
        stderr=np.zeros(max_lag + 1),
        n_measurements=1,
        n_replicas=1,
        stderr_defined=False,
    )


def _height_lines(heights: np.ndarray) -> list[str]:
    return [format(h, ".17g") for h in heights]


def _data_checksum(lines: list[str]) -> str:
    digest = hashlib.sha256()
    for line in lines:
        digest.update(line.encode("ascii"))
        digest.update(b"\n")
    return digest.hexdigest()


def save_substrate(sample: SubstrateSample, path: str | Path) -> None:
    """Write a substrate file (see module docs for the format)."""
    lines = _height_lines(sample.heights)
    checksum = _data_checksum(lines)
    header = (
        f"{FILE_MAGIC}\n"
        f"# seed={sample.seed} generator={sample.generator_id} "
        f"n={sample.n} distribution={sample.distribution.value} checksum={checksum}\n"
    )
    Path(path).write_text(header + "\n".join(lines) + "\n")


def load_substrate(path: str | Path) -> SubstrateSample:
    """Read a substrate file, verifying structure and checksum."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MalformedFileError(f"cannot read substrate file {path}: {exc}") from exc
    lines = text.splitlines()
    if len(lines) < 2 or lines[0] != FILE_MAGIC:
        raise MalformedFileError(f"{path}: missing substrate header")
    fields = {}
    for token in lines[1].lstrip("# ").split():
        key, _, value = token.partition("=")
        fields[key] = value
    try:
        seed = int(fields["seed"])
        generator_id = fields["generator"]
        n = int(fields["n"])
        distribution = Distribution(fields["distribution"])
        checksum = fields["checksum"]
    except (KeyError, ValueError) as exc:
        raise MalformedFileError(f"{path}: bad header fields: {exc}") from exc
    data_lines = lines[2:]
    if len(data_lines) != n:
        raise MalformedFileError(f"{path}: expected {n} height lines, found {len(data_lines)}")
    if _data_checksum(data_lines) != checksum:
        raise ChecksumMismatchError(f"{path}: height data does not match header checksum")
    try:
        heights = np.array([float(line) for line in data_lines])
    except ValueError as exc:
        raise MalformedFileError(f"{path}: unparsable height line: {exc}") from exc
    return SubstrateSample(heights, seed, generator_id, distribution)
