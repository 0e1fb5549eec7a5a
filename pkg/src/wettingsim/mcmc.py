"""Heat-bath Monte Carlo dynamics with checkerboard (even/odd) sweeps.

One Monte-Carlo sweep per site (MCS/S) resamples every even site from its
exact conditional given the frozen odd sites, then every odd site given
the updated even sites.  Each site's new height is an exact inverse-CDF
draw from its piecewise-exponential conditional; there is no rejection
step and no discretization.

Randomness is addressed by (master seed, stream, sweep index, phase, site
position), so a sweep's outcome does not depend on execution order: the
vectorized update and a site-by-site serial update produce bit-identical
configurations, and interrupted runs resume exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _rng
from .errors import InvalidParamsError, InvalidSizeError, MalformedFileError
from .model import (
    FLAT_SLOPE_EPS,
    FieldConfig,
    ModelParams,
    PiecewiseExpDensity,
    _piece_quantile,
    film_volume,
    local_conditional,
    log_piece_mass,
    total_energy,
)
from .substrate import Distribution, SubstrateSample, generate_substrate

_V_MAX = 1.0 - 2.0**-53

CHECKPOINT_MAGIC = "# wettingsim-checkpoint v1"


@dataclass(frozen=True)
class Schedule:
    """Sweep counts for one simulation.

    ``measure_every`` is in sweeps; ``n_measurements`` may be zero for a
    thermalization-only run.
    """

    thermalization_sweeps: int
    measure_every: int
    n_measurements: int

    def __post_init__(self):
        if self.thermalization_sweeps < 0 or self.n_measurements < 0:
            raise InvalidParamsError("sweep counts must be >= 0")
        if self.measure_every < 1:
            raise InvalidParamsError("measure_every must be >= 1")

    @property
    def total_sweeps(self) -> int:
        return self.thermalization_sweeps + self.measure_every * self.n_measurements


@dataclass(frozen=True)
class RunSeed:
    """Addressed randomness for one simulation.

    ``master`` seeds the Philox key; ``stream`` separates simulations that
    share a master seed (e.g. jobs of one experiment).  Uniforms for sweep
    ``t``, phase ``p``, site slot ``k`` come from counter (t, p) word ``k``,
    so distinct (site, sweep) pairs never share a variate.
    """

    master: int
    stream: int = 0

    def sweep_uniforms(self, sweep_index: int, phase: int, n: int) -> np.ndarray:
        return _rng.sweep_uniforms(self.master, self.stream, sweep_index, phase, n)


def init_config(substrate: SubstrateSample, params: ModelParams) -> FieldConfig:
    """Deterministic start: film at substrate + 1/pressure everywhere."""
    return FieldConfig(substrate.heights + 1.0 / params.pressure, substrate)


def heat_bath_draw(density: PiecewiseExpDensity, u):
    """Exact inverse-CDF sample(s) from a single-site conditional."""
    return density.quantile(u)


def _draw_conditional_batch(
    J: float, K: float, left: np.ndarray, right: np.ndarray, floor: np.ndarray, u: np.ndarray
) -> np.ndarray:
    """Vectorized exact draw from exp(-J|h-left| - J|h-right| - K h) on [floor, inf).

    Operates element-wise, so slicing the inputs one site at a time yields
    bit-identical results (the serial/parallel equality contract).  All
    mass bookkeeping is in the log domain; empty pieces get -inf mass and
    their lanes are discarded by the final selection.
    """
    lo = np.minimum(left, right)
    hi = np.maximum(left, right)
    a1 = np.maximum(floor, lo)
    a2 = np.maximum(floor, hi)
    d1 = a1 - floor
    d2 = a2 - a1
    s1 = 2.0 * J - K
    s3 = 2.0 * J + K

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t1 = s1 * d1
        t2 = -K * d2
        # log masses of the three pieces, density anchored to 1 at the floor
        if abs(s1) < FLAT_SLOPE_EPS:
            lm0 = np.log(d1) + np.log1p(0.5 * t1)
        elif s1 > 0:
            lm0 = t1 + np.log(-np.expm1(-t1)) - math.log(s1)
        else:
            lm0 = np.log(-np.expm1(t1)) - math.log(-s1)
        lm1 = t1 + np.log(-np.expm1(t2)) - math.log(K)
        lm2 = t1 + t2 - math.log(s3)
        lm0 = np.where(d1 > 0.0, lm0, -np.inf)
        lm1 = np.where(d2 > 0.0, lm1, -np.inf)

        peak = np.maximum(np.maximum(lm0, lm1), lm2)
        total = peak + np.log(np.exp(lm0 - peak) + np.exp(lm1 - peak) + np.exp(lm2 - peak))
        p0 = np.exp(lm0 - total)
        p1 = np.exp(lm1 - total)
        p2 = np.exp(lm2 - total)
        c1 = p0
        c2 = p0 + p1

        # piece-local quantiles; lanes belonging to other pieces hold garbage
        v0 = u / p0
        if abs(s1) < FLAT_SLOPE_EPS:
            h0 = floor + v0 * d1
        elif s1 > 0:
            h0 = a1 + np.log(v0 + (1.0 - v0) * np.exp(-t1)) / s1
        else:
            h0 = floor + np.log1p(v0 * np.expm1(t1)) / s1
        v1 = (u - c1) / p1
        h1 = a1 + np.log1p(v1 * np.expm1(t2)) / (-K)
        v2 = np.minimum((u - c2) / p2, _V_MAX)
        h2 = a2 - np.log1p(-v2) / s3

        h = np.where(u < c1, h0, np.where(u < c2, h1, h2))
    return np.maximum(h, floor)


def checkerboard_sweep(
    config: FieldConfig, params: ModelParams, seed: RunSeed, sweep_index: int
) -> FieldConfig:
    """One MCS/S: resample all even sites, then all odd sites, in place.

    Requires even n (the periodic two-coloring is only proper then).
    """
    n = config.n
    if n % 2 != 0:
        raise InvalidSizeError(f"checkerboard sweep needs even n, got {n}")
    J, K = params.coupling, params.pressure
    h = config.heights
    floors = config.substrate.heights
    half = n // 2

    odd = h[1::2]
    u = seed.sweep_uniforms(sweep_index, 0, half)
    h[0::2] = _draw_conditional_batch(J, K, np.roll(odd, 1), odd, floors[0::2], u)

    even = h[0::2]
    u = seed.sweep_uniforms(sweep_index, 1, half)
    h[1::2] = _draw_conditional_batch(J, K, even, np.roll(even, -1), floors[1::2], u)
    return config


@dataclass
class RunReport:
    """Summary of one simulation run; wall time is the only nondeterministic field."""

    n_sites: int
    sweeps_run: int
    measurements: int
    wall_time_s: float
    final_energy: float
    final_volume: float


@dataclass
class CheckpointState:
    config: FieldConfig
    next_sweep: int
    measurements_done: int
    seed: RunSeed


def run_simulation(
    substrate: SubstrateSample,
    params: ModelParams,
    schedule: Schedule,
    seed: RunSeed,
    sinks=(),
    *,
    resume: CheckpointState | None = None,
    checkpoint_path: str | Path | None = None,
    checkpoint_every: int = 0,
) -> RunReport:
    """Thermalize, then measure on the schedule's cadence.

    Every measured configuration is passed to each sink's ``accumulate``.
    On KeyboardInterrupt a checkpoint is written (if a path was given) and
    the interrupt propagates; resuming reproduces the uninterrupted run
    bit-exactly because sweep randomness is addressed by sweep index.
    Sink state is not checkpointed; resumed sinks see only the remaining
    measurements.
    """
    t0 = time.perf_counter()
    if resume is None:
        config = init_config(substrate, params)
        sweep = 0
        done = 0
    else:
        config = resume.config
        sweep = resume.next_sweep
        done = resume.measurements_done
        seed = resume.seed
        if config.substrate.seed_tuple() != substrate.seed_tuple():
            raise InvalidParamsError("checkpoint substrate does not match the supplied substrate")
    sweeps_at_start = sweep

    def maybe_checkpoint():
        if checkpoint_path and checkpoint_every > 0 and sweep % checkpoint_every == 0:
            save_checkpoint(checkpoint_path, CheckpointState(config, sweep, done, seed))

    try:
        while sweep < schedule.thermalization_sweeps:
            checkerboard_sweep(config, params, seed, sweep)
            sweep += 1
            maybe_checkpoint()
        while done < schedule.n_measurements:
            target = schedule.thermalization_sweeps + (done + 1) * schedule.measure_every
            while sweep < target:
                checkerboard_sweep(config, params, seed, sweep)
                sweep += 1
                maybe_checkpoint()
            for sink in sinks:
                sink.accumulate(config)
            done += 1
    except KeyboardInterrupt:
        if checkpoint_path:
            save_checkpoint(checkpoint_path, CheckpointState(config, sweep, done, seed))
        raise

    return RunReport(
        n_sites=config.n,
        sweeps_run=sweep - sweeps_at_start,
        measurements=done,
        wall_time_s=time.perf_counter() - t0,
        final_energy=total_energy(config, params),
        final_volume=film_volume(config),
    )


def forward_chain_sample(
    substrate: SubstrateSample, params: ModelParams, h_start: float, seed: int
) -> np.ndarray:
    """Exact sequential sample of the open-chain measure, site 0 fixed.

    Each transition density exp(-J|h' - h| - K h') on [floor', inf) has at
    most two exponential pieces and is inverted in closed form, so this is
    a perfect sampler, independent of the sweep dynamics.
    """
    s = substrate.heights
    if h_start < s[0]:
        raise InvalidParamsError(f"h_start {h_start} below substrate height {s[0]}")
    J, K = params.coupling, params.pressure
    decay = J + K
    rise = J - K
    u = _rng.chain_uniforms(seed, s.size - 1)
    h = np.empty(s.size)
    h[0] = prev = float(h_start)
    for i in range(1, s.size):
        floor = s[i]
        ui = u[i - 1]
        if prev <= floor:
            x = floor - math.log1p(-ui) / decay
        else:
            w = prev - floor
            lm1 = log_piece_mass(rise, w)
            lm2 = rise * w - math.log(decay)
            m = max(lm1, lm2)
            p1 = math.exp(lm1 - m) / (math.exp(lm1 - m) + math.exp(lm2 - m))
            if ui < p1:
                x = floor + _piece_quantile(min(ui / p1, _V_MAX), rise, w)
            else:
                v = min((ui - p1) / (1.0 - p1), _V_MAX)
                x = prev - math.log1p(-v) / decay
        h[i] = prev = x
    return h


def save_checkpoint(path: str | Path, state: CheckpointState) -> None:
    """Persist (config, sweep position, RNG address) for bit-exact resume."""
    from .substrate import _data_checksum, _height_lines

    sub = state.config.substrate
    lines = _height_lines(state.config.heights)
    checksum = _data_checksum(lines)
    header = (
        f"{CHECKPOINT_MAGIC}\n"
        f"# substrate_seed={sub.seed} generator={sub.generator_id} n={sub.n} "
        f"distribution={sub.distribution.value}\n"
        f"# master={state.seed.master} stream={state.seed.stream} "
        f"next_sweep={state.next_sweep} measurements_done={state.measurements_done} "
        f"checksum={checksum}\n"
    )
    tmp = Path(path).with_name(Path(path).name + ".tmp")
    tmp.write_text(header + "\n".join(lines) + "\n")
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> CheckpointState:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MalformedFileError(f"cannot read checkpoint {path}: {exc}") from exc
    lines = text.splitlines()
    if len(lines) < 3 or lines[0] != CHECKPOINT_MAGIC:
        raise MalformedFileError(f"{path}: missing checkpoint header")
    fields = {}
    for line in lines[1:3]:
        for token in line.lstrip("# ").split():
            key, _, value = token.partition("=")
            fields[key] = value
    try:
        sub_seed = int(fields["substrate_seed"])
        n = int(fields["n"])
        distribution = Distribution(fields["distribution"])
        generator_id = fields["generator"]
        seed = RunSeed(int(fields["master"]), int(fields["stream"]))
        next_sweep = int(fields["next_sweep"])
        done = int(fields["measurements_done"])
        checksum = fields["checksum"]
    except (KeyError, ValueError) as exc:
        raise MalformedFileError(f"{path}: bad checkpoint fields: {exc}") from exc
    if generator_id != _rng.GENERATOR_ID:
        raise MalformedFileError(f"{path}: unsupported substrate generator {generator_id!r}")
    data_lines = lines[3:]
    if len(data_lines) != n:
        raise MalformedFileError(f"{path}: expected {n} height lines, found {len(data_lines)}")
    from .substrate import _data_checksum

    if _data_checksum(data_lines) != checksum:
        raise MalformedFileError(f"{path}: height data does not match checksum")
    heights = np.array([float(line) for line in data_lines])
    substrate = generate_substrate(n, sub_seed, distribution)
    return CheckpointState(FieldConfig(heights, substrate), next_sweep, done, seed)
