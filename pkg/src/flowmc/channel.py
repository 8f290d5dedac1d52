"""Channel realizations: particle-based Brownian dynamics and a Poisson sampler.

Both backends return an :class:`ObservationMatrix` of ``B x M`` counts.
Samples of bit ``j`` (1-based) are taken at ``(j - 1) * T_int + g(m)``
with ``g(m) = m * T_int / M``; emissions happen at ``(j - 1) * T_int``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dimensionless import PhysicalEnv, to_dimensional_time
from .signal import SignalProfile, sample_means

# per-particle future-occupancy bound below which a particle is retired
RETIRE_BOUND = 1e-9


class ParticleBudgetError(RuntimeError):
    pass


def as_generator(rng) -> tuple[np.random.Generator, int | None]:
    """Accept a Generator, SeedSequence, int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng, None
    if isinstance(rng, np.random.SeedSequence):
        seed = rng.entropy if isinstance(rng.entropy, int) and not rng.spawn_key else None
        return np.random.default_rng(rng), seed
    return np.random.default_rng(rng), (int(rng) if rng is not None else None)


@dataclass(frozen=True, eq=False)
class SamplingSchedule:
    t_int: float
    offsets: np.ndarray
    b_len: int

    def __post_init__(self):
        g = np.asarray(self.offsets, dtype=float)
        if g.ndim != 1 or g.size == 0:
            raise ValueError("offsets must be a non-empty 1-D sequence")
        if g[0] <= 0 or np.any(np.diff(g) <= 0) or g[-1] > self.t_int * (1 + 1e-12):
            raise ValueError("offsets must be increasing within (0, T_int]")
        object.__setattr__(self, "offsets", g)

    @classmethod
    def equally_spaced(cls, t_int: float, m: int, b_len: int) -> "SamplingSchedule":
        return cls(t_int, np.arange(1, m + 1) * t_int / m, b_len)

    @classmethod
    def for_env(cls, env: PhysicalEnv) -> "SamplingSchedule":
        return cls.equally_spaced(env.t_int, env.m, env.b_len)

    @property
    def m(self) -> int:
        return self.offsets.size

    @property
    def times(self) -> np.ndarray:
        """Global sample times, shape ``(B, M)``."""
        return np.arange(self.b_len)[:, None] * self.t_int + self.offsets[None, :]


@dataclass(frozen=True, eq=False)
class ObservationMatrix:
    counts: np.ndarray
    schedule: SamplingSchedule
    bits: np.ndarray
    backend: str
    seed: int | None = None

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.shape != (self.schedule.b_len, self.schedule.m):
            raise ValueError(f"counts shape {counts.shape} does not match schedule")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        counts = counts.astype(np.int64)
        counts.setflags(write=False)
        bits = np.asarray(self.bits, dtype=np.int8)
        bits.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "bits", bits)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "backend", "j", "m", "t_seconds", "count", "bit"])
        times = self.schedule.times
        seed = "" if self.seed is None else self.seed
        for j in range(self.schedule.b_len):
            for m in range(self.schedule.m):
                w.writerow([seed, self.backend, j + 1, m + 1, repr(float(times[j, m])),
                            int(self.counts[j, m]), int(self.bits[j])])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path, t_int: float) -> "ObservationMatrix":
        return cls.from_csv_text(Path(path).read_text(), t_int)

    @classmethod
    def from_csv_text(cls, text: str, t_int: float) -> "ObservationMatrix":
        """Inverse of :meth:`to_csv`; ``t_int`` is not stored in the rows."""
        rows = list(csv.DictReader(io.StringIO(text)))
        B = max(int(r["j"]) for r in rows)
        M = max(int(r["m"]) for r in rows)
        counts = np.zeros((B, M), dtype=np.int64)
        bits = np.zeros(B, dtype=np.int8)
        times = np.zeros((B, M))
        for r in rows:
            j, m = int(r["j"]) - 1, int(r["m"]) - 1
            counts[j, m] = int(r["count"])
            bits[j] = int(r["bit"])
            times[j, m] = float(r["t_seconds"])
        schedule = SamplingSchedule(t_int, times[0], B)
        seed = rows[0]["seed"]
        return cls(counts, schedule, bits, rows[0]["backend"], int(seed) if seed else None)


def draw_sequence(p1: float, b_len: int, rng) -> np.ndarray:
    if not 0.0 <= p1 <= 1.0:
        raise ValueError("p1 must be a probability")
    gen, _ = as_generator(rng)
    return (gen.random(b_len) < p1).astype(np.int8)


@dataclass
class ParticleState:
    """Molecule positions in metres, relative to the receiver centre."""

    positions: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    time: float = 0.0
    emissions: int = 0

    @property
    def count(self) -> int:
        return self.positions.shape[0]


def particle_step(state: ParticleState, dt: float, env: PhysicalEnv, rng) -> ParticleState:
    """Advance every molecule by drift plus an independent Gaussian kick.

    Increments over consecutive steps are i.i.d. Gaussians, so one call
    with ``dt = k * env.dt`` has the same law as ``k`` calls with ``env.dt``.
    """
    if dt <= 0:
        raise ValueError("time step must be positive")
    gen, _ = as_generator(rng)
    n = state.count
    drift = np.asarray(env.velocity) * dt
    if n:
        sigma = math.sqrt(2.0 * env.diffusion_coefficient * dt)
        positions = state.positions + drift + sigma * gen.standard_normal((n, 3))
    else:
        positions = state.positions
    return ParticleState(positions, state.time + dt, state.emissions)


def observe_particles(state: ParticleState, r_obs: float, center=(0.0, 0.0, 0.0)) -> int:
    if state.count == 0:
        return 0
    rel = state.positions - np.asarray(center)
    return int(np.count_nonzero(np.einsum("ij,ij->i", rel, rel) <= r_obs * r_obs))


def _retire(positions: np.ndarray, horizon: float, env: PhysicalEnv) -> np.ndarray:
    """Keep particles that can still contribute more than ``RETIRE_BOUND``.

    For each future lag ``s`` the occupancy probability is bounded by the
    receiver volume times the peak density over the sphere, evaluated at
    the point nearest the drifted particle.  The bound is maximised over a
    log grid of lags up to ``horizon``; a margin of 1e-3 covers the grid.
    """
    if horizon <= 0 or positions.shape[0] == 0:
        return positions
    D, r = env.diffusion_coefficient, env.r_obs
    volume = 4.0 / 3.0 * math.pi * r**3
    lags = np.geomspace(env.dt, max(horizon, env.dt), 48)
    v = np.asarray(env.velocity)
    keep = np.zeros(positions.shape[0], dtype=bool)
    for s in lags:
        centre = positions + v * s
        gap = np.maximum(np.linalg.norm(centre, axis=1) - r, 0.0)
        log_bound = math.log(volume) - 1.5 * math.log(4 * math.pi * D * s) - gap**2 / (4 * D * s)
        keep |= log_bound > math.log(RETIRE_BOUND * 1e-3)
    return positions[keep]


def simulate_particle(bits, env: PhysicalEnv, schedule: SamplingSchedule | None = None,
                      rng=None, max_particles: int = 5_000_000,
                      retire: bool = True) -> ObservationMatrix:
    """Brownian-dynamics realization of one transmitted sequence.

    Sample times snap to the nearest multiple of ``env.dt``.  The particles
    are advanced straight from one event (emission or sample) to the next.
    """
    bits = np.asarray(bits, dtype=np.int8)
    schedule = schedule or SamplingSchedule.equally_spaced(env.t_int, env.m, bits.size)
    if bits.size != schedule.b_len:
        raise ValueError("bit sequence length does not match schedule")
    gen, seed = as_generator(rng)
    dt = env.dt

    sample_steps = np.rint(schedule.times / dt).astype(np.int64)
    emit_steps = np.rint(np.arange(bits.size) * schedule.t_int / dt).astype(np.int64)
    counts = np.zeros((schedule.b_len, schedule.m), dtype=np.int64)
    source = np.array([-env.x0, 0.0, 0.0])
    last_step = int(sample_steps[-1, -1])

    state = ParticleState()
    step = 0
    for j in range(bits.size):
        if retire and j > 0 and state.count:
            horizon = (last_step - step) * dt
            state = replace(state, positions=_retire(state.positions, horizon, env))
        if bits[j]:
            if emit_steps[j] > step:
                state = particle_step(state, (emit_steps[j] - step) * dt, env, gen)
                step = int(emit_steps[j])
            if state.count + env.n_em > max_particles:
                raise ParticleBudgetError(
                    f"{state.count + env.n_em} particles exceeds the cap of {max_particles}")
            fresh = np.broadcast_to(source, (env.n_em, 3))
            state = ParticleState(np.vstack([state.positions, fresh]), state.time,
                                  state.emissions + 1)
        for m in range(schedule.m):
            target = int(sample_steps[j, m])
            if target > step:
                state = particle_step(state, (target - step) * dt, env, gen)
                step = target
            counts[j, m] = observe_particles(state, env.r_obs)

    if env.noise_mean > 0:
        counts += gen.poisson(env.noise_mean, counts.shape)
    return ObservationMatrix(counts, schedule, bits, "particle", seed)


def schedule_for_profile(profile: SignalProfile, b_len: int | None = None) -> SamplingSchedule:
    env = profile.env
    return SamplingSchedule(
        to_dimensional_time(env.t_int, env),
        to_dimensional_time(np.asarray(profile.offsets), env),
        env.b_len if b_len is None else b_len,
    )


def simulate_statistical(bits, profile: SignalProfile, schedule: SamplingSchedule | None = None,
                         rng=None) -> ObservationMatrix:
    """Independent Poisson draws with the expected count of every sample."""
    bits = np.asarray(bits, dtype=np.int8)
    schedule = schedule or schedule_for_profile(profile, bits.size)
    if bits.size != schedule.b_len:
        raise ValueError("bit sequence length does not match schedule")
    expected_offsets = to_dimensional_time(np.asarray(profile.offsets), profile.env)
    if schedule.m != profile.m or not np.allclose(schedule.offsets, expected_offsets, rtol=1e-9):
        raise ValueError("schedule offsets do not match the signal profile")
    gen, seed = as_generator(rng)
    counts = gen.poisson(sample_means(bits, profile))
    return ObservationMatrix(counts, schedule, bits, "statistical", seed)
