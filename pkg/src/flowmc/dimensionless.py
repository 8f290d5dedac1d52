"""Physical channel parameters and their dimensionless counterparts.

Every other module works from a :class:`DimensionlessEnv`.  Lengths are
scaled by a reference length ``L`` (the transmitter distance by default),
times by ``L**2 / D`` and molecule counts by the number released per
emission, so a dimensionless expected count is a per-emission fraction.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class PhysicalEnv:
    """Channel parameters in SI units.

    The receiver is a sphere of radius ``r_obs`` centred at the origin and
    the transmitter sits at ``(-x0, 0, 0)``.  A positive ``velocity[0]``
    points from the transmitter towards the receiver.
    """

    diffusion_coefficient: float = 1e-9
    x0: float = 0.5e-6
    r_obs: float = 50e-9
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    n_em: int = 10_000
    t_int: float = 0.2e-3
    noise_mean: float = 1.0
    b_len: int = 100
    p1: float = 0.5
    m: int = 5
    dt: float = 0.5e-6

    def __post_init__(self):
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        if len(self.velocity) != 3:
            raise ValueError("velocity must have three components")
        checks = [
            (self.diffusion_coefficient > 0, "diffusion coefficient must be positive"),
            (self.x0 > 0, "transmitter distance must be positive"),
            (0 < self.r_obs < self.x0, "receiver radius must lie in (0, x0)"),
            (self.n_em >= 0, "molecules per emission must be non-negative"),
            (self.t_int > 0, "bit interval must be positive"),
            (self.m >= 1, "need at least one sample per interval"),
            (self.b_len >= 1, "sequence length must be at least 1"),
            (0.0 <= self.p1 <= 1.0, "p1 must be a probability"),
            (self.dt > 0, "simulation step must be positive"),
            (self.noise_mean >= 0, "noise mean must be non-negative"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        if not all(math.isfinite(v) for v in self.velocity):
            raise ValueError("velocity must be finite")

    def with_flow(self, vx: float = 0.0, vy: float = 0.0, vz: float = 0.0) -> "PhysicalEnv":
        return replace(self, velocity=(vx, vy, vz))

    def with_peclet(self, pe_par: float, pe_perp: float = 0.0,
                    reference_length: float | None = None) -> "PhysicalEnv":
        """Copy with the flow set from Peclet numbers (perpendicular part along y)."""
        ref = self.x0 if reference_length is None else reference_length
        scale = self.diffusion_coefficient / ref
        return replace(self, velocity=(pe_par * scale, pe_perp * scale, 0.0))

    def digest(self) -> str:
        """Short stable hash of all parameters, used to tag output rows."""
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass(frozen=True)
class DimensionlessEnv:
    x0: float
    r_obs: float
    pe_par: float
    pe_perp: float
    t_int: float
    n_em: int
    b_len: int
    m: int
    p1: float
    noise_mean: float
    reference_length: float = field(default=1.0, compare=False)
    diffusion_coefficient: float = field(default=1.0, compare=False)

    def __post_init__(self):
        if not (self.x0 > 0 and 0 < self.r_obs < self.x0):
            raise ValueError("need 0 < r_obs < x0")
        if self.t_int <= 0:
            raise ValueError("bit interval must be positive")

    @property
    def receiver_volume(self) -> float:
        return 4.0 / 3.0 * math.pi * self.r_obs**3

    @property
    def offsets(self) -> tuple[float, ...]:
        """Equally spaced sample offsets m * t_int / M, m = 1..M."""
        return tuple(k * self.t_int / self.m for k in range(1, self.m + 1))

    def with_peclet(self, pe_par: float, pe_perp: float = 0.0) -> "DimensionlessEnv":
        return replace(self, pe_par=float(pe_par), pe_perp=abs(float(pe_perp)))

    def replace(self, **changes) -> "DimensionlessEnv":
        return replace(self, **changes)


def to_dimensionless(env: PhysicalEnv, reference_length: float | None = None) -> DimensionlessEnv:
    """Scale ``env`` by ``reference_length`` (defaults to the transmitter distance).

    The two perpendicular velocity components are folded into one Peclet
    number along y; the model is axially symmetric about the x axis so this
    rotation loses nothing.
    """
    L = env.x0 if reference_length is None else float(reference_length)
    if not L > 0:
        raise ValueError(f"reference length must be positive, got {L!r}")
    D = env.diffusion_coefficient
    vx, vy, vz = env.velocity
    return DimensionlessEnv(
        x0=env.x0 / L,
        r_obs=env.r_obs / L,
        pe_par=vx * L / D,
        pe_perp=math.hypot(vy, vz) * L / D,
        t_int=D * env.t_int / L**2,
        n_em=env.n_em,
        b_len=env.b_len,
        m=env.m,
        p1=env.p1,
        noise_mean=env.noise_mean,
        reference_length=L,
        diffusion_coefficient=D,
    )


def to_dimensional_time(t_star, env: DimensionlessEnv):
    return t_star * env.reference_length**2 / env.diffusion_coefficient


def to_dimensionless_time(t, env: DimensionlessEnv):
    return t * env.diffusion_coefficient / env.reference_length**2


# config keys -> (PhysicalEnv field, multiplier to SI)
_CONFIG_KEYS: dict[str, tuple[str, float]] = {
    "n_em": ("n_em", 1),
    "p1": ("p1", 1.0),
    "b_len": ("b_len", 1),
    "t_int_ms": ("t_int", 1e-3),
    "d_a": ("diffusion_coefficient", 1.0),
    "x0_um": ("x0", 1e-6),
    "r_obs_nm": ("r_obs", 1e-9),
    "noise_mean": ("noise_mean", 1.0),
    "dt_us": ("dt", 1e-6),
    "m": ("m", 1),
}


def env_from_mapping(data: Mapping[str, Any], base: PhysicalEnv | None = None) -> PhysicalEnv:
    """Build a :class:`PhysicalEnv` from config-style keys.

    Nested tables are flattened, so keys may live at top level or in any
    section (``[channel]``, ``[flow]`` ...).  Unknown keys raise.
    """
    flat: dict[str, Any] = {}

    def walk(d: Mapping[str, Any]):
        for k, v in d.items():
            if isinstance(v, Mapping):
                walk(v)
            else:
                flat[k] = v

    walk(data)
    changes: dict[str, Any] = {}
    for key, value in flat.items():
        if key == "v_mm_s":
            if len(value) != 3:
                raise ValueError("v_mm_s needs three components")
            changes["velocity"] = tuple(float(v) * 1e-3 for v in value)
        elif key in _CONFIG_KEYS:
            name, mult = _CONFIG_KEYS[key]
            changes[name] = int(value) if isinstance(mult, int) else float(value) * mult
        else:
            raise KeyError(f"unknown configuration key {key!r}")
    return replace(base or PhysicalEnv(), **changes)


def load_env(path: str | Path, base: PhysicalEnv | None = None) -> PhysicalEnv:
    with open(path, "rb") as fh:
        return env_from_mapping(tomllib.load(fh), base)


def table_one_env(**overrides) -> PhysicalEnv:
    """The reference detector-study environment (10^4 molecules, 0.2 ms bits, ...)."""
    return replace(PhysicalEnv(), **overrides)
