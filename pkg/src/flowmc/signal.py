"""Expected number of molecules inside the passive receiver.

All functions here take dimensionless time ``t`` and return the expected
count per emitted molecule, i.e. a number in [0, 1].  Multiply by
``env.n_em`` for molecules.

Geometry: receiver of radius ``r_obs`` at the origin, point source at
``(-x0, 0, 0)``, flow ``(pe_par, pe_perp, 0)``.  After time ``t`` the
Gaussian cloud is centred at ``d = (pe_par*t - x0, pe_perp*t, 0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erf, erfcx

from .dimensionless import DimensionlessEnv, to_dimensionless_time

SQRT_PI = math.sqrt(math.pi)
# below this |r_eff| the closed form switches to its analytic limit
R_EFF_EPS = 1e-6
UNDERFLOW = 1e-300


class QuadratureError(RuntimeError):
    """Angular quadrature did not reach tolerance within the allowed depth."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite Gauss-Legendre rule over theta x phi.

    Level ``k`` splits both axes into ``2**k`` panels of ``nodes`` points.
    Refinement stops once two successive levels agree to within ``abs_tol``
    and ``rel_tol`` (relative to the finer value).
    """

    scheme: str = "gauss-legendre"
    nodes: int = 16
    abs_tol: float = 1e-10
    rel_tol: float = 1e-9
    max_depth: int = 7

    def __post_init__(self):
        if self.scheme != "gauss-legendre":
            raise ValueError(f"unsupported quadrature scheme {self.scheme!r}")
        if self.nodes < 8:
            raise ValueError("need at least 8 nodes per axis")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")


DEFAULT_QUADRATURE = QuadratureSpec()


def _check_time(t):
    if np.any(np.asarray(t) <= 0):
        raise ValueError("dimensionless time must be strictly positive")


def cloud_center(t, env: DimensionlessEnv):
    return env.pe_par * t - env.x0, env.pe_perp * t


def point_concentration(x, y, z, t, env: DimensionlessEnv):
    """Dimensionless concentration of one emitted molecule at ``(x, y, z)``."""
    _check_time(t)
    rx = x + env.x0 - env.pe_par * t
    ry = y - env.pe_perp * t
    r2 = rx * rx + ry * ry + z * z
    return (4.0 * math.pi * t) ** -1.5 * np.exp(-r2 / (4.0 * t))


def sphere_count(t, distance, r_obs):
    """Mass of a unit isotropic Gaussian (variance 2t per axis) inside a sphere.

    ``distance`` is the separation between the Gaussian centre and the
    sphere centre.  Stable for large separations (complementary error
    function branch) and at zero separation (analytic limit).
    """
    t = np.asarray(t, dtype=float)
    R = np.abs(np.asarray(distance, dtype=float))
    t, R = np.broadcast_arrays(t, R)
    r = float(r_obs)
    s = 2.0 * np.sqrt(t)
    out = np.empty_like(t)

    near = R < R_EFF_EPS
    inside = (~near) & (R <= r)
    outside = R > r

    if near.any():
        rho = r / s[near]
        out[near] = erf(rho) - 2.0 * rho / SQRT_PI * np.exp(-rho * rho)

    # shared factor: exp(-(R - r)^2/4t) * (1 - exp(-R r / t))
    def tail_term(Rv, tv):
        return np.sqrt(tv / math.pi) / Rv * (-np.expm1(-Rv * r / tv))

    if inside.any():
        Ri, ti, si = R[inside], t[inside], s[inside]
        first = 0.5 * (erf((r - Ri) / si) + erf((r + Ri) / si))
        out[inside] = first - np.exp(-((Ri - r) ** 2) / (4 * ti)) * tail_term(Ri, ti)

    if outside.any():
        Ro, to, so = R[outside], t[outside], s[outside]
        x1 = (Ro - r) / so
        x2 = (Ro + r) / so
        damp = np.exp(-Ro * r / to)
        braces = 0.5 * (erfcx(x1) - erfcx(x2) * damp) - tail_term(Ro, to)
        out[outside] = np.exp(-x1 * x1) * braces

    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def closed_form_parallel(t, env: DimensionlessEnv):
    """Exact expected count for flow along the transmitter-receiver axis."""
    if env.pe_perp != 0:
        raise ValueError("closed form requires pe_perp == 0")
    _check_time(t)
    r_eff = -(env.x0 - env.pe_par * np.asarray(t, dtype=float))
    return sphere_count(t, r_eff, env.r_obs)


def expected_count_uca(t, env: DimensionlessEnv):
    """Receiver volume times the concentration at the receiver centre."""
    _check_time(t)
    t = np.asarray(t, dtype=float)
    r_eff = env.pe_par * t - env.x0
    val = env.receiver_volume * (4.0 * math.pi * t) ** -1.5 * np.exp(
        -r_eff * r_eff / (4.0 * t) - t * env.pe_perp**2 / 4.0
    )
    return val if val.ndim else float(val)


def angular_integrand(theta, phi, t: float, env: DimensionlessEnv):
    """Radially pre-integrated count density on the (theta, phi) rectangle.

    The radial integral of ``r^2 exp(-|r - d|^2 / 4t)`` over ``[0, r_obs]``
    is expressed with ``a = r_obs / (2 sqrt t)`` and ``b = beta1 sqrt t``
    where ``beta1 = sin(theta) (d . u_phi) / 2t``.  Every exponential is
    folded into a non-positive exponent so nothing overflows, and the erf
    difference goes through ``erfcx`` on the side where it would cancel.
    """
    sin_t = np.sin(theta)
    dx, dy = cloud_center(t, env)
    sqrt_t = math.sqrt(t)
    beta1 = sin_t * (dx * np.cos(phi) + dy * np.sin(phi)) / (2.0 * t)
    beta2 = -(dx * dx + dy * dy) / (4.0 * t)
    a = env.r_obs / (2.0 * sqrt_t)
    b = beta1 * sqrt_t

    e_surface = np.exp(beta2 + 2.0 * a * b - a * a)
    e_center = math.exp(beta2)

    # P = exp(beta2 + b^2) * (erf(a - b) + erf(b))
    P = np.empty(np.broadcast(b, sin_t).shape)
    b = np.broadcast_to(b, P.shape)
    e_surface = np.broadcast_to(e_surface, P.shape)
    past = b >= a
    neg = b <= 0
    mid = ~(past | neg)
    P[past] = erfcx(b[past] - a) * e_surface[past] - erfcx(b[past]) * e_center
    P[neg] = erfcx(-b[neg]) * e_center - erfcx(a - b[neg]) * e_surface[neg]
    bm = b[mid]
    P[mid] = np.exp(beta2 + bm * bm) * (erf(a - bm) + erf(bm))

    bracket = b * e_center + 0.5 * SQRT_PI * (1.0 + 2.0 * b * b) * P - (a + b) * e_surface
    return sin_t * bracket / (2.0 * math.pi**1.5)


@lru_cache(maxsize=None)
def _panel_rule(n: int, panels: int, lo: float, hi: float):
    x, w = np.polynomial.legendre.leggauss(n)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _angular_rule(spec: QuadratureSpec, level: int, t: float, env: DimensionlessEnv) -> float:
    panels = 2**level
    th, wt = _panel_rule(spec.nodes, panels, 0.0, math.pi)
    ph, wp = _panel_rule(spec.nodes, panels, 0.0, 2.0 * math.pi)
    f = angular_integrand(th[:, None], ph[None, :], t, env)
    return float(wt @ f @ wp)


def expected_count_quadrature(t: float, env: DimensionlessEnv,
                              spec: QuadratureSpec = DEFAULT_QUADRATURE,
                              full_output: bool = False):
    """Expected count for any flow by integrating over the receiver's angles.

    With ``full_output`` returns ``(value, error_estimate)``.
    """
    t = float(t)
    _check_time(t)
    prev = _angular_rule(spec, 0, t, env)
    for level in range(1, spec.max_depth + 1):
        cur = _angular_rule(spec, level, t, env)
        err = abs(cur - prev)
        if err <= spec.abs_tol and (err <= spec.rel_tol * abs(cur) or abs(cur) < UNDERFLOW):
            value = min(max(cur, 0.0), 1.0)
            return (value, err) if full_output else value
        prev = cur
    raise QuadratureError(
        f"no convergence at t*={t:g}, pe=({env.pe_par:g}, {env.pe_perp:g}) "
        f"after depth {spec.max_depth} (last change {err:.3g})"
    )


def expected_count_exact(t, env: DimensionlessEnv, spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """Closed form when the flow is parallel, angular quadrature otherwise."""
    if env.pe_perp == 0:
        return closed_form_parallel(t, env)
    if np.ndim(t) == 0:
        return expected_count_quadrature(t, env, spec)
    flat = np.asarray(t, dtype=float).ravel()
    vals = np.array([expected_count_quadrature(ti, env, spec) for ti in flat])
    return vals.reshape(np.shape(t))


def uca_relative_deviation(t, env: DimensionlessEnv, spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """``(uca - exact) / exact``; NaN where the exact count underflows."""
    exact = np.asarray(expected_count_exact(t, env, spec), dtype=float)
    uca = np.asarray(expected_count_uca(t, env), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        dev = np.where(exact > UNDERFLOW, (uca - exact) / exact, np.nan)
    return dev if dev.ndim else float(dev)


def expected_count(t, env: DimensionlessEnv, mode: str = "exact",
                   spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """Per-emission expected count; zero for ``t <= 0``."""
    if mode not in ("exact", "uca"):
        raise ValueError(f"mode must be 'exact' or 'uca', got {mode!r}")
    t_arr = np.asarray(t, dtype=float)
    out = np.zeros(t_arr.shape)
    pos = t_arr > 0
    if pos.any():
        if mode == "uca":
            out[pos] = expected_count_uca(t_arr[pos], env)
        else:
            out[pos] = expected_count_exact(t_arr[pos], env, spec)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class SignalProfile:
    """Per-emission expected counts at every sample offset and interval lag.

    ``table[k, m]`` is the expected count at ``offsets[m] + k * t_int`` after
    an emission, for ``k = 0..isi_depth``.
    """

    env: DimensionlessEnv
    offsets: np.ndarray
    table: np.ndarray
    mode: str = "exact"
    spec: QuadratureSpec = DEFAULT_QUADRATURE

    @property
    def isi_depth(self) -> int:
        return self.table.shape[0] - 1

    @property
    def m(self) -> int:
        return self.table.shape[1]

    @property
    def noise_mean(self) -> float:
        return self.env.noise_mean

    def expected_fraction(self, tau: float) -> float:
        """Per-emission count ``tau`` (dimensionless) after an emission."""
        if tau <= 0:
            return 0.0
        T = self.env.t_int
        k = np.rint((tau - self.offsets) / T).astype(int)
        hit = np.abs(self.offsets + k * T - tau) <= 1e-9 * T
        for idx in np.flatnonzero(hit):
            if 0 <= k[idx] <= self.isi_depth:
                return float(self.table[k[idx], idx])
        if tau > self.offsets[-1] + self.isi_depth * T:
            return 0.0
        return float(expected_count(tau, self.env, self.mode, self.spec))


def build_signal_profile(env: DimensionlessEnv, mode: str = "exact",
                         isi_depth: int | None = None,
                         spec: QuadratureSpec = DEFAULT_QUADRATURE) -> SignalProfile:
    """Tabulate the single-emission signal for lags ``0..isi_depth``.

    ``isi_depth`` defaults to ``b_len - 1`` so a whole sequence is covered
    without truncation.
    """
    if isi_depth is None:
        isi_depth = env.b_len - 1
    if isi_depth < 0:
        raise ValueError("isi_depth must be non-negative")
    offsets = np.asarray(env.offsets)
    lags = np.arange(isi_depth + 1)[:, None] * env.t_int
    times = offsets[None, :] + lags
    table = np.asarray(expected_count(times, env, mode, spec), dtype=float)
    offsets.setflags(write=False)
    table.setflags(write=False)
    return SignalProfile(env=env, offsets=offsets, table=table, mode=mode, spec=spec)


def sample_means(bits, profile: SignalProfile, memory: int | None = None) -> np.ndarray:
    """Expected molecule counts for every sample of a transmitted sequence.

    Row ``j`` holds samples taken ``offsets`` after the start of interval
    ``j``.  Only the current bit and ``memory`` previous bits contribute
    (all tabulated lags when ``memory`` is None).
    """
    bits = np.asarray(bits, dtype=float)
    depth = profile.isi_depth if memory is None else min(memory, profile.isi_depth)
    B = bits.size
    signal = np.zeros((B, profile.m))
    for k in range(min(depth, B - 1) + 1):
        signal[k:] += bits[: B - k, None] * profile.table[k][None, :]
    return profile.noise_mean + profile.env.n_em * signal


def mean_observed(t: float, bits, profile: SignalProfile) -> float:
    """Expected molecules observed at dimensional time ``t`` (seconds).

    Noise mean plus the contribution of every emission made at or before
    ``t``; emission ``j`` (1-based) happens at ``(j - 1) * T_int``.
    """
    if t < 0:
        raise ValueError("time must be non-negative")
    env = profile.env
    t_star = to_dimensionless_time(t, env)
    n_terms = min(int(math.floor(t_star / env.t_int + 1.0)), len(bits))
    total = 0.0
    for j in range(n_terms):
        if bits[j]:
            total += profile.expected_fraction(t_star - j * env.t_int)
    return profile.noise_mean + env.n_em * total
