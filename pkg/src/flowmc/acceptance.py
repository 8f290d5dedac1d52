"""Acceptance checks, shared by the test suite and ``flowmc validate``.

Each check returns one or more :class:`CheckResult` lines.  Tolerances and
run sizes are fixed here; nothing is tuned after the fact.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from .channel import SamplingSchedule, schedule_for_profile, simulate_particle, simulate_statistical
from .detectors import (SequenceDetectorConfig, sequence_log_likelihood,
                        viterbi_sequence_detect)
from .dimensionless import table_one_env, to_dimensional_time, to_dimensionless
from .experiments import SweepSpec, ber_point
from .signal import (build_signal_profile, closed_form_parallel, expected_count_quadrature,
                     sample_means, uca_relative_deviation)

SEED = 20131


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    elapsed: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.detail} ({self.elapsed:.1f}s)"


class _Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def check_peak_signal() -> list[CheckResult]:
    """3.08 molecules (+-2%) at 0.042 ms (+-5%) by closed form and quadrature."""
    env = to_dimensionless(table_one_env())
    out = []
    for label, fn in [("closed form", lambda t: closed_form_parallel(t, env)),
                      ("quadrature", lambda t: expected_count_quadrature(t, env))]:
        with _Timer() as tm:
            res = minimize_scalar(lambda t: -fn(t), bounds=(0.05, 0.5), method="bounded",
                                  options={"xatol": 1e-7})
        peak = -res.fun * env.n_em
        t_ms = to_dimensional_time(res.x, env) * 1e3
        ok = abs(peak / 3.08 - 1) <= 0.02 and abs(t_ms / 0.042 - 1) <= 0.05 and tm.elapsed < 1.0
        out.append(CheckResult(f"1 peak signal ({label})", ok,
                               f"peak {peak:.4f} molecules at {t_ms:.5f} ms", tm.elapsed))
    return out


def check_uca_deviation() -> list[CheckResult]:
    env = to_dimensionless(table_one_env())
    late = np.geomspace(0.1, 2.0, 400)
    early = np.geomspace(1e-3, 2.0, 400)
    early = early[early < 0.05]
    out = []
    start = time.perf_counter()

    def worst(pe_par, pe_perp):
        dev = uca_relative_deviation(late, env.with_peclet(pe_par, pe_perp))
        i = int(np.nanargmax(np.abs(dev)))
        return float(np.abs(dev[i])), float(late[i])

    w, t = worst(0, 0)
    out.append(CheckResult("2 UCA deviation, no flow < 1%", w < 0.01, f"max |dev| {w:.4%} at t*={t:.4f}"))
    for pe in (-2, -1, 0, 1, 2, 3, 4):
        w, t = worst(pe, 0)
        out.append(CheckResult(f"2 UCA deviation, pe_par={pe} < 2%", w < 0.02,
                               f"max |dev| {w:.4%} at t*={t:.4f}"))
    for pe in (1, 2, 3, 4, 5):
        w, t = worst(0, pe)
        out.append(CheckResult(f"2 UCA deviation, pe_perp={pe} <= 1.7%", w <= 0.017,
                               f"max |dev| {w:.4%} at t*={t:.4f}"))
    flows = [(p, 0) for p in range(-5, 6)] + [(0, p) for p in range(1, 6)]
    lows = {f: float(np.nanmin(uca_relative_deviation(early, env.with_peclet(*f)))) for f in flows}
    bad = [f for f, v in lows.items() if not v < -0.10]
    elapsed = time.perf_counter() - start
    out.append(CheckResult("2 UCA underestimates early (< -10% for t* < 0.05)", not bad,
                           f"least negative minimum {max(lows.values()):.3%}"
                           + (f"; failing flows {bad}" if bad else ""), elapsed))
    if elapsed >= 120:
        out.append(CheckResult("2 UCA deviation runtime < 2 min", False, f"{elapsed:.1f}s"))
    return out


def check_oracle_equivalence() -> list[CheckResult]:
    env = to_dimensionless(table_one_env())
    times = np.geomspace(0.01, 10.0, 100)
    with _Timer() as tm:
        worst = 0.0
        for pe in range(-5, 6):
            e = env.with_peclet(pe)
            closed = closed_form_parallel(times, e)
            quad = np.array([expected_count_quadrature(t, e) for t in times])
            worst = max(worst, float(np.max(np.abs(quad - closed))))
    ok = worst <= 1e-8 and tm.elapsed < 60
    return [CheckResult("3 closed form vs quadrature <= 1e-8", ok, f"max |diff| {worst:.3e}", tm.elapsed)]


def backend_means(pe_par: float, pe_perp: float, trials: int = 1000, seed: int = SEED):
    """Per-sample mean and standard error of both backends for one emission (M = 5)."""
    env = table_one_env(m=5, b_len=1).with_peclet(pe_par, pe_perp)
    schedule = SamplingSchedule.for_env(env)
    profile = build_signal_profile(to_dimensionless(env), isi_depth=0)
    bits = np.ones(1, dtype=np.int8)
    ss_part, ss_stat = np.random.SeedSequence([seed, 4, 0]), np.random.SeedSequence([seed, 4, 1])
    part = np.array([simulate_particle(bits, env, schedule, c).counts[0]
                     for c in ss_part.spawn(trials)], dtype=float)
    gen = np.random.default_rng(ss_stat)
    stat = np.array([simulate_statistical(bits, profile, schedule, gen).counts[0]
                     for _ in range(trials)], dtype=float)
    stats = {}
    for name, arr in (("particle", part), ("statistical", stat)):
        stats[name] = (arr.mean(axis=0), arr.std(axis=0, ddof=1) / np.sqrt(trials))
    return stats


def check_backend_consistency(trials: int = 1000) -> list[CheckResult]:
    out = []
    total = 0.0
    for pe in [(0, 0), (2, 0), (0, 2), (-1, 0)]:
        with _Timer() as tm:
            s = backend_means(*pe, trials=trials)
        (mp, sp), (ms, ss) = s["particle"], s["statistical"]
        z = np.abs(mp - ms) / np.sqrt(sp**2 + ss**2)
        total += tm.elapsed
        out.append(CheckResult(f"4 backend means agree at pe={pe}", bool(np.all(z < 3)),
                               f"max z {z.max():.2f}; particle {np.round(mp, 3).tolist()} "
                               f"statistical {np.round(ms, 3).tolist()}", tm.elapsed))
    if total >= 600:
        out.append(CheckResult("4 backend runtime < 10 min", False, f"{total:.1f}s"))
    return out


def brute_force_sequence(counts, profile, memory: int) -> np.ndarray:
    """Exhaustive argmax of the memory-truncated joint likelihood."""
    B = counts.shape[0]
    best, best_ll = None, -np.inf
    for combo in itertools.product((0, 1), repeat=B):
        ll = sequence_log_likelihood(counts, sample_means(combo, profile, memory))
        if ll > best_ll:
            best, best_ll = combo, ll
    return np.array(best, dtype=np.int8)


def check_viterbi_brute_force(n_matrices: int = 100) -> list[CheckResult]:
    rng = np.random.default_rng([SEED, 5])
    mismatches = 0
    with _Timer() as tm:
        for _ in range(n_matrices):
            m = int(rng.choice([1, 2, 5, 10]))
            env = table_one_env(m=m, b_len=10).with_peclet(rng.uniform(-2, 4), 0.0)
            profile = build_signal_profile(to_dimensionless(env))
            bits = rng.integers(0, 2, 10)
            obs = simulate_statistical(bits, profile, schedule_for_profile(profile), rng)
            got = viterbi_sequence_detect(obs, SequenceDetectorConfig(2, profile, tail="truncated"))
            if not np.array_equal(got, brute_force_sequence(obs.counts, profile, 2)):
                mismatches += 1
    return [CheckResult("5 Viterbi equals brute force (B=10, F=2)", mismatches == 0 and tm.elapsed < 60,
                        f"{mismatches} mismatches in {n_matrices} matrices", tm.elapsed)]


TREND_SPEC = SweepSpec(n_sequences=100, seed=SEED, training_sequences=1000)


@lru_cache(maxsize=None)
def _trend_point(pe_par: float, pe_perp: float, m: int):
    return ber_point(table_one_env(), pe_par, pe_perp, m, TREND_SPEC)


def _fmt_est(e) -> str:
    return f"{e.ber:.4f} [{e.ci_lo:.4f}, {e.ci_hi:.4f}]"


def check_ber_trends() -> list[CheckResult]:
    start = time.perf_counter()
    out = []

    def cmp(name, lhs, rhs, ok, extra=""):
        out.append(CheckResult(name, ok, f"{_fmt_est(lhs)} vs {_fmt_est(rhs)}{extra}"))

    for det in ("optimal", "matched", "equal"):
        a1, a0 = _trend_point(1.0, 0.0, 10)[det], _trend_point(0.0, 0.0, 10)[det]
        cmp(f"6a {det}: BER(pe_par=1) < BER(0), M=10", a1, a0, a1.ber < a0.ber)

    b2, b10 = _trend_point(2.0, 0.0, 2)["equal"], _trend_point(10.0, 0.0, 2)["equal"]
    cmp("6b equal: BER(pe_par=10) > BER(2), M=2", b10, b2, b10.ber > b2.ber)

    c2, c0 = _trend_point(0.0, 2.0, 40)["matched"], _trend_point(0.0, 0.0, 40)["matched"]
    cmp("6c matched: BER(pe_perp=2) <= 0.5 BER(0), M=40", c2, c0, c2.ber <= 0.5 * c0.ber)

    for det in ("matched", "equal"):
        d7, d0 = _trend_point(-0.7, 0.0, 40)[det], _trend_point(0.0, 0.0, 40)[det]
        cmp(f"6d {det}: BER(pe_par=-0.7) < BER(0), M=40", d7, d0, d7.ber < d0.ber)

    worst = min((_trend_point(-5.0, 0.0, m)[d].ber, d, m)
                for m in (2, 5, 10, 40) for d in ("optimal", "matched", "equal"))
    out.append(CheckResult("6e all detectors fail at pe_par=-5 (BER > 0.1)", worst[0] > 0.1,
                           f"lowest BER {worst[0]:.4f} ({worst[1]}, M={worst[2]})"))
    elapsed = time.perf_counter() - start
    if elapsed >= 1800:
        out.append(CheckResult("6 runtime < 30 min", False, f"{elapsed:.1f}s"))
    return out


def check_no_isi_optimality() -> list[CheckResult]:
    env = table_one_env(m=5, t_int=10 * table_one_env().t_int)
    with _Timer() as tm:
        spec = replace(TREND_SPEC, detectors=("optimal", "matched"))
        rep = ber_point(env, 0.0, 0.0, 5, spec)
    opt, mf = rep["optimal"], rep["matched"]
    overlap = opt.ci_lo <= mf.ci_hi and mf.ci_lo <= opt.ci_hi
    return [CheckResult("7 matched filter matches optimal without ISI (T_int x10, M=5)",
                        overlap and tm.elapsed < 300,
                        f"optimal {_fmt_est(opt)}, matched {_fmt_est(mf)}", tm.elapsed)]


ALL_CHECKS = {
    "1": check_peak_signal,
    "2": check_uca_deviation,
    "3": check_oracle_equivalence,
    "4": check_backend_consistency,
    "5": check_viterbi_brute_force,
    "6": check_ber_trends,
    "7": check_no_isi_optimality,
}


def run_all(selected=None, echo=print) -> list[CheckResult]:
    results = []
    for key, fn in ALL_CHECKS.items():
        if selected and key not in selected:
            continue
        for r in fn():
            echo(r.line())
            results.append(r)
    return results
