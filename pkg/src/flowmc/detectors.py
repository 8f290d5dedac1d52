"""Bit detectors for the sampled Poisson channel and BER estimation."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import gammaln, xlogy
from scipy.stats import binomtest

from .channel import (ObservationMatrix, SamplingSchedule, as_generator, draw_sequence,
                      schedule_for_profile, simulate_particle, simulate_statistical)
from .dimensionless import PhysicalEnv
from .signal import SignalProfile


@dataclass(frozen=True, eq=False)
class WeightVector:
    weights: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be non-negative with at least one positive entry")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def scaled(self, c: float) -> "WeightVector":
        return WeightVector(self.weights * c, self.kind)


def equal_weights(m: int) -> WeightVector:
    return WeightVector(np.ones(m), "equal")


def matched_weights(profile: SignalProfile) -> WeightVector:
    """Weights proportional to the current bit's expected contribution."""
    lag0 = np.asarray(profile.table[0], dtype=float)
    peak = lag0.max()
    if not peak > 0:
        raise ValueError("profile carries no signal in the current interval")
    return WeightVector(lag0 / peak, "matched")


@dataclass(frozen=True)
class DecisionRule:
    weights: WeightVector
    threshold: float

    def __post_init__(self):
        if not np.isfinite(self.threshold):
            raise ValueError("threshold must be finite")

    def decide(self, counts) -> np.ndarray:
        """Decisions for every row of a ``B x M`` count matrix."""
        sums = np.asarray(counts, dtype=float) @ self.weights.weights
        return (sums >= self.threshold).astype(np.int8)


def weighted_sum_decide(row, rule: DecisionRule) -> int:
    row = np.asarray(row, dtype=float)
    if row.shape != rule.weights.weights.shape:
        raise ValueError("row length does not match the weight vector")
    return int(row @ rule.weights.weights >= rule.threshold)


def best_threshold(sums, labels) -> tuple[float, int]:
    """Threshold minimising the empirical error of ``sum >= xi`` decisions.

    Every distinct error count is realised by a threshold just below one of
    the distinct sums (or above them all), so scanning the midpoints
    between consecutive distinct sums is exhaustive.  Ties go to the middle
    candidate of the optimal set.  Returns ``(xi, errors)``.
    """
    sums = np.asarray(sums, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    values, inverse = np.unique(sums, return_inverse=True)
    ones = np.bincount(inverse, weights=labels, minlength=values.size)
    zeros = np.bincount(inverse, weights=~labels, minlength=values.size)
    # candidate i: decide 1 for values[i:], i = 0..len(values)
    ones_below = np.concatenate([[0.0], np.cumsum(ones)])
    zeros_at_or_above = zeros.sum() - np.concatenate([[0.0], np.cumsum(zeros)])
    errors = ones_below + zeros_at_or_above
    if np.all(errors == errors[0]):
        raise ValueError("degenerate training set: every threshold gives the same error")
    best = np.flatnonzero(errors == errors.min())
    i = int(best[(best.size - 1) // 2])
    if i == 0:
        xi = values[0] / 2.0 if values[0] > 0 else 0.0
    elif i == values.size:
        gap = values[-1] - values[-2] if values.size > 1 else 1.0
        xi = values[-1] + max(gap, 1e-12) / 2.0
    else:
        xi = 0.5 * (values[i - 1] + values[i])
    return float(xi), int(errors[i])


def _resolve_weights(weights: WeightVector | str, profile: SignalProfile) -> WeightVector:
    if isinstance(weights, str):
        if weights == "equal":
            return equal_weights(profile.m)
        if weights == "matched":
            return matched_weights(profile)
        raise ValueError(f"unknown weight kind {weights!r}")
    return weights


def training_sums(weights: WeightVector | str, profile: SignalProfile, trials: int = 100,
                  rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Weighted sums and true bits of ``trials`` simulated training sequences."""
    weights = _resolve_weights(weights, profile)
    gen, _ = as_generator(rng)
    env = profile.env
    schedule = schedule_for_profile(profile)
    sums, labels = [], []
    for _ in range(trials):
        bits = draw_sequence(env.p1, env.b_len, gen)
        obs = simulate_statistical(bits, profile, schedule, gen)
        sums.append(obs.counts @ weights.weights)
        labels.append(bits)
    return np.concatenate(sums), np.concatenate(labels)


def optimize_threshold(weights: WeightVector | str, profile: SignalProfile, trials: int = 100,
                       rng=None) -> DecisionRule:
    """Search the decision threshold on simulated training sequences.

    ``trials`` independent sequences of ``b_len`` bits are drawn through the
    statistical backend.
    """
    if trials < 100:
        raise ValueError("need at least 100 training sequences")
    weights = _resolve_weights(weights, profile)
    xi, _ = best_threshold(*training_sums(weights, profile, trials, rng))
    return DecisionRule(weights, xi)


@dataclass(frozen=True)
class SequenceDetectorConfig:
    """Viterbi settings.

    ``tail="truncated"`` models each sample with the current bit and the
    ``memory`` previous bits only.  ``tail="survivor"`` keeps the same
    ``2**memory`` states but adds the expected interference of older bits
    as decided along each state's survivor path.
    """

    memory: int
    profile: SignalProfile
    noise_mean: float | None = None
    tail: str = "truncated"

    def __post_init__(self):
        if not 0 <= self.memory <= self.profile.isi_depth:
            raise ValueError("memory must lie in [0, profile isi_depth]")
        if self.tail not in ("truncated", "survivor"):
            raise ValueError(f"unknown tail mode {self.tail!r}")

    @property
    def noise(self) -> float:
        return self.profile.noise_mean if self.noise_mean is None else self.noise_mean


def _state_means(cfg: SequenceDetectorConfig, width: int) -> np.ndarray:
    """Expected counts for (previous-bits state, new bit) pairs, shape (S, 2, M).

    Bit ``i`` of a state is the bit sent ``i + 1`` intervals ago.
    """
    lam = cfg.profile.env.n_em * np.asarray(cfg.profile.table[: cfg.memory + 1], dtype=float)
    S = 1 << width
    means = np.full((S, 2, lam.shape[1]), cfg.noise)
    for s in range(S):
        for i in range(cfg.memory):
            if (s >> i) & 1:
                means[s] += lam[i + 1]
    means[:, 1] += lam[0]
    return means


def viterbi_sequence_detect(obs: ObservationMatrix, cfg: SequenceDetectorConfig) -> np.ndarray:
    """Most likely bit sequence under independent Poisson samples.

    Dynamic programming over the ``2**memory`` most recent bits with
    log-likelihood path metrics.  Bits before the sequence are 0.  Survivor
    ties keep the path whose dropped bit is 0; final-state ties pick the
    lowest state.
    """
    counts = np.asarray(obs.counts)
    B = counts.shape[0]
    width = max(cfg.memory, 1)
    S = 1 << width
    means = _state_means(cfg, width)
    logfact = gammaln(counts + 1.0)
    survivor_tail = cfg.tail == "survivor" and cfg.profile.isi_depth > cfg.memory
    if survivor_tail:
        lam = cfg.profile.env.n_em * np.asarray(cfg.profile.table, dtype=float)
        paths = np.zeros((S, B), dtype=np.int8)

    metric = np.full(S, -np.inf)
    metric[0] = 0.0
    survivors = np.zeros((B, S), dtype=np.int64)
    nxt = np.arange(S)
    newest = nxt & 1
    pred0 = nxt >> 1
    pred1 = pred0 | (1 << (width - 1))
    for j in range(B):
        s = counts[j]
        mu = means
        if survivor_tail and j > cfg.memory:
            # bits 0 .. j-memory-1 sit at lags j .. memory+1
            lags = j - np.arange(j - cfg.memory)
            ok = lags <= cfg.profile.isi_depth
            tail = paths[:, : j - cfg.memory][:, ok].astype(float) @ lam[lags[ok]]
            mu = means + tail[:, None, :]
        # ll[state, bit]; xlogy is 0 for a zero count and -inf for s > 0 at mean 0
        ll = xlogy(s, mu).sum(axis=-1) - mu.sum(axis=-1) - logfact[j].sum()
        c0 = metric[pred0] + ll[pred0, newest]
        c1 = metric[pred1] + ll[pred1, newest]
        take1 = c1 > c0
        chosen = np.where(take1, pred1, pred0)
        survivors[j] = chosen
        metric = np.where(take1, c1, c0)
        if survivor_tail:
            paths = paths[chosen]
            paths[:, j] = newest

    state = int(np.argmax(metric))
    bits = np.zeros(B, dtype=np.int8)
    for j in range(B - 1, -1, -1):
        bits[j] = state & 1
        state = int(survivors[j, state])
    return bits


def sequence_log_likelihood(counts, means) -> float:
    """Joint Poisson log-likelihood of independent samples."""
    counts = np.asarray(counts, dtype=float)
    means = np.asarray(means, dtype=float)
    return float(np.sum(xlogy(counts, means) - means - gammaln(counts + 1.0)))


class WeightedSumDetector:
    def __init__(self, rule: DecisionRule):
        self.rule = rule

    def __call__(self, obs: ObservationMatrix) -> np.ndarray:
        return self.rule.decide(obs.counts)


class SequenceDetector:
    def __init__(self, cfg: SequenceDetectorConfig):
        self.cfg = cfg

    def __call__(self, obs: ObservationMatrix) -> np.ndarray:
        return viterbi_sequence_detect(obs, self.cfg)


def standard_detectors(profile: SignalProfile, rng=None, training_sequences: int = 100,
                       memory: int = 2, tail: str = "survivor",
                       names: Sequence[str] = ("optimal", "matched", "equal")) -> dict[str, Callable]:
    """The optimal sequence detector and the two trained weighted-sum detectors."""
    gen, _ = as_generator(rng)
    out: dict[str, Callable] = {}
    for name in names:
        if name == "optimal":
            out[name] = SequenceDetector(
                SequenceDetectorConfig(min(memory, profile.isi_depth), profile, tail=tail))
        elif name in ("matched", "equal"):
            out[name] = WeightedSumDetector(optimize_threshold(name, profile, training_sequences, gen))
        else:
            raise ValueError(f"unknown detector {name!r}")
    return out


def wilson_interval(errors: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = binomtest(int(errors), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class BerEstimate:
    detector: str
    errors: int
    n_bits: int
    n_sequences: int
    ber: float
    ci_lo: float
    ci_hi: float


BER_CSV_HEADER = ["pe_par", "pe_perp", "M", "detector", "backend", "n_seq", "ber", "ci_lo",
                  "ci_hi", "seed"]


@dataclass
class BerReport:
    estimates: dict[str, BerEstimate]
    backend: str
    pe_par: float = 0.0
    pe_perp: float = 0.0
    m: int = 0
    seed: int | None = None
    errors_per_sequence: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __getitem__(self, name: str) -> BerEstimate:
        return self.estimates[name]

    def rows(self) -> list[list]:
        return [[repr(float(self.pe_par)), repr(float(self.pe_perp)), self.m, e.detector,
                 self.backend, e.n_sequences, repr(e.ber), repr(e.ci_lo), repr(e.ci_hi),
                 "" if self.seed is None else self.seed]
                for e in self.estimates.values()]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(BER_CSV_HEADER)
        w.writerows(self.rows())
        return buf.getvalue()


def _run_sequence(args):
    child, env, profile, backend, schedule, detectors = args
    gen = np.random.default_rng(child)
    bits = draw_sequence(env.p1, schedule.b_len, gen)
    if backend == "statistical":
        obs = simulate_statistical(bits, profile, schedule, gen)
    else:
        obs = simulate_particle(bits, env, schedule, gen)
    return {name: int(np.count_nonzero(det(obs) != bits)) for name, det in detectors.items()}


def estimate_ber(detectors: Mapping[str, Callable], env: PhysicalEnv, backend: str = "statistical",
                 n_sequences: int = 100, rng=None, profile: SignalProfile | None = None,
                 workers: int | None = None, pe: tuple[float, float] = (0.0, 0.0)) -> BerReport:
    """Monte Carlo bit-error rate of each detector on shared realizations.

    Sequence ``i`` uses the ``i``-th spawned child of the seed sequence, so
    results do not depend on ``workers``.
    """
    if n_sequences < 1:
        raise ValueError("need at least one sequence")
    if backend not in ("statistical", "particle"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "statistical" and profile is None:
        raise ValueError("statistical backend needs a signal profile")
    seed = int(rng) if isinstance(rng, (int, np.integer)) else None
    if isinstance(rng, np.random.Generator):
        root = np.random.SeedSequence(int(rng.integers(2**63)))
    elif isinstance(rng, np.random.SeedSequence):
        root = rng
    else:
        root = np.random.SeedSequence(rng)
    children = root.spawn(n_sequences)
    schedule = (schedule_for_profile(profile) if profile is not None
                else SamplingSchedule.for_env(env))
    jobs = [(c, env, profile, backend, schedule, dict(detectors)) for c in children]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_sequence, jobs))
    else:
        results = [_run_sequence(j) for j in jobs]

    n_bits = n_sequences * schedule.b_len
    estimates, per_seq = {}, {}
    for name in detectors:
        errs = np.array([r[name] for r in results])
        total = int(errs.sum())
        lo, hi = wilson_interval(total, n_bits)
        estimates[name] = BerEstimate(name, total, n_bits, n_sequences, total / n_bits, lo, hi)
        per_seq[name] = errs
    return BerReport(estimates, backend, pe[0], pe[1], schedule.m, seed, per_seq)
