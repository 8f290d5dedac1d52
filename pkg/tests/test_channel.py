import math

import numpy as np
import pytest
from scipy import stats

from flowmc.channel import (ObservationMatrix, ParticleBudgetError, ParticleState,
                            SamplingSchedule, _retire, draw_sequence, observe_particles,
                            particle_step, simulate_particle, simulate_statistical)
from flowmc.dimensionless import table_one_env, to_dimensionless
from flowmc.signal import build_signal_profile, mean_observed


def test_draw_sequence_extremes():
    assert not draw_sequence(0.0, 100, 1).any()
    assert draw_sequence(1.0, 100, 1).all()


def test_draw_sequence_fraction():
    rng = np.random.default_rng(3)
    frac = np.mean([draw_sequence(0.5, 100, rng).mean() for _ in range(1000)])
    assert abs(frac - 0.5) < 0.05


def test_draw_sequence_rejects_bad_probability():
    with pytest.raises(ValueError):
        draw_sequence(1.2, 10, 0)


def test_step_spread():
    # sqrt(2 D dt) = 31.6 nm for D = 1e-9, dt = 0.5 us
    env = table_one_env()
    state = ParticleState(np.zeros((100_000, 3)))
    out = particle_step(state, env.dt, env, np.random.default_rng(0))
    assert out.positions.std(axis=0) == pytest.approx(np.full(3, 31.6e-9), rel=0.01)
    assert out.time == env.dt


def test_step_pure_advection():
    env = table_one_env(diffusion_coefficient=1e-30).with_flow(2e-3, -1e-3, 0.5e-3)
    state = ParticleState(np.array([[1e-7, 0.0, 0.0]]))
    out = particle_step(state, 1e-4, env, 0)
    assert out.positions[0] == pytest.approx([1e-7 + 2e-7, -1e-7, 0.5e-7], abs=1e-15)


def test_step_ensemble_mean_drift():
    env = table_one_env().with_flow(4e-3)
    rng = np.random.default_rng(1)
    state = ParticleState(np.zeros((20_000, 3)))
    for _ in range(10):
        state = particle_step(state, env.dt, env, rng)
    spread = math.sqrt(2 * env.diffusion_coefficient * 10 * env.dt) / math.sqrt(20_000)
    assert abs(state.positions[:, 0].mean() - 4e-3 * 10 * env.dt) < 4 * spread
    assert abs(state.positions[:, 1].mean()) < 4 * spread


def test_step_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        particle_step(ParticleState(), 0.0, table_one_env(), 0)


def test_observe_particles():
    r = 50e-9
    assert observe_particles(ParticleState(), r) == 0
    assert observe_particles(ParticleState(np.zeros((1, 3))), r) == 1
    pts = np.array([[r, 0, 0], [0, -r, 0], [r * 1.0001, 0, 0]])
    assert observe_particles(ParticleState(pts), r) == 2


def test_particle_peak_count():
    # 1e4 emissions of 1e4 molecules observed 0.042 ms after release
    env = table_one_env()
    rng = np.random.default_rng(11)
    horizon = 84 * env.dt
    trials, per_batch = 10_000, 100
    counts = []
    for _ in range(trials // per_batch):
        state = ParticleState(np.tile([-env.x0, 0.0, 0.0], (per_batch * env.n_em, 1)))
        state = particle_step(state, horizon, env, rng)
        inside = np.einsum("ij,ij->i", state.positions, state.positions) <= env.r_obs**2
        counts.append(inside.reshape(per_batch, env.n_em).sum(axis=1))
    counts = np.concatenate(counts)
    se = counts.std(ddof=1) / math.sqrt(trials)
    assert abs(counts.mean() - 3.08) < 3 * se + 0.01


def test_retire_keeps_relevant_particles():
    env = table_one_env().with_flow(0.2)  # strong flow towards +x
    near = np.array([[-0.2e-6, 0, 0], [0.0, 0.0, 0.0]])
    gone = np.array([[50e-6, 0, 0], [0.0, 40e-6, 0]])
    kept = _retire(np.vstack([near, gone]), 1e-4, env)
    assert kept.shape[0] == 2
    assert np.array_equal(kept, near)


def test_noise_only_counts():
    env = table_one_env(b_len=400, m=5)
    obs = simulate_particle(np.zeros(400, dtype=np.int8), env, rng=2)
    assert obs.counts.mean() == pytest.approx(1.0, abs=0.1)
    assert obs.backend == "particle" and obs.seed == 2


def test_noise_chi_square():
    env = table_one_env(n_em=0, b_len=2000, m=50)
    obs = simulate_particle(np.ones(2000, dtype=np.int8), env, rng=4)
    counts = obs.counts.ravel()
    assert counts.size == 100_000
    k_max = 5
    observed = np.array([np.sum(counts == k) for k in range(k_max)] + [np.sum(counts >= k_max)])
    probs = np.append(stats.poisson.pmf(np.arange(k_max), 1.0), stats.poisson.sf(k_max - 1, 1.0))
    _, p = stats.chisquare(observed, probs * counts.size)
    assert p > 0.01


def test_particle_matches_expected_means():
    env = table_one_env(b_len=3, m=2)
    profile = build_signal_profile(to_dimensionless(env))
    bits = np.array([1, 0, 1], dtype=np.int8)
    schedule = SamplingSchedule.for_env(env)
    ss = np.random.SeedSequence(8)
    runs = np.array([simulate_particle(bits, env, schedule, c).counts for c in ss.spawn(1000)], dtype=float)
    mean, se = runs.mean(axis=0), runs.std(axis=0, ddof=1) / math.sqrt(1000)
    expect = np.array([[mean_observed(t, bits, profile) for t in row] for row in schedule.times])
    assert np.all(np.abs(mean - expect) < 3 * se + 0.02)


def test_particle_reproducible():
    env = table_one_env(b_len=4, m=3).with_peclet(1.0, 0.5)
    bits = np.array([1, 1, 0, 1])
    a = simulate_particle(bits, env, rng=123)
    b = simulate_particle(bits, env, rng=123)
    assert np.array_equal(a.counts, b.counts)


def test_particle_cap():
    env = table_one_env(b_len=3)
    with pytest.raises(ParticleBudgetError):
        simulate_particle(np.ones(3, dtype=np.int8), env, rng=0, max_particles=15_000)


def test_particle_length_mismatch():
    env = table_one_env(b_len=3)
    with pytest.raises(ValueError):
        simulate_particle([1, 0], env, SamplingSchedule.for_env(env), 0)


def test_statistical_zero_mean_gives_zeros():
    env = to_dimensionless(table_one_env(n_em=0, noise_mean=0.0, b_len=20))
    obs = simulate_statistical(np.ones(20), build_signal_profile(env), rng=0)
    assert not obs.counts.any()


def test_statistical_equidispersion():
    env = to_dimensionless(table_one_env(b_len=2, m=3))
    profile = build_signal_profile(env)
    bits = np.array([1, 1])
    rng = np.random.default_rng(5)
    runs = np.array([simulate_statistical(bits, profile, rng=rng).counts for _ in range(10_000)], dtype=float)
    from flowmc.signal import sample_means
    lam = sample_means(bits, profile)
    se = np.sqrt(lam / 10_000)
    assert np.all(np.abs(runs.mean(axis=0) - lam) < 4 * se)
    assert np.allclose(runs.var(axis=0, ddof=1), lam, rtol=0.1)


def test_statistical_reproducible():
    env = to_dimensionless(table_one_env(b_len=50))
    profile = build_signal_profile(env)
    bits = draw_sequence(0.5, 50, 9)
    assert np.array_equal(simulate_statistical(bits, profile, rng=7).counts,
                          simulate_statistical(bits, profile, rng=7).counts)


def test_statistical_rejects_foreign_schedule():
    env = to_dimensionless(table_one_env(b_len=4))
    profile = build_signal_profile(env)
    with pytest.raises(ValueError):
        simulate_statistical(np.ones(4), profile, SamplingSchedule.equally_spaced(0.2e-3, 3, 4), 0)


def test_schedule_times():
    s = SamplingSchedule.equally_spaced(0.2e-3, 4, 3)
    assert s.times.shape == (3, 4)
    assert s.times[0] == pytest.approx([0.05e-3, 0.1e-3, 0.15e-3, 0.2e-3])
    assert s.times[2, 0] == pytest.approx(0.45e-3)
    with pytest.raises(ValueError):
        SamplingSchedule(0.2e-3, np.array([0.1e-3, 0.05e-3]), 2)


def test_observation_matrix_read_only_and_validated():
    s = SamplingSchedule.equally_spaced(1.0, 2, 2)
    obs = ObservationMatrix(np.array([[1, 2], [3, 4]]), s, np.array([0, 1]), "statistical")
    with pytest.raises(ValueError):
        obs.counts[0, 0] = 9
    with pytest.raises(ValueError):
        ObservationMatrix(np.array([[1, -2], [3, 4]]), s, np.array([0, 1]), "statistical")
    with pytest.raises(ValueError):
        ObservationMatrix(np.array([[1, 2, 3]]), s, np.array([0, 1]), "statistical")


def test_csv_round_trip(tmp_path):
    env = to_dimensionless(table_one_env(b_len=6, m=4))
    profile = build_signal_profile(env)
    obs = simulate_statistical(draw_sequence(0.5, 6, 1), profile, rng=42)
    path = tmp_path / "obs.csv"
    text = obs.to_csv(path)
    assert text.splitlines()[0] == "seed,backend,j,m,t_seconds,count,bit"
    back = ObservationMatrix.from_csv(path, obs.schedule.t_int)
    assert np.array_equal(back.counts, obs.counts)
    assert np.array_equal(back.bits, obs.bits)
    assert np.allclose(back.schedule.times, obs.schedule.times, rtol=1e-15)
    assert back.seed == 42 and back.backend == "statistical"
