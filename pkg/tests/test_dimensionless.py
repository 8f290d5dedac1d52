import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowmc.dimensionless import (PhysicalEnv, env_from_mapping, load_env, table_one_env,
                                  to_dimensional_time, to_dimensionless, to_dimensionless_time)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_reference_environment_scales():
    env = to_dimensionless(table_one_env())
    assert env.x0 == pytest.approx(1.0)
    assert env.r_obs == pytest.approx(0.1)
    assert env.t_int == pytest.approx(0.8)
    assert env.pe_par == 0.0 and env.pe_perp == 0.0


def test_unit_peclet_flow():
    # 2 mm/s over 0.5 um with D = 1e-9 m^2/s
    env = to_dimensionless(table_one_env().with_flow(2e-3))
    assert env.pe_par == pytest.approx(1.0)
    assert env.pe_perp == 0.0


def test_peak_time_conversion():
    env = to_dimensionless(table_one_env())
    assert to_dimensional_time(1 / 6, env) == pytest.approx(0.0417e-3, rel=1e-3)
    assert to_dimensional_time(0.0, env) == 0.0
    assert to_dimensional_time(0.8, env) == pytest.approx(0.2e-3)


def test_custom_reference_length():
    env = to_dimensionless(table_one_env().with_flow(2e-3), reference_length=1e-6)
    assert env.x0 == pytest.approx(0.5)
    assert env.pe_par == pytest.approx(2.0)
    assert to_dimensional_time(1.0, env) == pytest.approx(1e-3)


@pytest.mark.parametrize("length", [0.0, -1e-6])
def test_reference_length_must_be_positive(length):
    with pytest.raises(ValueError):
        to_dimensionless(table_one_env(), reference_length=length)


@pytest.mark.parametrize("changes", [dict(r_obs=0.6e-6), dict(diffusion_coefficient=0.0),
                                     dict(m=0), dict(p1=1.5), dict(t_int=-1.0), dict(n_em=-1)])
def test_invalid_parameters_rejected(changes):
    with pytest.raises(ValueError):
        table_one_env(**changes)


@given(st.floats(1e-6, 1e3))
def test_time_round_trip(t_star):
    env = to_dimensionless(table_one_env())
    assert to_dimensionless_time(to_dimensional_time(t_star, env), env) == pytest.approx(t_star, rel=1e-12)


@given(finite, finite, st.floats(-10, 10).filter(lambda c: c != 0))
def test_peclet_linear_in_velocity(vx, vy, c):
    base = table_one_env()
    e1 = to_dimensionless(base.with_flow(vx * 1e-3, vy * 1e-3))
    e2 = to_dimensionless(base.with_flow(c * vx * 1e-3, c * vy * 1e-3))
    assert e2.pe_par == pytest.approx(c * e1.pe_par, rel=1e-12, abs=1e-12)
    assert e2.pe_perp == pytest.approx(abs(c) * e1.pe_perp, rel=1e-12, abs=1e-12)


@settings(max_examples=50)
@given(finite, st.floats(0, 1e3), st.floats(0, 2 * math.pi))
def test_perpendicular_rotation_invariance(vx, speed, angle):
    base = table_one_env()
    a = to_dimensionless(base.with_flow(vx * 1e-3, speed * 1e-3, 0.0))
    b = to_dimensionless(base.with_flow(vx * 1e-3, speed * math.cos(angle) * 1e-3,
                                        speed * math.sin(angle) * 1e-3))
    assert b.pe_par == a.pe_par
    assert b.pe_perp == pytest.approx(a.pe_perp, rel=1e-12, abs=1e-12)


def test_with_peclet_round_trip():
    env = to_dimensionless(table_one_env().with_peclet(-0.7, 2.5))
    assert env.pe_par == pytest.approx(-0.7)
    assert env.pe_perp == pytest.approx(2.5)


def test_dimensionless_with_peclet_folds_sign():
    env = to_dimensionless(table_one_env()).with_peclet(1.0, -3.0)
    assert env.pe_perp == 3.0


def test_digest_tracks_parameters():
    a, b = table_one_env(), table_one_env(m=10)
    assert a.digest() == table_one_env().digest()
    assert a.digest() != b.digest()


def test_config_file(tmp_path):
    path = tmp_path / "env.toml"
    path.write_text("[channel]\nn_em = 5000\nt_int_ms = 0.4\nx0_um = 1.0\n"
                    "[flow]\nv_mm_s = [2.0, 0.0, 0.0]\n")
    env = load_env(path)
    assert env.n_em == 5000
    assert env.t_int == pytest.approx(0.4e-3)
    assert env.x0 == pytest.approx(1e-6)
    assert env.velocity == pytest.approx((2e-3, 0.0, 0.0))
    assert env.r_obs == PhysicalEnv().r_obs


def test_config_unknown_key():
    with pytest.raises(KeyError):
        env_from_mapping({"n_molecules": 10})
