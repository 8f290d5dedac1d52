import json
import math

import numpy as np
import pytest

from flowmc import cli
from flowmc import experiments as ex
from flowmc.dimensionless import table_one_env, to_dimensionless
from flowmc.experiments import (BER_HEADER, DEVIATION_HEADER, Dataset, SweepSpec, emit_plot_data,
                                run_ber_sweep, run_deviation_study)

ENV = to_dimensionless(table_one_env())
SMALL = SweepSpec(grid=(-1.0, 0.0, 2.0), m_list=(2,), detectors=("equal", "optimal"),
                  n_sequences=2, training_sequences=100, seed=3)


def test_deviation_study_layout():
    data = run_deviation_study(ENV, [(0.0, 0.0), (4.0, 0.0), (0.0, 2.0)], [1e-4, 0.15, 1.0])
    assert data.header == DEVIATION_HEADER
    assert len(data.rows) == 9
    status = data.column("status")
    assert status[0] == "underflow"
    dev = dict(((r[1], r[0]), float(r[5])) for r in data.rows)
    assert abs(dev[("4.0", "0.15")]) < 0.02
    assert math.isnan(float(data.rows[0][5]))


def test_deviation_default_flows():
    flows = ex.default_deviation_flows()
    assert len(flows) == 16
    assert (0.0, 0.0) in flows and (-5.0, 0.0) in flows and (0.0, 5.0) in flows


def test_deviation_perpendicular_sign():
    a = run_deviation_study(ENV, [(0.0, 2.0)], [0.3]).column("rel_deviation")
    b = run_deviation_study(ENV, [(0.0, -2.0)], [0.3]).column("rel_deviation")
    assert float(a[0]) == pytest.approx(float(b[0]), rel=1e-12)


def test_ber_sweep_small():
    data = run_ber_sweep(SMALL, table_one_env())
    assert data.header == BER_HEADER
    assert len(data.rows) == 6
    assert set(data.column("status")) == {"ok"}
    assert data.column("pe_par") == ["-1.0", "-1.0", "0.0", "0.0", "2.0", "2.0"]
    hashes = data.column("env_hash")
    assert hashes[0] != hashes[2]


def test_ber_sweep_reproducible():
    a = run_ber_sweep(SMALL, table_one_env()).to_csv()
    b = run_ber_sweep(SMALL, table_one_env()).to_csv()
    assert a == b


def test_ber_sweep_parallel_identical():
    a = run_ber_sweep(SMALL, table_one_env()).to_csv()
    b = run_ber_sweep(SMALL, table_one_env(), workers=2).to_csv()
    assert a == b


def test_ber_sweep_records_point_failure(monkeypatch):
    real = ex.ber_point

    def flaky(env, pe_par, pe_perp, m, spec):
        if pe_par == 2.0:
            raise RuntimeError("boom")
        return real(env, pe_par, pe_perp, m, spec)

    monkeypatch.setattr(ex, "ber_point", flaky)
    data = run_ber_sweep(SMALL, table_one_env())
    status = data.column("status")
    assert status[:4] == ["ok"] * 4
    assert all(s.startswith("error: RuntimeError") for s in status[4:])
    assert data.column("ber")[4] == "nan"


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec(axis="diagonal")
    with pytest.raises(ValueError):
        SweepSpec(grid=())
    assert SweepSpec(axis="pe_both").flow(0.5) == (0.5, 0.5)
    assert SweepSpec(axis="pe_perp").flow(0.5) == (0.0, 0.5)


def test_perpendicular_flow_helps_negative_flow():
    # a cross-flow shortens the ISI tail when the parallel flow opposes
    spec = SweepSpec(detectors=("matched",), n_sequences=500, seed=5, training_sequences=1000)
    opposed = ex.ber_point(table_one_env(), -0.5, 0.0, 40, spec)["matched"]
    crossed = ex.ber_point(table_one_env(), -0.5, -0.5, 40, spec)["matched"]
    assert crossed.ber < opposed.ber


def test_emit_deviation_series(tmp_path):
    data = run_deviation_study(ENV, [(0.0, 0.0), (-1.0, 0.0)], [0.2, 0.5])
    paths = emit_plot_data(data, tmp_path)
    names = sorted(p.name for p in paths)
    assert "metadata.json" in names
    assert len(names) == 3
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["layout"] == "deviation" and len(meta["series"]) == 2
    assert "version" in meta and "timestamp" in meta


def test_emit_ber_regions(tmp_path):
    data = run_ber_sweep(SMALL, table_one_env())
    emit_plot_data(data, tmp_path)
    text = (tmp_path / "ber_equal_M2.csv").read_text().splitlines()
    assert text[0] == "pe_par,pe_perp,region,x_log10_abs_pe,ber,ci_lo,ci_hi"
    regions = [line.split(",")[2] for line in text[1:]]
    assert regions == ["neg", "zero", "pos"]
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["env_hash"] == table_one_env().digest() and meta["seed"] == 3


def test_emit_single_row(tmp_path):
    data = Dataset("deviation", list(DEVIATION_HEADER),
                   [["0.5", "0.0", "0.0", "0.1", "0.1", "0.0", "ok"]])
    paths = emit_plot_data(data, tmp_path)
    assert len((paths[0]).read_text().splitlines()) == 2


def test_emit_rejects_empty_and_unknown(tmp_path):
    with pytest.raises(ValueError):
        emit_plot_data(Dataset("ber", list(BER_HEADER), []), tmp_path)
    data = Dataset("deviation", list(DEVIATION_HEADER), [["0.5", "0", "0", "1", "1", "0", "ok"]])
    with pytest.raises(ValueError):
        emit_plot_data(data, tmp_path, layout="histogram")


# command line

def test_cli_signal(capsys):
    assert cli.main(["signal", "--t-points", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("t_star,t_seconds,exact,uca")
    assert len(lines) == 4


def test_cli_signal_profile(tmp_path):
    out = tmp_path / "p.csv"
    assert cli.main(["signal", "--profile", "--m", "2", "--isi-depth", "1", "-o", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert len(rows) == 1 + 2 * 2


def test_cli_ber_config_and_overrides(tmp_path):
    cfg = tmp_path / "env.toml"
    cfg.write_text("[channel]\nb_len = 20\nn_em = 2000\n")
    out = tmp_path / "ber.csv"
    rc = cli.main(["ber", "--config", str(cfg), "--n-em", "5000", "--grid", "0", "--m-list", "2",
                   "--detectors", "equal", "--n-seq", "2", "-o", str(out), "--plot-dir", str(tmp_path / "plots")])
    assert rc == 0
    rows = out.read_text().splitlines()
    assert rows[0].split(",") == BER_HEADER
    assert len(rows) == 2
    assert rows[1].split(",")[-2] == table_one_env(b_len=20, n_em=5000, m=2).digest()
    assert (tmp_path / "plots" / "metadata.json").exists()


def test_cli_deviation(tmp_path):
    out = tmp_path / "dev.csv"
    assert cli.main(["deviation", "--pe-par", "1", "--pe-perp", "2", "--t-points", "3", "-o", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 1 + 2 * 3


def test_cli_validate_exit_codes(monkeypatch, capsys):
    from flowmc import acceptance
    from flowmc.acceptance import CheckResult

    monkeypatch.setitem(acceptance.ALL_CHECKS, "1", lambda: [CheckResult("ok", True, "fine")])
    assert cli.main(["validate", "--only", "1"]) == 0
    monkeypatch.setitem(acceptance.ALL_CHECKS, "1", lambda: [CheckResult("bad", False, "nope")])
    assert cli.main(["validate", "--only", "1"]) == 1
    assert "[FAIL] bad" in capsys.readouterr().out
