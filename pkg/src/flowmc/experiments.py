"""UCA deviation study, BER-vs-Peclet sweeps and plot-ready output files."""

from __future__ import annotations

import csv
import io
import json
import math
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .detectors import BER_CSV_HEADER, estimate_ber, standard_detectors
from .dimensionless import DimensionlessEnv, PhysicalEnv, to_dimensionless
from .signal import (DEFAULT_QUADRATURE, QuadratureError, QuadratureSpec, UNDERFLOW,
                     build_signal_profile, expected_count_exact, expected_count_uca)

DEFAULT_PE_PAR = (-2.0, -1.0, -0.5, -0.2, 0.0, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0)
DEFAULT_PE_PERP = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0)
DEFAULT_M = (2, 5, 10, 40)
DEFAULT_DETECTORS = ("optimal", "matched", "equal")

DEVIATION_HEADER = ["t_star", "pe_par", "pe_perp", "exact", "uca", "rel_deviation", "status"]
BER_HEADER = BER_CSV_HEADER + ["env_hash", "status"]


def deviation_time_grid(t_min: float = 1e-3, t_max: float = 2.0, n: int = 400) -> np.ndarray:
    return np.geomspace(t_min, t_max, n)


def default_deviation_flows() -> list[tuple[float, float]]:
    """Parallel flows -5..5 with no perpendicular part, then perpendicular 1..5."""
    flows = [(float(p), 0.0) for p in range(-5, 6)]
    flows += [(0.0, float(p)) for p in range(1, 6)]
    return flows


@dataclass
class Dataset:
    kind: str
    header: list[str]
    rows: list[list]
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    def column(self, name: str) -> list:
        i = self.header.index(name)
        return [r[i] for r in self.rows]


def _fmt(x) -> str:
    return repr(float(x))


def run_deviation_study(env: DimensionlessEnv, flows: Sequence[tuple[float, float]] | None = None,
                        t_grid: Sequence[float] | None = None,
                        spec: QuadratureSpec = DEFAULT_QUADRATURE) -> Dataset:
    """Exact count, UCA count and their signed relative deviation per (flow, t*)."""
    flows = default_deviation_flows() if flows is None else flows
    t_grid = deviation_time_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    rows = []
    for pe_par, pe_perp in flows:
        e = env.with_peclet(pe_par, pe_perp)
        uca = np.atleast_1d(expected_count_uca(t_grid, e))
        for t, u in zip(t_grid, uca):
            status = "ok"
            try:
                exact = float(expected_count_exact(float(t), e, spec))
            except QuadratureError:
                exact, status = math.nan, "quadrature_failure"
            if status == "ok" and exact <= UNDERFLOW:
                status = "underflow"
            dev = (u - exact) / exact if status == "ok" else math.nan
            rows.append([_fmt(t), _fmt(pe_par), _fmt(pe_perp), _fmt(exact), _fmt(u), _fmt(dev), status])
    meta = {"reference_length": env.reference_length, "r_obs": env.r_obs, "x0": env.x0}
    return Dataset("deviation", list(DEVIATION_HEADER), rows, meta)


@dataclass(frozen=True)
class SweepSpec:
    axis: str = "pe_par"
    grid: tuple[float, ...] = DEFAULT_PE_PAR
    m_list: tuple[int, ...] = DEFAULT_M
    detectors: tuple[str, ...] = DEFAULT_DETECTORS
    backend: str = "statistical"
    n_sequences: int = 100
    seed: int = 1
    training_sequences: int = 100
    memory: int = 2

    def __post_init__(self):
        if self.axis not in ("pe_par", "pe_perp", "pe_both"):
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if not self.grid:
            raise ValueError("sweep grid is empty")
        if self.backend not in ("statistical", "particle"):
            raise ValueError(f"unknown backend {self.backend!r}")

    def flow(self, value: float) -> tuple[float, float]:
        if self.axis == "pe_par":
            return value, 0.0
        if self.axis == "pe_perp":
            return 0.0, value
        return value, value


def ber_point(env: PhysicalEnv, pe_par: float, pe_perp: float, m: int, spec: SweepSpec):
    """BER of every requested detector at one flow and sampling density.

    The same seed is used at every point, so neighbouring points see the
    same transmitted bits (paired comparison).
    """
    point_env = replace(env.with_peclet(pe_par, pe_perp), m=m)
    profile = build_signal_profile(to_dimensionless(point_env))
    detectors = standard_detectors(profile, np.random.SeedSequence([spec.seed, 1]),
                                   spec.training_sequences, spec.memory, names=spec.detectors)
    return estimate_ber(detectors, point_env, spec.backend, spec.n_sequences, spec.seed,
                        profile=profile, pe=(pe_par, pe_perp))


def _point_rows(args) -> list[list]:
    env, pe_par, pe_perp, m, spec = args
    digest = replace(env.with_peclet(pe_par, pe_perp), m=m).digest()
    try:
        report = ber_point(env, pe_par, pe_perp, m, spec)
    except Exception as exc:  # recorded per point, sweep continues
        status = f"error: {type(exc).__name__}: {exc}"
        return [[_fmt(pe_par), _fmt(pe_perp), m, name, spec.backend, spec.n_sequences,
                 "nan", "nan", "nan", spec.seed, digest, status] for name in spec.detectors]
    return [row + [digest, "ok"] for row in report.rows()]


def run_ber_sweep(spec: SweepSpec, env: PhysicalEnv, workers: int | None = None) -> Dataset:
    """One row per (grid value, M, detector), in grid order."""
    jobs = [(env, *spec.flow(v), m, spec) for v in spec.grid for m in spec.m_list]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            chunks = list(pool.map(_point_rows, jobs))
    else:
        chunks = [_point_rows(j) for j in jobs]
    rows = [r for chunk in chunks for r in chunk]
    meta = {"axis": spec.axis, "seed": spec.seed, "env_hash": env.digest(),
            "spec": asdict(spec), "env": asdict(env)}
    return Dataset("ber", list(BER_HEADER), rows, meta)


def version_string() -> str:
    try:
        sha = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"{__version__}+g{sha}" if sha else __version__


def _pe_region(pe: float) -> tuple[str, float]:
    """Split Peclet axis: log scale for each sign, zero on its own."""
    if pe == 0:
        return "zero", 0.0
    return ("neg" if pe < 0 else "pos"), math.log10(abs(pe))


def _safe(s: str) -> str:
    return s.replace("-", "m").replace(".", "p")


def emit_plot_data(dataset: Dataset, out_dir: str | Path, layout: str | None = None) -> list[Path]:
    """Write one CSV per plotted series plus a ``metadata.json`` sidecar.

    Deviation data: one series per flow, x = t* (log axis).  BER data: one
    series per (detector, M), with the Peclet axis split into negative,
    zero and positive regions.
    """
    if not dataset.rows:
        raise ValueError("dataset is empty")
    layout = layout or dataset.kind
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series: dict[str, list[list]] = {}
    if layout == "deviation":
        header = ["t_star", "log10_t_star", "rel_deviation"]
        for t, pp, pq, _, _, dev, _ in dataset.rows:
            key = f"deviation_pe_par_{_safe(pp)}_pe_perp_{_safe(pq)}"
            series.setdefault(key, []).append([t, _fmt(math.log10(float(t))), dev])
    elif layout == "ber":
        header = ["pe_par", "pe_perp", "region", "x_log10_abs_pe", "ber", "ci_lo", "ci_hi"]
        axis = dataset.meta.get("axis", "pe_par")
        idx = {name: i for i, name in enumerate(dataset.header)}
        for r in dataset.rows:
            x = float(r[idx["pe_perp"]] if axis == "pe_perp" else r[idx["pe_par"]])
            region, xlog = _pe_region(x)
            key = f"ber_{r[idx['detector']]}_M{r[idx['M']]}"
            series.setdefault(key, []).append([r[idx["pe_par"]], r[idx["pe_perp"]], region,
                                               _fmt(xlog), r[idx["ber"]], r[idx["ci_lo"]],
                                               r[idx["ci_hi"]]])
    else:
        raise ValueError(f"unknown layout {layout!r}")

    written = []
    for key, rows in series.items():
        path = out / f"{key}.csv"
        Path(path).write_text(Dataset(layout, header, rows).to_csv())
        written.append(path)
    meta = {
        "layout": layout,
        "series": [p.name for p in written],
        "env_hash": dataset.meta.get("env_hash"),
        "seed": dataset.meta.get("seed"),
        "version": version_string(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    sidecar = out / "metadata.json"
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))
    return written + [sidecar]
