"""Command-line entry point: ``flowmc {deviation,ber,signal,validate}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dimensionless import PhysicalEnv, load_env, to_dimensional_time, to_dimensionless
from .experiments import (DEFAULT_DETECTORS, DEFAULT_M, DEFAULT_PE_PAR, DEFAULT_PE_PERP,
                          SweepSpec, deviation_time_grid, emit_plot_data, run_ber_sweep,
                          run_deviation_study)
from .signal import build_signal_profile, expected_count

log = logging.getLogger("flowmc")

# flag name -> (config key, PhysicalEnv field, multiplier)
_ENV_FLAGS = [
    ("n_em", "n_em", None), ("p1", "p1", 1.0), ("b_len", "b_len", None),
    ("t_int_ms", "t_int", 1e-3), ("d_a", "diffusion_coefficient", 1.0),
    ("x0_um", "x0", 1e-6), ("r_obs_nm", "r_obs", 1e-9), ("noise_mean", "noise_mean", 1.0),
    ("dt_us", "dt", 1e-6), ("m", "m", None),
]


def _add_env_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("environment (overrides --config)")
    g.add_argument("--config", type=Path, help="TOML file with channel parameters")
    for key, _, mult in _ENV_FLAGS:
        g.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int if mult is None else float)
    g.add_argument("--v-mm-s", dest="v_mm_s", type=float, nargs=3, metavar=("VX", "VY", "VZ"))


def _env_from_args(args) -> PhysicalEnv:
    env = load_env(args.config) if args.config else PhysicalEnv()
    changes = {}
    for key, name, mult in _ENV_FLAGS:
        value = getattr(args, key)
        if value is not None:
            changes[name] = value if mult is None else value * mult
    if args.v_mm_s is not None:
        changes["velocity"] = tuple(v * 1e-3 for v in args.v_mm_s)
    return replace(env, **changes)


def _write(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)
        log.info("wrote %s", out)


def cmd_deviation(args) -> int:
    env = to_dimensionless(_env_from_args(args), args.reference_length)
    flows = None
    if args.pe_par is not None or args.pe_perp is not None:
        flows = [(p, 0.0) for p in (args.pe_par or [])] + [(0.0, p) for p in (args.pe_perp or [])]
    grid = deviation_time_grid(args.t_min, args.t_max, args.t_points)
    data = run_deviation_study(env, flows, grid)
    _write(data.to_csv(), args.output)
    if args.plot_dir:
        emit_plot_data(data, args.plot_dir)
    return 0


def cmd_ber(args) -> int:
    env = _env_from_args(args)
    default_grid = DEFAULT_PE_PERP if args.axis == "pe_perp" else DEFAULT_PE_PAR
    n_seq = 1000 if args.paper_scale else args.n_seq
    spec = SweepSpec(axis=args.axis, grid=tuple(args.grid or default_grid),
                     m_list=tuple(args.m_list or DEFAULT_M),
                     detectors=tuple(args.detectors or DEFAULT_DETECTORS), backend=args.backend,
                     n_sequences=n_seq, seed=args.seed, training_sequences=args.training,
                     memory=args.memory)
    data = run_ber_sweep(spec, env, workers=args.workers)
    _write(data.to_csv(), args.output)
    if args.plot_dir:
        emit_plot_data(data, args.plot_dir)
    return 0


def cmd_signal(args) -> int:
    env = to_dimensionless(_env_from_args(args))
    rows = []
    if args.profile:
        profile = build_signal_profile(env, args.mode, args.isi_depth)
        header = ["lag", "m", "t_star", "t_seconds", "expected_fraction", "expected_molecules"]
        for k in range(profile.isi_depth + 1):
            for m in range(profile.m):
                t = profile.offsets[m] + k * env.t_int
                f = float(profile.table[k, m])
                rows.append([k, m + 1, repr(float(t)), repr(float(to_dimensional_time(t, env))),
                             repr(f), repr(f * env.n_em)])
    else:
        t = np.geomspace(args.t_min, args.t_max, args.t_points)
        exact = expected_count(t, env, "exact")
        uca = expected_count(t, env, "uca")
        header = ["t_star", "t_seconds", "exact", "uca", "exact_molecules", "uca_molecules"]
        for ti, e, u in zip(t, exact, uca):
            rows.append([repr(float(ti)), repr(float(to_dimensional_time(ti, env))), repr(float(e)),
                         repr(float(u)), repr(float(e) * env.n_em), repr(float(u) * env.n_em)])
    out = sys.stdout if args.output is None else open(args.output, "w", newline="")
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if args.output is not None:
            out.close()
    return 0


def cmd_validate(args) -> int:
    from .acceptance import run_all

    results = run_all(set(args.only) if args.only else None)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} acceptance checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowmc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("deviation", help="UCA relative deviation vs exact count")
    _add_env_args(p)
    p.add_argument("--pe-par", type=float, nargs="*")
    p.add_argument("--pe-perp", type=float, nargs="*")
    p.add_argument("--t-min", type=float, default=1e-3)
    p.add_argument("--t-max", type=float, default=2.0)
    p.add_argument("--t-points", type=int, default=400)
    p.add_argument("--reference-length", type=float, default=None, help="metres; default x0")
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--plot-dir", type=Path)
    p.set_defaults(func=cmd_deviation)

    p = sub.add_parser("ber", help="bit-error rate sweep over Peclet numbers")
    _add_env_args(p)
    p.add_argument("--axis", choices=["pe_par", "pe_perp", "pe_both"], default="pe_par")
    p.add_argument("--grid", type=float, nargs="+")
    p.add_argument("--m-list", type=int, nargs="+")
    p.add_argument("--detectors", nargs="+", choices=list(DEFAULT_DETECTORS))
    p.add_argument("--backend", choices=["statistical", "particle"], default="statistical")
    p.add_argument("--n-seq", type=int, default=100)
    p.add_argument("--paper-scale", action="store_true", help="1000 sequences per point")
    p.add_argument("--training", type=int, default=100, help="threshold training sequences")
    p.add_argument("--memory", type=int, default=2)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--plot-dir", type=Path)
    p.set_defaults(func=cmd_ber)

    p = sub.add_parser("signal", help="dump expected-count curves")
    _add_env_args(p)
    p.add_argument("--mode", choices=["exact", "uca"], default="exact")
    p.add_argument("--profile", action="store_true", help="tabulate at sample offsets and lags")
    p.add_argument("--isi-depth", type=int, default=None)
    p.add_argument("--t-min", type=float, default=1e-3)
    p.add_argument("--t-max", type=float, default=2.0)
    p.add_argument("--t-points", type=int, default=200)
    p.add_argument("-o", "--output", type=Path)
    p.set_defaults(func=cmd_signal)

    p = sub.add_parser("validate", help="run the acceptance checks")
    p.add_argument("--only", nargs="+", choices=["1", "2", "3", "4", "5", "6", "7"])
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
