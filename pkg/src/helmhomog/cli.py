"""Command line entry point: ``helmhomog {sample,homogenize,solve,sweep,report}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import fem
from .correctors import homogenize_ensemble, realization_correctors
from .expansion import (CorrectorLookup, ScatterSetup, heterogeneous_coefficients,
                        homogenized_coefficients)
from .harness import (ConfigError, SweepReport, _write_csv, load_config, read_errors_csv,
                      render_report, run_sweep, write_homog_csv)
from .microstructure import sample_matern2, write_microstructure
from .scattering import exterior_from_solution, solve_helmholtz, square_boundary
from .seeding import derive_seed

log = logging.getLogger("helmhomog")


def _common(p):
    p.add_argument("--config", help="file of 'section.key = value' lines")
    p.add_argument("--seed", type=int, help="master seed (overrides sweep.master_seed)")
    p.add_argument("--out", help="output directory (overrides output.dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="helmhomog", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("sample", help="write one microstructure file")
    _common(p)
    p.add_argument("--index", type=int, default=0, help="realization index")
    p = sub.add_parser("homogenize", help="Monte-Carlo effective coefficients -> homog.csv")
    _common(p)
    p = sub.add_parser("solve", help="single scattering solve -> field.csv")
    _common(p)
    p.add_argument("--eps", type=float, help="epsilon (default: first of the list)")
    p.add_argument("--index", type=int, default=0, help="realization index")
    p.add_argument("--homogenized", action="store_true",
                   help="solve with the homogenized coefficients of the seed ensemble")
    p.add_argument("--points", help="observation points 'x y' per line -> exterior.csv")
    p = sub.add_parser("sweep", help="full convergence study")
    _common(p)
    p = sub.add_parser("report", help="re-render rates.csv and decay.svg from errors.csv")
    _common(p)
    return parser


def _config(args):
    return load_config(args.config, master_seed=args.seed, output_dir=args.out)


def cmd_sample(cfg, args) -> int:
    seed = derive_seed(cfg.master_seed, "microstructure", args.index)
    ms = sample_matern2(cfg.process(seed))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_microstructure(ms, out / "microstructure.txt")
    return 0


def cmd_homogenize(cfg, args) -> int:
    hc = homogenize_ensemble(cfg.process_template(), cfg.medium(), cfg.massive_T,
                             cfg.torus_period, cfg.torus_step, cfg.n_realizations,
                             cfg.master_seed)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_homog_csv(out / "homog.csv", hc)
    return 0


def _read_points(path):
    pts = np.loadtxt(path, ndmin=2, encoding="utf-8")
    if pts.shape[1] != 2:
        raise ConfigError("observation file needs two columns 'x y'")
    return pts


def cmd_solve(cfg, args) -> int:
    eps = cfg.epsilon_list[0] if args.eps is None else args.eps
    setup = ScatterSetup.build(cfg.closure_for(), cfg.step(eps), cfg.incident())
    if args.homogenized:
        hc = homogenize_ensemble(cfg.process_template(), cfg.medium(), cfg.massive_T,
                                 cfg.torus_period, cfg.torus_step, cfg.n_realizations,
                                 cfg.master_seed)
        a, n = homogenized_coefficients(setup, hc)
    else:
        seed = derive_seed(cfg.master_seed, "microstructure", args.index)
        ms, cs = realization_correctors(cfg.process(seed), cfg.medium(), cfg.massive_T,
                                        cfg.torus_step)
        a, n = heterogeneous_coefficients(setup, cfg.medium(), eps, ms, CorrectorLookup(cs, eps))
    sol = solve_helmholtz(setup.closure, setup.mesh, setup.dofs, a, n, setup.incident)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    keep = np.zeros(setup.mesh.n_vertices, bool)
    keep[setup.mesh.triangles[setup.mesh.tags != fem.PML].ravel()] = True
    v = setup.mesh.vertices[keep]
    u = sol.values[setup.dofs.vertex_dof[keep]]
    _write_csv(out / "field.csv", ("x", "y", "re", "im"),
               zip(v[:, 0], v[:, 1], u.real, u.imag))
    if args.points:
        pts = _read_points(args.points)
        bd = square_boundary(setup.mesh, setup.center, setup.side)
        val = exterior_from_solution(sol, bd, setup.incident, pts)
        _write_csv(out / "exterior.csv", ("x", "y", "re", "im"),
                   zip(pts[:, 0], pts[:, 1], val.real, val.imag))
    return 0


def cmd_sweep(cfg, args) -> int:
    report = run_sweep(cfg)
    render_report(report, cfg.output_dir)
    failed = report.failed()
    if failed:
        log.error("%d rows failed; see failures.csv", len(failed))
        return 1
    return 0


def cmd_report(cfg, args) -> int:
    out = Path(cfg.output_dir)
    rows = read_errors_csv(out / "errors.csv")
    report = SweepReport(cfg, rows)
    report.fit_all()
    # homog.csv and the side tables of the original run stay untouched
    render_report(report, out, side_tables=False)
    return 1 if report.failed() else 0


COMMANDS = {"sample": cmd_sample, "homogenize": cmd_homogenize, "solve": cmd_solve,
            "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.error("%s failed: %s", args.command, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
