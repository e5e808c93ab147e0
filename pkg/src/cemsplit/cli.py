"""Command line interface: ``cemsplit <verb> [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .cem import check_conditioning, save_basis
from .complement import compute_constants
from .errors import ConfigError, NumericalError
from .experiments import (ERROR_COLUMNS, build_spaces, contrast_sweep, dump_config, elliptic_projection_study,
                          emit_plot, error_plots, load_config, make_kappa, read_error_csv, run_example, sweep_csv)
from .fem import build_fine_mesh, build_system, contrast

log = logging.getLogger("cemsplit")


def cmd_assemble_check(cfg, args) -> None:
    mesh = build_fine_mesh(cfg.n)
    system = build_system(mesh, make_kappa(cfg))
    A, M = system.A, system.M
    asym = abs(A - A.T).max() / abs(A).max()
    msym = abs(M - M.T).max() / abs(M).max()
    print(f"mesh: n={cfg.n}, nodes={mesh.node_count}, cells={mesh.cell_count}, "
          f"boundary={int(mesh.boundary.sum())}, h={mesh.h:g}")
    print(f"kappa: min={system.kappa.min():g}, max={system.kappa.max():g}, contrast={contrast(system.kappa):g}")
    print(f"stiffness: nnz={A.nnz}, symmetry defect={asym:.2e}, max row sum={abs(A.sum(axis=1)).max():.2e}")
    print(f"mass: nnz={M.nnz}, symmetry defect={msym:.2e}, total={M.sum():.15g}")


def cmd_build_spaces(cfg, args) -> None:
    t0 = time.perf_counter()
    spaces = build_spaces(cfg)
    print(f"built spaces in {time.perf_counter() - t0:.1f}s (N={cfg.N}, layers={cfg.layers}, L={cfg.L}, J={cfg.J})")
    M = spaces.system.M
    bases = {"V1_cem": spaces.V1, **{f"V2_{k}": v for k, v in spaces.V2.items()}}
    for name, basis in bases.items():
        print(f"{name}: dim={basis.dim}, mass-Gram condition={check_conditioning(basis, M):.3e}")
    for choice, V2 in spaces.V2.items():
        rep = compute_constants(spaces.system, spaces.decomp, spaces.V1, V2, cfg.omega)
        print(f"{choice}: gamma={rep.gamma:.6f} beta={rep.beta:.6f} supG_V1={rep.supG_V1:.4e} "
              f"supG_V2={rep.supG_V2:.4e} tau_thm32={rep.tau_thm32:.3e} tau_thm33={rep.tau_thm33:.3e}")
    if args.dump:
        os.makedirs(args.dump, exist_ok=True)
        for name, basis in bases.items():
            save_basis(basis, Path(args.dump) / f"{name}.txt")
        print(f"bases written to {args.dump}")


def cmd_run(cfg, args) -> None:
    os.makedirs(cfg.output_dir, exist_ok=True)
    (Path(cfg.output_dir) / "config.txt").write_text(dump_config(cfg))
    results = run_example(cfg)
    for choice, series in results.items():
        finals = "  ".join(f"{c}={series.final(c):.4e}" for c in ERROR_COLUMNS)
        print(f"{choice}: {finals}")
        if any(series.blowup.values()):
            print(f"{choice}: blow-up in {[k for k, v in series.blowup.items() if v]}")
        if not args.no_plots:
            error_plots(series, Path(cfg.output_dir) / f"errors_{choice}")
    print(f"results in {cfg.output_dir}")


def cmd_sweep(cfg, args) -> None:
    rows = contrast_sweep(cfg)
    sys.stdout.write(sweep_csv(rows))
    ratios = [b["supG_V1"] / a["supG_V1"] for a, b in zip(rows, rows[1:])]
    for key in ("supG_V2_first", "supG_V2_second"):
        vals = np.array([r[key] for r in rows])
        print(f"# {key} spread: {(vals.max() - vals.min()) / vals.min():.2e}")
    print("# supG_V1 consecutive ratios: " + ", ".join(f"{r:.4f}" for r in ratios))


def cmd_elliptic(cfg, args) -> None:
    report = elliptic_projection_study(cfg)
    text = "\n".join(report.lines()) + "\n"
    sys.stdout.write(text)
    os.makedirs(cfg.output_dir, exist_ok=True)
    (Path(cfg.output_dir) / "elliptic.txt").write_text(text)


def cmd_plot(cfg, args) -> None:
    if not args.input:
        raise ConfigError("plot needs at least one --input error CSV")
    for path in args.input:
        series = read_error_csv(path)
        prefix = Path(args.output or cfg.output_dir) / Path(path).stem
        os.makedirs(prefix.parent, exist_ok=True)
        for out in error_plots(series, prefix):
            print(out)


COMMANDS = {
    "assemble-check": cmd_assemble_check,
    "build-spaces": cmd_build_spaces,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "elliptic": cmd_elliptic,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cemsplit", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    parser.add_argument("--dump", help="build-spaces: directory for basis dumps")
    parser.add_argument("--input", action="append", default=[], help="plot: error CSV (repeatable)")
    parser.add_argument("--output", help="plot: output directory")
    parser.add_argument("--no-plots", action="store_true", help="run: skip SVG output")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
