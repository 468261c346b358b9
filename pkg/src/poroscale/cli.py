"""Command-line entry point: ``poroscale {simulate,reconstruct,noise-study,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .balancing import STRATEGIES


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, default=None, help="TOML experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set training.lr=5e-4 (repeatable)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--omega", type=float, default=None)
    p.add_argument("--no-figures", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poroscale", description=(
        "Multi-region reconstruction of Biot poroelastic parameters with a scaled "
        "property network and loss balancing."))
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize full-grid field datasets for every region")
    _common(p)

    p = sub.add_parser("reconstruct", help="train the property network on the regions' fields")
    _common(p)
    p.add_argument("--balance", choices=STRATEGIES, default=None)
    p.add_argument("--unscaled", action="store_true", help="replace the scaling layer by unit scales")

    p = sub.add_parser("noise-study", help="error versus ensemble size under measurement noise")
    _common(p)
    p.add_argument("--counts", type=int, nargs="+", default=None, help="ensemble sizes N_T")
    p.add_argument("--level", type=float, default=None, help="relative noise level")
    p.add_argument("--save-datasets", action="store_true",
                   help="also write the averaged fields in dataset format")

    p = sub.add_parser("report", help="render figures and an error table from a saved trace")
    p.add_argument("--trace", type=Path, required=True, help="trace.csv written by reconstruct")
    p.add_argument("--out", type=Path, default=None)
    return parser


def _config(args):
    from .config import load_config

    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out_dir={json.dumps(str(args.out))}")
    if args.epochs is not None:
        overrides.append(f"training.epochs={args.epochs}")
    if args.omega is not None:
        overrides.append(f"physics.omega={args.omega!r}")
    if getattr(args, "balance", None):
        overrides.append(f'balance.strategy="{args.balance}"')
    if getattr(args, "unscaled", False):
        overrides.append("network.scaled=false")
    if getattr(args, "counts", None):
        overrides.append(f"noise.counts={list(args.counts)}")
    if getattr(args, "level", None) is not None:
        overrides.append(f"noise.level={args.level!r}")
    return load_config(args.config, overrides)


def cmd_simulate(args) -> int:
    from .forward import SourceSpec, pde_residual_check
    from .io import write_dataset
    from .trainer import build_regions

    cfg = _config(args)
    out = Path(cfg.out_dir)
    ph = cfg.physics
    for r in build_regions(cfg):
        path, _ = write_dataset(out / f"{r.name}.csv", r.field, r.truth,
                                SourceSpec(ph.D, ph.varsigma, r.field.center))
        check = pde_residual_check(r.field, r.truth)
        print(f"{r.name}: wrote {path} (seed {cfg.seed}); relative residuals "
              f"momentum {check['momentum']:.2e}, mass {check['mass']:.2e}")
    return 0


def cmd_reconstruct(args) -> int:
    from .trainer import emit_reports, run_reconstruction, write_xi_table

    cfg = _config(args)
    print(f"reconstruct: strategy {cfg.balance.strategy}, {cfg.training.epochs} epochs, seed {cfg.seed}")
    trace = run_reconstruction(cfg)
    paths = emit_reports(trace, cfg.out_dir, figures=not args.no_figures)
    write_xi_table(trace, Path(cfg.out_dir) / "xi.csv")
    _print_result(trace)
    print(f"reports in {cfg.out_dir}: " + ", ".join(sorted(p.name for p in map(Path, paths.values()))))
    return 0 if trace.status != "diverged" else 2


def _print_result(trace):
    from .biot import PARAM_NAMES

    print(f"status {trace.status} after {trace.epochs} epochs ({trace.runtime:.1f} s), seed {trace.seed}")
    for i, name in enumerate(trace.region_names):
        pred = "  ".join(f"{p}={v:.5g}" for p, v in zip(PARAM_NAMES, trace.final_theta[i]))
        print(f"  {name}: {pred}")
        if trace.xi is not None:
            errs = "  ".join(f"{p}={100 * v:.2f}%" for p, v in zip(PARAM_NAMES, trace.xi[i]))
            print(f"  {' ' * len(name)}  Xi: {errs}")


def cmd_noise_study(args) -> int:
    from .fields import NoiseSpec, noisy_averages
    from .io import write_dataset
    from .trainer import build_regions, emit_noise_report, run_noise_study

    cfg = _config(args)
    regions = build_regions(cfg)
    study = run_noise_study(cfg, regions)
    out = Path(cfg.out_dir)
    emit_noise_report(study, out, figures=not args.no_figures)
    if args.save_datasets:
        nz = cfg.noise
        spec = NoiseSpec(nz.level, max(study.counts), cfg.seed, nz.distribution)
        for i, r in enumerate(regions):
            for n_t, fld in noisy_averages(r.field, spec, study.counts, stream=i).items():
                write_dataset(out / f"{r.name}_nt{n_t}.csv", fld, r.truth)
    print(f"noise study: level {cfg.noise.level}, seed {cfg.seed}")
    for n_t in study.counts:
        xi = study.xi[n_t]
        if xi is not None:
            print(f"  N_T={n_t}: max Xi per region " + ", ".join(f"{v:.3%}" for v in xi.max(axis=1))
                  + f"; Xi(kappa) " + ", ".join(f"{v:.3%}" for v in xi[:, 5]))
    for name, th in study.theta_misfit.items():
        print(f"  {name} single-realization misfit: "
              + ", ".join(f"{k}={v:.3f}" for k, v in th.items()))
    print(f"reports in {out}")
    return 0


def cmd_report(args) -> int:
    from .plotting import plot_trace
    from .trainer import load_trace, write_xi_table

    trace = load_trace(args.trace)
    out = args.out or args.trace.parent
    out.mkdir(parents=True, exist_ok=True)
    paths = plot_trace(trace, out)
    paths["xi"] = write_xi_table(trace, out / "xi.csv")
    _print_result(trace)
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    return 0


COMMANDS = {"simulate": cmd_simulate, "reconstruct": cmd_reconstruct,
            "noise-study": cmd_noise_study, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"poroscale: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
