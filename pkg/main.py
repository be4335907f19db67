#!/usr/bin/env python3
import argparse
import logging
import os
import sys
import traceback
from typing import List, Optional

# Import version
try:
    from __version__ import __version__, __version_source__
except ImportError:
    __version__, __version_source__ = "unknown", "fallback"

# Load environment variables from .env file
from utils import env_loader  # noqa: F401
from utils.config_validator import ConfigValidator
from utils.report_writer import RunManifest, write_manifest
from utils.settings import LabSettings, load_settings

from services.lib.errors import LabError, SpecFormatError
from services.lib.pencil import BAND

LOG_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'
logger = logging.getLogger("lab")

COMMANDS = ("spectrum", "classify", "consistency", "solve", "sweep", "witness", "examples")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="main.py",
        description="Smoothness lab for elliptic problems with nonlocal boundary conditions",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("action", nargs="?", help="'list' for the examples command")

    source = parser.add_mutually_exclusive_group()
    source.add_argument("--spec", help="problem spec JSON file")
    source.add_argument("--example", help="shipped example id")
    source.add_argument("--s", type=float, dest="s_value",
                        help="flat-boundary vertex with b1(0) = b2(0) = s/2")

    parser.add_argument("--out", help="output directory (LAB_OUTPUT_DIR)")
    parser.add_argument("--threads", type=int, help="work-pool size (LAB_THREADS)")
    parser.add_argument("--seed", type=int, help="seed recorded in the manifest (LAB_SEED)")
    parser.add_argument("--log-level", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    parser.add_argument("--band", type=float, nargs=2, metavar=("IM_LOW", "IM_HIGH"), default=list(BAND))
    parser.add_argument("--window", type=float, help="half width of the Re lambda search window (LAB_RE_WINDOW)")
    parser.add_argument("--experiment", action="append", default=[],
                        help="experiment id or manifest path (repeatable); solve runs all shipped ones without it")
    parser.add_argument("--grid", type=int, nargs=2, metavar=("N_OMEGA", "N_T"),
                        help="default grid for exponent experiments")
    parser.add_argument("--T", type=float, dest="truncation_t", help="default log-depth (LAB_TRUNCATION_T)")
    parser.add_argument("--s-min", type=float, default=-3.0)
    parser.add_argument("--s-max", type=float, default=1.0)
    parser.add_argument("--s-step", type=float, default=0.1)
    parser.add_argument("--summary", action="store_true", help="print the configuration summary")
    return parser


def resolve_spec(args):
    from services.lib.spec_io import halfpi_spec, load_example, load_spec

    if args.spec:
        return load_spec(args.spec)
    if args.example:
        return load_example(args.example)
    if args.s_value is not None:
        return halfpi_spec(args.s_value / 2, args.s_value / 2, name=f"halfpi-s{args.s_value:g}")
    raise SpecFormatError(f"'{args.command}' needs --spec, --example or --s")


def effective_settings(args) -> LabSettings:
    n_omega, n_t = args.grid if args.grid else (None, None)
    return load_settings().with_overrides(
        output_dir=args.out, threads=args.threads, seed=args.seed, re_window=args.window,
        grid_n_omega=n_omega, grid_n_t=n_t, truncation_t=args.truncation_t, log_level=args.log_level,
    )


def dispatch(args, settings: LabSettings) -> None:
    from services import classify, experiments, spectrum
    from services.lib.spec_io import list_examples

    out = settings.output_dir
    band = tuple(args.band)
    re_window = (-settings.re_window, settings.re_window)

    if args.command == "examples":
        if args.action not in (None, "list"):
            raise SpecFormatError(f"Unknown examples action '{args.action}' (expected 'list')")
        for example in list_examples():
            print(f"  {example['id']:<18} {example['description']}")
        return
    if args.command == "sweep":
        values = spectrum.sweep_values(args.s_min, args.s_max, args.s_step)
        rows = spectrum.run_sweep(values, out, band, re_window, settings.threads)
        for row in rows:
            print(f"  s={row['s']:+.3f}  {row['case_label']:<8} n={row['n_eigenvalues']}  "
                  f"Im lambda min={row['im_lambda_min']:.6f}")
        return
    if args.command == "solve":
        refs = args.experiment or experiments.list_experiments()
        defaults = {"n_omega": settings.grid_n_omega, "n_t": settings.grid_n_t, "T": settings.truncation_t}
        experiments.run_solve(refs, out, settings.threads, defaults)
        return

    spec = resolve_spec(args)
    if args.command == "spectrum":
        spectrum.run_spectrum(spec, out, band, re_window, settings.threads)
    elif args.command == "classify":
        classify.run_classify(spec, out, band, re_window, settings.threads)
    elif args.command == "consistency":
        classify.run_consistency(spec, out)
    elif args.command == "witness":
        classify.run_witness(spec, out, band, re_window)


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; returns the process exit code"""
    args = build_parser().parse_args(argv)

    ConfigValidator.validate_all()
    settings = effective_settings(args)
    logging.basicConfig(level=getattr(logging, settings.log_level), format=LOG_FORMAT)
    if args.summary:
        ConfigValidator.print_config_summary()

    logger.info(f"--- Nonlocal smoothness lab v{__version__}: {args.command} ---")
    os.makedirs(settings.output_dir, exist_ok=True)
    overrides = {k: v for k, v in vars(args).items() if v is not None and k not in ("command", "action")}
    write_manifest(settings.output_dir, RunManifest(
        command=" ".join([args.command] + ([args.action] if args.action else [])),
        spec_path=args.spec or args.example,
        overrides=overrides,
        output_dir=settings.output_dir,
        seed=settings.seed,
        tool_version=__version__,
        tool_version_source=__version_source__,
    ))

    try:
        dispatch(args, settings)
    except LabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected failure: {e}\n{traceback.format_exc()}")
        return 1
    return 0


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
