"""
Command-line surface for kitsim

Usage: python -m kitsim <command> --config PATH [--out DIR] [--seed U64]
                                  [--format csv|json] [-v]

Commands:
- simulate:    one run of the configured strategy, writes moments.<fmt>
- compare:     paired unconstrained/controlled legs, one moments file per leg
- sweep:       fundamental diagram over sweep.rho, writes diagram.<fmt>
- contours:    speed histograms over contours.tau_grid, writes contours.<fmt>
- relax-check: monokinetic relaxation against the closed form, writes relax.<fmt>

Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from . import __version__
from .config import RunManifest, setup_logging
from .control import StrategyKind, VdMode
from .engine import InitKind, run
from .errors import ConfigError, KitsimError, RunError, UsageError
from .experiments import (
    RELAX_TOLERANCE,
    distribution_evolution,
    fundamental_diagram,
    nu0_label,
    relaxation_oracle,
    variance_comparison,
)
from .output import FORMATS, output_path, write_outputs

LOG = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

MANIFEST_NAME = "manifest.cfg"


class KitsimArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting"""

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


class RunContext:
    """Resolved manifest plus where and how to write the results"""

    def __init__(self, manifest: RunManifest, out_dir: Path, fmt: str, progress: bool = False):
        self.manifest = manifest
        self.out_dir = Path(out_dir)
        self.fmt = fmt
        self.progress = progress

    def write(self, results, stem: str, overrides: Optional[Dict[str, str]] = None) -> Path:
        path = write_outputs(results, self.fmt, output_path(self.out_dir, stem, self.fmt),
                             self.manifest.provenance(overrides))
        self.manifest.outputs.append(path)
        return path


def simulate_command(ctx: RunContext) -> None:
    series = run(ctx.manifest.sim, snapshot_taus=()).series
    ctx.write(series, "moments")


def compare_command(ctx: RunContext) -> None:
    manifest = ctx.manifest
    legs = variance_comparison(manifest.sim, manifest.compare_nu0, manifest.compare_kind, vd=manifest.vd)
    for leg in legs:
        if leg.strategy.kind is StrategyKind.NONE:
            stem = "moments_none"
        else:
            stem = f"moments_{leg.strategy.tag}_nu0={nu0_label(leg.strategy.nu0)}"
        ctx.write(leg.series, stem)


def sweep_command(ctx: RunContext) -> None:
    rows = fundamental_diagram(ctx.manifest.sweep, workers=ctx.manifest.workers, progress=ctx.progress)
    ctx.write(rows, "diagram")


def contours_command(ctx: RunContext) -> None:
    manifest = ctx.manifest
    grid = distribution_evolution(manifest.sim, manifest.contours_n_bins, manifest.contours_tau_grid)
    ctx.write(grid, "contours")


def relax_check_command(ctx: RunContext) -> None:
    sim = ctx.manifest.sim
    strategy = sim.strategy
    if strategy.kind is not StrategyKind.DESIRED or strategy.vd.mode is not VdMode.CONSTANT:
        raise ConfigError("relax-check needs control.kind = desired with control.vd_mode = constant")
    if sim.init.kind is not InitKind.DIRAC:
        raise ConfigError("relax-check needs init.kind = dirac with init.v0")
    result = relaxation_oracle(
        v0=sim.init.v0,
        vd=strategy.vd.value,
        rho=sim.rho,
        nu0=strategy.nu0,
        epsilon=sim.scaling.epsilon,
        tau_end=sim.tau_end,
        n_particles=sim.n_particles,
        seed=sim.seed,
    )
    effective = result.measured.config
    ctx.write(result, "relax", overrides={
        "scaling.dtau": repr(effective.scaling.dtau),
        "sim.sample_stride": str(effective.sample_stride),
    })
    if not result.monokinetic:
        raise RunError("relax-check: the ensemble did not stay monokinetic")
    if not result.passed:
        raise RunError(f"relax-check: max relative error {result.max_rel_error:.3e} "
                       f"exceeds {RELAX_TOLERANCE:.0%}")
    print(f"relax-check passed: max relative error {result.max_rel_error:.3e}", file=sys.stderr)


COMMANDS: Dict[str, Callable[[RunContext], None]] = {
    "simulate": simulate_command,
    "compare": compare_command,
    "sweep": sweep_command,
    "contours": contours_command,
    "relax-check": relax_check_command,
}


def build_parser() -> KitsimArgumentParser:
    parser = KitsimArgumentParser(
        prog="kitsim",
        description="Kinetic traffic simulator with MPC-derived feedback controls",
    )
    parser.add_argument("command", choices=sorted(COMMANDS), help="experiment to run")
    parser.add_argument("--config", required=True, type=Path, metavar="PATH", help="manifest file")
    parser.add_argument("--out", default=Path("."), type=Path, metavar="DIR",
                        help="output directory (default: current directory)")
    parser.add_argument("--seed", type=int, metavar="U64", help="override sim.seed")
    parser.add_argument("--format", choices=FORMATS, default="csv", help="output format (default: csv)")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for debug output")
    parser.add_argument("--version", action="version", version=f"kitsim {__version__}")
    return parser


def dispatch(command: str, manifest: RunManifest, out_dir: Path, fmt: str = "csv",
             progress: bool = False) -> int:
    """
    Run one command and write its outputs next to the resolved manifest

    Returns:
        Exit code: 0 on success, 1 on configuration errors, 2 on runtime errors
    """
    handler = COMMANDS.get(command)
    if handler is None:
        print(f"kitsim: error: unknown command {command!r}", file=sys.stderr)
        print(build_parser().format_usage().rstrip(), file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(out_dir)
    ctx = RunContext(manifest, out_dir, fmt, progress)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest.save(out_dir / MANIFEST_NAME)
        LOG.info(f"🚀 CLI: {command} {manifest.sim.describe()}")
        handler(ctx)
    except (ConfigError, UsageError) as exc:
        print(f"kitsim: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KitsimError as exc:
        print(f"kitsim: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        LOG.debug("💥 CLI: unexpected failure", exc_info=True)
        print(f"kitsim: error: {command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    LOG.info(f"✅ CLI: {command} wrote {len(manifest.outputs)} file(s) to {out_dir}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"kitsim: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    setup_logging(args.verbose)
    try:
        manifest = RunManifest.load(args.config, seed=args.seed)
    except ConfigError as exc:
        print(f"kitsim: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return dispatch(args.command, manifest, args.out, args.format, progress=args.verbose >= 1)
