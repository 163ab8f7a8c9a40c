"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 2 usage error, 3 budget exhausted, 4 nonconvergence,
5 validation failure, 6 output directory locked.
"""

from __future__ import annotations

import dataclasses
import signal
import sys

import click

from .dynamics import IntegrationFailure, NonConvergence, QuadratureError
from .io import STAGES, LockError, Pipeline, RunConfig, output_lock
from .tilewalk import WalkBudgetExceeded
from .zeros import ContourError

EXIT_BUDGET = 3
EXIT_NONCONVERGENCE = 4
EXIT_VALIDATION = 5
EXIT_LOCKED = 6


def _config_from(opts: dict) -> RunConfig:
    base = RunConfig.from_json(opts["config"]) if opts.get("config") else RunConfig()
    changes = {}
    if opts.get("surface") is not None:
        changes["surface"] = opts["surface"]
    params = dict(base.surface_params)
    if opts.get("ell") is not None:
        params["ell"] = opts["ell"]
    changes["surface_params"] = params
    for key in ("surface_json", "t_max", "order", "steps", "budget", "out_dir", "margin"):
        if opts.get(key) is not None:
            changes[key] = opts[key]
    for key in ("re_range", "im_range"):
        if opts.get(key):
            changes[key] = opts[key]
    if opts.get("rect"):
        changes["rectangles"] = opts["rect"]
    if opts.get("bump"):
        changes["bumps"] = opts["bump"]
    if opts.get("vary_bump"):
        changes["variation_bump"] = opts["vary_bump"]
    if opts.get("vary_pair"):
        changes["variation_pair"] = opts["vary_pair"]
    if opts.get("vary_count") is not None:
        changes["variation_count"] = opts["vary_count"]
    return dataclasses.replace(base, **changes)


def _options(fn):
    opts = [
        click.option("--config", type=click.Path(exists=True, dir_okay=False),
                     help="JSON run configuration; flags override it."),
        click.option("--surface", help="Built-in surface: pentagon1 or pentagon2."),
        click.option("--ell", type=float, help="Side parameter of pentagon2."),
        click.option("--surface-json", type=click.Path(exists=True, dir_okay=False),
                     help="Surface saved by the surface subcommand."),
        click.option("--bump", type=(float, float, float, float), multiple=True,
                     help="Conformal bump X Y RADIUS AMPLITUDE (repeatable)."),
        click.option("--tmax", "t_max", type=float, help="Sojourn-time truncation."),
        click.option("--order", type=click.IntRange(0, 1), help="Series order N."),
        click.option("--re", "re_range", type=(float, float), help="Grid Re s range."),
        click.option("--im", "im_range", type=(float, float), help="Grid Im s range."),
        click.option("--steps", type=int, help="Grid points per axis."),
        click.option("--rect", type=(float, float, float, float), multiple=True,
                     help="Zero-scan box RE_LO RE_HI IM_LO IM_HI (repeatable)."),
        click.option("--margin", type=float, help="Required distance from the abscissa."),
        click.option("--budget", type=int, help="Tile-walk budget."),
        click.option("--vary-bump", type=(float, float, float, float),
                     help="Variation bump X Y RADIUS AMPLITUDE."),
        click.option("--vary-pair", type=(int, int), help="Cusp pair for the variation report."),
        click.option("--vary-count", type=int, help="Number of classes in the variation report."),
        click.option("--out", "out_dir", type=click.Path(file_okay=False),
                     help="Output directory."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def run_stage(stage: str, opts: dict) -> int:
    """Run one stage and return the process exit code."""
    # turn SIGTERM into SystemExit so the output lock is released
    signal.signal(signal.SIGTERM, lambda *_: sys.exit(128 + signal.SIGTERM))
    try:
        config = _config_from(opts)
        pipeline = Pipeline(config)
        with output_lock(config.out_dir):
            path = pipeline.write(stage)
    except WalkBudgetExceeded as exc:
        click.echo(f"budget exhausted: {exc}", err=True)
        return EXIT_BUDGET
    except (NonConvergence, IntegrationFailure, QuadratureError, ContourError) as exc:
        click.echo(f"nonconvergence: {exc}", err=True)
        return EXIT_NONCONVERGENCE
    except LockError as exc:
        click.echo(str(exc), err=True)
        return EXIT_LOCKED
    except (ValueError, TypeError) as exc:
        click.echo(f"validation failure: {exc}", err=True)
        return EXIT_VALIDATION
    click.echo(str(path))
    return 0


@click.group()
def main():
    """Scattered geodesics and scattering-determinant parametrices of cusp surfaces."""


def _make(stage: str):
    @main.command(name=stage, help=f"Run the {stage} stage and write its artifact.")
    @_options
    def command(**opts):
        sys.exit(run_stage(stage, opts))

    return command


for _stage in STAGES:
    _make(_stage)


if __name__ == "__main__":
    main()
