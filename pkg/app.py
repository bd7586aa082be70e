import logging
import os
import sys
import click

import riskbounds
from riskbounds.errors import RiskBoundsError

logger = logging.getLogger("riskbounds.app")


# Define shared options
def config_options(func):
    """
    Options every command takes: the run-config file, the result path and the table format.
    """
    func = click.option('--format', 'fmt', type=click.Choice(['json', 'csv']), default=None,
                        help='Also write bulk tables as CSV when set to csv.')(func)
    func = click.option('--output', type=click.Path(dir_okay=False), default=None,
                        help='Result document path; relative paths resolve against the output directory.')(func)
    func = click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), required=True,
                        help='JSON run configuration.')(func)
    return func


def execute(ctx, command, config_path, output, fmt, **overrides):
    """
    Parse the config for a command, apply command-line overrides, run it and exit with its code.

    Exit codes: 0 success, 1 configuration error, 2 computation error.
    """
    if fmt is not None:
        overrides['output'] = {'format': fmt}
    try:
        config = riskbounds.run_config.load_config(config_path, command, overrides)
    except RiskBoundsError as e:
        logger.error("invalid configuration: %s", e.message)
        click.echo(riskbounds.run_config.to_json(riskbounds.run_config.error_document(e)))
        ctx.exit(e.exit_code)
    code, document = riskbounds.run_config.run(config, ctx.obj['output_dir'], output)
    click.echo(riskbounds.run_config.to_json(document))
    ctx.exit(code)


# Define CLI commands
@click.group()
@click.option('--verbose', is_flag=True, help='Log at DEBUG level.')
@click.option('--output-dir', envvar='RISKBOUNDS_OUTPUT_DIR', type=click.Path(file_okay=False), default=None,
              help='Directory for result documents (default: current directory).')
@click.pass_context
def cli(ctx, verbose, output_dir):
    """
    Robust risk-aggregation bounds and risk sharing for the averaged quantile.
    """
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, stream=sys.stderr)
    ctx.ensure_object(dict)
    ctx.obj['output_dir'] = output_dir or os.getcwd()


@cli.command()
@config_options
@click.pass_context
def bound(ctx, config_path, output, fmt):
    """
    Upper (direction sup) or lower (direction inf) bound on R over [r, r+s] of the sum, with the
    sharpness status and, unless oracle is false, the oracle gap.
    """
    execute(ctx, 'bound', config_path, output, fmt)


@cli.command()
@config_options
@click.pass_context
def ird(ctx, config_path, output, fmt):
    """
    Bound on the inter-RVaR difference R[r2, s2] - R[r1, s1] of the sum.
    """
    execute(ctx, 'ird', config_path, output, fmt)


@cli.command()
@config_options
@click.pass_context
def qdiff(ctx, config_path, output, fmt):
    """
    Bound on the quantile difference q^+_s - q^-_r of the sum.
    """
    execute(ctx, 'qdiff', config_path, output, fmt)


@cli.command()
@config_options
@click.pass_context
def share(ctx, config_path, output, fmt):
    """
    Risk sharing: inf-convolution value, optimal allocation and its dependence structure.

    Notes
    -------
    The total comes from "total": {"values": [...]}, a CSV path, or a parametric family discretized
    on "m" atoms. Every m * beta_i must be an integer.
    """
    execute(ctx, 'share', config_path, output, fmt)


@cli.command()
@config_options
@click.pass_context
def sharpness(ctx, config_path, output, fmt):
    """
    Bound formula against the exhaustive or rearrangement oracle.
    """
    execute(ctx, 'sharpness', config_path, output, fmt)


@cli.command()
@config_options
@click.option('--sweep', default=None, help='Grid of s values, e.g. s=0.05:0.95:0.05.')
@click.option('--jobs', type=int, default=None, help='Sweep points computed in parallel.')
@click.pass_context
def compare(ctx, config_path, output, fmt, sweep, jobs):
    """
    Table of new and comparison bounds with oracle estimates per window, written as CSV.
    """
    execute(ctx, 'compare', config_path, output, fmt, sweep=sweep, jobs=jobs)


if __name__ == '__main__':
    cli(obj={})
