"""
Command Registration
Builds the `siamadapt` click group and registers every subcommand
"""

import functools
import logging
import sys
from pathlib import Path

import click

from siamadapt import __version__
from siamadapt.app import create_context
from siamadapt.utils.errors import SiamAdaptError
from siamadapt.utils.validators import parse_overrides

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2


class SiamAdaptGroup(click.Group):
    """Click group mapping usage errors to exit code 1 instead of click's 2"""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            result = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.ClickException as e:
            e.show()
            sys.exit(EXIT_USER_ERROR)
        except click.Abort:
            click.echo('Aborted!', err=True)
            sys.exit(EXIT_USER_ERROR)
        if not standalone_mode:
            return result
        sys.exit(result if isinstance(result, int) else EXIT_OK)


def handle_errors(func):
    """Map SiamAdaptError to exit code 1 and anything else to exit code 2"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            func(*args, **kwargs)
        except SiamAdaptError as e:
            click.echo(f"Error: {e.message}", err=True)
            ctx.exit(EXIT_USER_ERROR)
        except (click.exceptions.Exit, click.ClickException, click.Abort):
            raise
        except Exception as e:
            logger.exception(f"Internal error in {ctx.info_name}")
            click.echo(f"Internal error: {type(e).__name__}: {e}", err=True)
            ctx.exit(EXIT_INTERNAL_ERROR)
    return wrapper


@click.group(cls=SiamAdaptGroup)
@click.option('--config', 'config_path', type=click.Path(path_type=Path), default=None,
              help='INI configuration file')
@click.option('--env', default=None, help='Preset: default, toy or testing (SIAMADAPT_ENV)')
@click.option('--set', 'overrides', multiple=True, metavar='SECTION.KEY=VALUE',
              help='Configuration override, repeatable; wins over the file')
@click.option('--seed', type=int, default=None, help='Seed override')
@click.option('--log-level', default=None, help='Log level override')
@click.version_option(__version__, prog_name='siamadapt')
@click.pass_context
@handle_errors
def cli(ctx, config_path, env, overrides, seed, log_level):
    """Siamese trackers with compact latent network adjustment"""
    if ctx.resilient_parsing:
        return
    context = create_context(config_path, env, parse_overrides(overrides), seed, log_level)
    ctx.obj = context
    ctx.call_on_close(context.close)


def register_commands(group: click.Group) -> click.Group:
    """Attach every subcommand to the group"""
    from siamadapt.commands.training import pretrain, train
    from siamadapt.commands.tracking import track
    from siamadapt.commands.evaluation import analyze, evaluate
    from siamadapt.commands.tools import params, synth

    for command in (train, pretrain, track, evaluate, analyze, synth, params):
        group.add_command(command)
    logger.debug(f"Registered {len(group.commands)} command(s)")
    return group


register_commands(cli)

__all__ = ['cli', 'register_commands', 'handle_errors', 'EXIT_OK', 'EXIT_USER_ERROR', 'EXIT_INTERNAL_ERROR']
