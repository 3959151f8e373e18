"""
Training Commands
`train` (CLNet on a frozen base) and `pretrain` (the base tracker itself)
"""

from pathlib import Path

import click

from siamadapt.commands import handle_errors
from siamadapt.config import config_hash
from siamadapt.networks.checkpoint import checkpoint_digest
from siamadapt.services.training_service import pretrain_base, train_clnet

CHECKPOINT_DIR = 'checkpoints'


def _default_output(context, key: str, prefix: str) -> Path:
    configured = getattr(context.run_config.paths, key)
    if configured:
        return Path(configured)
    return context.run_config.results_root / CHECKPOINT_DIR / f'{prefix}-{config_hash(context.run_config)}.pt'


@click.command()
@click.option('--base', 'base_path', type=click.Path(path_type=Path), default=None,
              help='Base tracker checkpoint (paths.base_checkpoint)')
@click.option('--output', type=click.Path(path_type=Path), default=None,
              help='Destination checkpoint (paths.checkpoint)')
@click.option('--log', 'log_path', type=click.Path(path_type=Path), default=None, help='Per-step CSV loss log')
@click.pass_obj
@handle_errors
def train(context, base_path, output, log_path):
    """
    Train CLNet with the base tracker frozen

    Trains on paths.dataset, or on the training split of the synthetic suite when it is unset.
    """
    base_path = base_path or context.require_path('base_checkpoint')
    output = output or _default_output(context, 'checkpoint', 'clnet')
    result = train_clnet(base_path, context.train_sequences(), context.run_config, output, log_path)
    click.echo(f"checkpoint: {result.checkpoint}")
    click.echo(f"digest: {checkpoint_digest(result.checkpoint)}")


@click.command()
@click.option('--output', type=click.Path(path_type=Path), default=None,
              help='Destination checkpoint (paths.base_checkpoint)')
@click.option('--log', 'log_path', type=click.Path(path_type=Path), default=None, help='Per-step CSV loss log')
@click.pass_obj
@handle_errors
def pretrain(context, output, log_path):
    """
    Pre-train the base tracker on the training sequences

    Trains on paths.dataset, or on the training split of the synthetic suite when it is unset.
    """
    output = output or _default_output(context, 'base_checkpoint', 'base')
    result = pretrain_base(context.train_sequences(), context.run_config, output, log_path)
    click.echo(f"checkpoint: {result.checkpoint}")
    click.echo(f"digest: {checkpoint_digest(result.checkpoint)}")
