"""
Tool Commands
`synth` (write a synthetic suite in OTB layout) and `params` (CLNet parameter accounting)
"""

from pathlib import Path

import click

from siamadapt.commands import handle_errors
from siamadapt.networks.clnet import CLNet, clnet_parameter_count, clnet_total_parameters
from siamadapt.networks.siamese import build_pipeline, count_parameters, head_key
from siamadapt.services.dataset_service import save_sequence, synth_suite
from siamadapt.utils.errors import ConfigurationError


@click.command()
@click.option('--output', type=click.Path(path_type=Path), required=True, help='Dataset root to write')
@click.option('--count', type=int, default=None, help='Number of sequences (synth.suite_size)')
@click.pass_obj
@handle_errors
def synth(context, output, count):
    """Generate the deterministic synthetic suite"""
    suite = synth_suite(context.run_config.synth, context.run_config.seed, count)
    for sequence in suite:
        save_sequence(sequence, output)
    click.echo(f"{len(suite)} sequence(s) written to {output}")


@click.command()
@click.option('--no-verify', is_flag=True, help='Skip instantiating the networks')
@click.pass_obj
@handle_errors
def params(context, no_verify):
    """Analytic CLNet parameter counts per branch and level"""
    model_cfg, clnet_cfg = context.run_config.model, context.run_config.clnet
    levels = 1 if model_cfg.head_type == 'fc' else model_cfg.levels
    clnet = None if no_verify else CLNet(model_cfg, clnet_cfg)

    click.echo(f"{'head':<8}{'adjuster':>12}{'predictor':>12}{'fc3':>12}{'total':>12}")
    for level in range(levels):
        for branch in clnet_cfg.branches:
            counts = clnet_parameter_count(model_cfg, clnet_cfg, branch)
            key = head_key(branch, level)
            if clnet is not None:
                instantiated = count_parameters(clnet.branches[key])
                if instantiated != counts['total']:
                    raise ConfigurationError(
                        f"{key}: analytic count {counts['total']} differs from instantiated {instantiated}"
                    )
            click.echo(f"{key:<8}{counts['adjuster']:>12,}{counts['predictor']:>12,}"
                       f"{counts['fc3']:>12,}{counts['total']:>12,}")

    total = clnet_total_parameters(model_cfg, clnet_cfg)
    click.echo(f"clnet total: {total:,}")
    if clnet is not None:
        click.echo(f"base total: {count_parameters(build_pipeline(model_cfg)):,}")
        click.echo("verified: analytic counts match the instantiated networks")
