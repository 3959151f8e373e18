"""
Evaluation Commands
`eval` (one-pass benchmark, optionally against the base tracker) and `analyze` (fault reports)
"""

import json
from pathlib import Path

import click

from siamadapt.commands import handle_errors
from siamadapt.services.analysis_service import analyze_run, compare_reports
from siamadapt.services.dataset_service import load_dataset
from siamadapt.services.evaluation_service import compare_results, run_benchmark
from siamadapt.services.tracker_service import TrackingMode

MODES = [mode.value for mode in TrackingMode]


def _echo_json(data) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=True))


@click.command('eval')
@click.option('--mode', type=click.Choice(MODES), default=None, help='Tracking mode (tracking.mode)')
@click.option('--compare', is_flag=True, help='Also run the base tracker and report the deltas')
@click.option('--output-root', type=click.Path(path_type=Path), default=None, help='Results root')
@click.pass_obj
@handle_errors
def evaluate(context, mode, compare, output_root):
    """One-pass evaluation over the test sequences"""
    run_config = context.run_config
    mode = TrackingMode(mode or run_config.tracking.mode)
    loaded = context.load_checkpoint(require_clnet=mode != TrackingMode.BASE)
    sequences = context.test_sequences()
    checkpoint_path = str(context.require_path('checkpoint'))

    result = run_benchmark(loaded, sequences, run_config, mode, output_root, context.registry, checkpoint_path)
    report = {'run_id': result.run_id, 'directory': str(result.directory), **result.summary}
    if compare and mode != TrackingMode.BASE:
        base = run_benchmark(loaded, sequences, run_config, TrackingMode.BASE, output_root, context.registry,
                             checkpoint_path)
        report = {'base': {'run_id': base.run_id, **base.summary}, 'adjusted': report,
                  'delta': compare_results(base, result)}
    _echo_json(report)


@click.command()
@click.option('--run', 'run_dir', type=click.Path(path_type=Path, exists=True, file_okay=False), required=True,
              help='Results bundle directory')
@click.option('--compare-run', type=click.Path(path_type=Path, exists=True, file_okay=False), default=None,
              help='Second bundle (the reference) for a paired comparison')
@click.option('--dataset', 'dataset_path', type=click.Path(path_type=Path), default=None,
              help='Ground-truth sequences (the test sequences when omitted)')
@click.option('--include-first-frame', is_flag=True, help='Report the initialisation frame too')
@click.option('--plot', is_flag=True, default=None, help='Write PNG curves (eval.plot)')
@click.pass_obj
@handle_errors
def analyze(context, run_dir, compare_run, dataset_path, include_first_frame, plot):
    """Decisive-sample diagnostics of a results bundle"""
    sequences = load_dataset(dataset_path) if dataset_path else context.test_sequences()
    gts = {sequence.id: sequence.gt for sequence in sequences}
    plot = context.run_config.eval.plot if plot is None else plot
    exclude = not include_first_frame

    reports = analyze_run(run_dir, gts, exclude, plot)
    output = {'sequences': [report.summary() for report in reports]}
    if compare_run is not None:
        reference = analyze_run(compare_run, gts, exclude, plot)
        output['comparison'] = compare_reports(reference, reports)
    _echo_json(output)
