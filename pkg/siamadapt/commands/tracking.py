"""
Tracking Command
Runs the online tracker over one sequence and writes its JSONL trajectory
"""

from pathlib import Path

import click

from siamadapt.commands import handle_errors
from siamadapt.services.dataset_service import load_sequence
from siamadapt.services.tracker_service import CLNetTracker, TrackingMode, write_trajectory
from siamadapt.utils.errors import ValidationError

MODES = [mode.value for mode in TrackingMode]


@click.command()
@click.option('--sequence', 'sequence_path', type=click.Path(path_type=Path), default=None,
              help='OTB-layout sequence directory')
@click.option('--synth-index', type=int, default=None, help='Index into the synthetic suite instead')
@click.option('--mode', type=click.Choice(MODES), default=None, help='Tracking mode (tracking.mode)')
@click.option('--output', type=click.Path(path_type=Path), required=True, help='JSONL trajectory file')
@click.option('--no-candidates', is_flag=True, help='Omit candidate dumps from the trajectory')
@click.pass_obj
@handle_errors
def track(context, sequence_path, synth_index, mode, output, no_candidates):
    """Track one sequence"""
    if (sequence_path is None) == (synth_index is None):
        raise ValidationError("give exactly one of --sequence or --synth-index", field='sequence')
    if sequence_path is not None:
        sequence = load_sequence(sequence_path)
    else:
        suite = context.synthetic_suite()
        if not 0 <= synth_index < len(suite):
            raise ValidationError(f"--synth-index must lie in [0, {len(suite)})", field='synth_index')
        sequence = suite[synth_index]

    mode = TrackingMode(mode or context.run_config.tracking.mode)
    loaded = context.load_checkpoint(require_clnet=mode != TrackingMode.BASE)
    tracker = CLNetTracker(loaded.base, loaded.model_config, context.run_config.tracking,
                           clnet=loaded.clnet, mode=mode, train_cfg=context.run_config.training)
    records = tracker.track_sequence(sequence)
    write_trajectory(records, output, with_candidates=not no_candidates)
    updates = sum(1 for record in records if record.updated)
    click.echo(f"{sequence.id}: {len(records)} frame(s), {updates} update(s) -> {output}")
