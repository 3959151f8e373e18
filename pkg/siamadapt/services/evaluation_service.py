"""
Evaluation Service
One-pass evaluation: precision and success curves, and the benchmark runner with its results bundle
"""

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence as Seq

import numpy as np

from siamadapt.config import RunConfig, config_hash
from siamadapt.database import RegistryManager
from siamadapt.geometry import BBox, center_distance, iou
from siamadapt.networks.checkpoint import LoadedCheckpoint
from siamadapt.services.dataset_service import Sequence
from siamadapt.services.tracker_service import CLNetTracker, FrameRecord, TrackingMode, write_trajectory
from siamadapt.utils.errors import SiamAdaptError, ValidationError

logger = logging.getLogger(__name__)

SUMMARY_FILE = 'summary.json'
PER_SEQUENCE_FILE = 'per_sequence.csv'
FRAMES_DIR = 'frames'
PER_SEQUENCE_COLUMNS = ['sequence', 'frames', 'success_auc', 'precision', 'updates', 'failed', 'error']


# ==================== METRICS ====================

def _check_lengths(preds: Seq[BBox], gts: Seq[BBox]) -> None:
    if len(preds) != len(gts):
        raise ValidationError(f"{len(preds)} prediction(s) but {len(gts)} ground-truth box(es)", field='preds')


def center_errors(preds: Seq[BBox], gts: Seq[BBox]) -> np.ndarray:
    _check_lengths(preds, gts)
    return np.array([center_distance(p, g) for p, g in zip(preds, gts)], dtype=np.float64)


def overlaps(preds: Seq[BBox], gts: Seq[BBox]) -> np.ndarray:
    _check_lengths(preds, gts)
    return np.array([iou(p, g) for p, g in zip(preds, gts)], dtype=np.float64)


def precision_curve(preds: Seq[BBox], gts: Seq[BBox], max_threshold: int = 50) -> np.ndarray:
    """
    Fraction of frames whose centre error is within t pixels, for t = 0 .. max_threshold

    Returns:
        Array of length max_threshold + 1 indexed by the threshold in pixels
    """
    errors = center_errors(preds, gts)
    thresholds = np.arange(max_threshold + 1, dtype=np.float64)
    if errors.size == 0:
        return np.zeros_like(thresholds)
    return (errors[None, :] <= thresholds[:, None]).mean(axis=1)


def precision_at(curve: np.ndarray, threshold: int = 20) -> float:
    return float(curve[threshold])


def success_curve(ious: np.ndarray, bins: int = 21) -> np.ndarray:
    """
    Success rate over `bins` IoU thresholds spread evenly on [0, 1]

    A frame with zero overlap never counts as a success, even at threshold 0.
    """
    ious = np.asarray(ious, dtype=np.float64)
    thresholds = np.linspace(0.0, 1.0, bins)
    if ious.size == 0:
        return np.zeros_like(thresholds)
    hit = (ious[None, :] >= thresholds[:, None]) & (ious[None, :] > 0)
    return hit.mean(axis=1)


def success_auc(preds: Seq[BBox], gts: Seq[BBox], bins: int = 21) -> float:
    """Area under the success curve"""
    return float(success_curve(overlaps(preds, gts), bins).mean())


# ==================== BENCHMARK ====================

@dataclass
class SequenceOutcome:
    """Result of tracking one sequence"""
    sequence: str
    frames: int
    success_auc: Optional[float] = None
    precision: Optional[float] = None
    updates: int = 0
    failed: bool = False
    error: Optional[str] = None
    records: List[FrameRecord] = field(default_factory=list)

    def to_row(self) -> Dict:
        return {
            'sequence': self.sequence,
            'frames': self.frames,
            'success_auc': self.success_auc,
            'precision': self.precision,
            'updates': self.updates,
            'failed': self.failed,
            'error': self.error,
        }


@dataclass
class BenchmarkResult:
    """Aggregate results plus the per-sequence outcomes, ordered by sequence id"""
    run_id: str
    mode: str
    summary: Dict
    outcomes: List[SequenceOutcome]
    directory: Optional[Path] = None

    @property
    def success_auc(self) -> Optional[float]:
        return self.summary.get('success_auc')

    @property
    def precision(self) -> Optional[float]:
        return self.summary.get('precision')


RUN_ID_DIGEST_LENGTH = 12


def make_run_id(run_config: RunConfig, mode: TrackingMode, weights_digest: str) -> str:
    """<mode>-<config hash>-<checkpoint weights digest, first 12 hex digits>"""
    return f'{mode.value}-{config_hash(run_config)}-{weights_digest[:RUN_ID_DIGEST_LENGTH]}'


def evaluate_sequence(tracker: CLNetTracker, sequence: Sequence, run_config: RunConfig) -> SequenceOutcome:
    """Track one sequence and score it; tracker errors are recorded, not raised"""
    cfg = run_config.eval
    try:
        records = tracker.track_sequence(sequence)
    except SiamAdaptError as e:
        logger.warning(f"Sequence {sequence.id} failed: {e.message}")
        return SequenceOutcome(sequence.id, len(sequence), failed=True, error=e.message)
    except Exception as e:
        logger.exception(f"Sequence {sequence.id} crashed")
        return SequenceOutcome(sequence.id, len(sequence), failed=True, error=f'{type(e).__name__}: {e}')

    start = 1 if cfg.exclude_first_frame else 0
    preds = [record.box for record in records][start:]
    gts = list(sequence.gt)[start:]
    curve = precision_curve(preds, gts, cfg.precision_max)
    return SequenceOutcome(
        sequence=sequence.id,
        frames=len(records),
        success_auc=float(success_curve(overlaps(preds, gts), cfg.success_bins).mean()),
        precision=precision_at(curve, cfg.precision_at),
        updates=sum(1 for record in records if record.updated),
        records=records,
    )


def summarize(outcomes: Seq[SequenceOutcome]) -> Dict:
    """Aggregate metrics are plain means over the sequences that did not fail"""
    scored = [o for o in outcomes if not o.failed]
    return {
        'sequences': len(outcomes),
        'failures': len(outcomes) - len(scored),
        'success_auc': float(np.mean([o.success_auc for o in scored])) if scored else None,
        'precision': float(np.mean([o.precision for o in scored])) if scored else None,
        'updates': int(sum(o.updates for o in scored)),
    }


def write_bundle(result: BenchmarkResult, root: Path, with_candidates: bool = True) -> Path:
    """results/<run_id>/{summary.json, per_sequence.csv, frames/<seq>.jsonl}"""
    directory = Path(root) / result.run_id
    (directory / FRAMES_DIR).mkdir(parents=True, exist_ok=True)
    with open(directory / SUMMARY_FILE, 'w', encoding='utf-8') as f:
        json.dump({'run_id': result.run_id, 'mode': result.mode, **result.summary}, f, indent=2, sort_keys=True)
    with open(directory / PER_SEQUENCE_FILE, 'w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=PER_SEQUENCE_COLUMNS)
        writer.writeheader()
        for outcome in result.outcomes:
            writer.writerow(outcome.to_row())
    for outcome in result.outcomes:
        if outcome.records:
            write_trajectory(outcome.records, directory / FRAMES_DIR / f'{outcome.sequence}.jsonl', with_candidates)
    result.directory = directory
    return directory


def run_benchmark(checkpoint: LoadedCheckpoint, dataset: Seq[Sequence], run_config: RunConfig,
                  mode: Optional[TrackingMode] = None, output_root: Optional[Path] = None,
                  registry: Optional[RegistryManager] = None, checkpoint_path: Optional[str] = None) -> BenchmarkResult:
    """
    Run the tracker over every sequence and persist the results bundle

    Args:
        checkpoint: Loaded networks
        dataset: Sequences to evaluate
        run_config: Merged configuration
        mode: Tracking mode (tracking.mode when omitted)
        output_root: Results root (run config's results root when omitted)
        registry: Optional run registry
        checkpoint_path: Recorded in the registry

    Returns:
        BenchmarkResult with outcomes ordered by sequence id
    """
    mode = TrackingMode(mode or run_config.tracking.mode)
    if not dataset:
        raise ValidationError("benchmark needs at least one sequence", field='paths.test_dataset')
    tracker = CLNetTracker(checkpoint.base, checkpoint.model_config, run_config.tracking,
                           clnet=checkpoint.clnet, mode=mode, train_cfg=run_config.training)
    run_id = make_run_id(run_config, mode, checkpoint.weights_digest or checkpoint.config_hash)
    if registry is not None:
        registry.start_run(run_id, mode.value, config_hash(run_config), checkpoint_path, run_config.seed)

    logger.info(f"Benchmark {run_id}: {len(dataset)} sequence(s), mode {mode.value}")
    if run_config.eval.workers > 1:
        with ThreadPoolExecutor(max_workers=run_config.eval.workers) as pool:
            outcomes = list(pool.map(lambda seq: evaluate_sequence(tracker, seq, run_config), dataset))
    else:
        outcomes = [evaluate_sequence(tracker, seq, run_config) for seq in dataset]
    outcomes.sort(key=lambda o: o.sequence)

    result = BenchmarkResult(run_id, mode.value, summarize(outcomes), outcomes)
    write_bundle(result, output_root or run_config.results_root, run_config.tracking.candidate_dump > 0)
    if registry is not None:
        registry.finish_run(run_id, result.summary, [o.to_row() for o in outcomes])

    auc = result.success_auc
    logger.info(f"[OK] Benchmark {run_id}: AUC {auc if auc is None else round(auc, 4)}, "
                f"{result.summary['failures']} failure(s)")
    return result


def compare_results(base: BenchmarkResult, adjusted: BenchmarkResult) -> Dict:
    """Aggregate deltas between two benchmark runs on the same suite"""
    def delta(key: str) -> Optional[float]:
        a, b = base.summary.get(key), adjusted.summary.get(key)
        return None if a is None or b is None else b - a

    return {
        'base_run': base.run_id,
        'adjusted_run': adjusted.run_id,
        'success_auc_delta': delta('success_auc'),
        'precision_delta': delta('precision'),
    }
