"""
Analysis Service
Decisive positive/negative boxes, score differences and per-sequence fault reports
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence as Seq, Tuple

import numpy as np

from siamadapt.geometry import BBox, iou
from siamadapt.services.tracker_service import FrameRecord, read_trajectory
from siamadapt.utils.errors import ReportError, ValidationError

logger = logging.getLogger(__name__)

DECISIVE_IOU = 0.5
REPORT_COLUMNS = ['frame', 'p_c', 'n_c', 'd', 'p_o', 'n_o', 'overlap']
ANALYSIS_DIR = 'analysis'

Candidate = Tuple[BBox, float]


@dataclass(frozen=True)
class FrameDiagnostics:
    """Decisive samples of one frame"""
    p_bbox: Optional[BBox]
    n_bbox: Optional[BBox]
    p_c: float
    n_c: float
    p_o: float
    n_o: float
    d: float
    pred_overlap: float = 0.0

    @property
    def fault(self) -> bool:
        return self.d < 0


def score_difference(p_c: float, n_c: float) -> float:
    """D = P_c - N_c, clipped to [-1, 1]"""
    return float(min(1.0, max(-1.0, p_c - n_c)))


def _decisive(scored: List[Tuple[BBox, float, float]]) -> Optional[Tuple[BBox, float, float]]:
    # highest score; ties go to the lexicographically smallest box so the pick ignores list order
    if not scored:
        return None
    return min(scored, key=lambda item: (-item[1], item[0].x, item[0].y, item[0].w, item[0].h))


def decisive_boxes(candidates: Seq[Candidate], gt: BBox, prediction: Optional[BBox] = None) -> FrameDiagnostics:
    """
    Split candidates at IoU 0.5 with the ground truth and pick the top-scoring box of each side

    An empty positive side gives P_c = N_c = 0 and D = 0. An empty negative side gives N_c = 0.
    """
    positives, negatives = [], []
    for box, score in candidates:
        if not 0.0 <= score <= 1.0:
            raise ValidationError(f"candidate score {score} outside [0, 1]", field='candidates')
        overlap = iou(box, gt)
        (positives if overlap >= DECISIVE_IOU else negatives).append((box, float(score), overlap))

    best_pos = _decisive(positives)
    best_neg = _decisive(negatives)
    pred_overlap = iou(prediction, gt) if prediction is not None else 0.0

    if best_pos is None:
        return FrameDiagnostics(
            p_bbox=None,
            n_bbox=best_neg[0] if best_neg else None,
            p_c=0.0, n_c=0.0,
            p_o=0.0, n_o=best_neg[2] if best_neg else 0.0,
            d=0.0, pred_overlap=pred_overlap,
        )

    p_bbox, p_c, p_o = best_pos
    n_bbox, n_c, n_o = best_neg if best_neg else (None, 0.0, 0.0)
    return FrameDiagnostics(p_bbox, n_bbox, p_c, n_c, p_o, n_o, score_difference(p_c, n_c), pred_overlap)


@dataclass
class SequenceReport:
    """Per-frame diagnostics of one tracked sequence"""
    sequence: str
    frames: List[int]
    diagnostics: List[FrameDiagnostics]

    @property
    def mean_d(self) -> float:
        return float(np.mean([d.d for d in self.diagnostics])) if self.diagnostics else 0.0

    @property
    def faults(self) -> int:
        return sum(1 for d in self.diagnostics if d.fault)

    @property
    def mean_overlap(self) -> float:
        return float(np.mean([d.pred_overlap for d in self.diagnostics])) if self.diagnostics else 0.0

    def rows(self) -> List[Dict]:
        return [
            {'frame': frame, 'p_c': d.p_c, 'n_c': d.n_c, 'd': d.d, 'p_o': d.p_o, 'n_o': d.n_o,
             'overlap': d.pred_overlap}
            for frame, d in zip(self.frames, self.diagnostics)
        ]

    def summary(self) -> Dict:
        return {'sequence': self.sequence, 'frames': len(self.frames), 'mean_d': self.mean_d,
                'faults': self.faults, 'mean_overlap': self.mean_overlap}


def sequence_report(sequence_id: str, records: Seq[FrameRecord], gts: Seq[BBox],
                    exclude_first_frame: bool = True) -> SequenceReport:
    """
    Diagnostics for every tracked frame

    Raises:
        ReportError: If a frame after initialisation carries no candidate dump
    """
    if len(records) != len(gts):
        raise ReportError(f"{sequence_id}: {len(records)} record(s) but {len(gts)} ground-truth box(es)")
    frames, diagnostics = [], []
    for record, gt in zip(records, gts):
        if record.frame == 0:
            if exclude_first_frame:
                continue
            candidates = record.candidates or [(record.box, 1.0)]
        else:
            candidates = record.candidates
            if not candidates:
                raise ReportError(f"{sequence_id}: frame {record.frame} has no candidate dump; "
                                  f"rerun with tracking.candidate_dump > 0")
        frames.append(record.frame)
        diagnostics.append(decisive_boxes(candidates, gt, record.box))
    return SequenceReport(sequence_id, frames, diagnostics)


def write_report(report: SequenceReport, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        writer.writerows(report.rows())
    return path


def plot_report(report: SequenceReport, path: Path, other: Optional[SequenceReport] = None) -> Path:
    """Score-difference and overlap curves; a second report is drawn on the same axes"""
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    fig, (ax_d, ax_o) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for item, style in ((report, '-'), (other, '--')):
        if item is None:
            continue
        ax_d.plot(item.frames, [d.d for d in item.diagnostics], style, label=item.sequence)
        ax_o.plot(item.frames, [d.pred_overlap for d in item.diagnostics], style, label=item.sequence)
    ax_d.axhline(0.0, color='grey', linewidth=0.5)
    ax_d.set_ylabel('D')
    ax_o.set_ylabel('overlap')
    ax_o.set_xlabel('frame')
    ax_d.legend(loc='lower left')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def analyze_run(run_dir: Path, gts: Dict[str, Seq[BBox]], exclude_first_frame: bool = True,
                plot: bool = False) -> List[SequenceReport]:
    """
    Reports for every trajectory of a results bundle, written to <run_dir>/analysis/

    Raises:
        ReportError: If the bundle has no trajectories or a sequence lacks ground truth
    """
    run_dir = Path(run_dir)
    trajectories = sorted((run_dir / 'frames').glob('*.jsonl'))
    if not trajectories:
        raise ReportError(f"no trajectories under {run_dir / 'frames'}")
    reports = []
    for path in trajectories:
        sequence_id = path.stem
        if sequence_id not in gts:
            raise ReportError(f"no ground truth for sequence {sequence_id!r}")
        report = sequence_report(sequence_id, read_trajectory(path), gts[sequence_id], exclude_first_frame)
        write_report(report, run_dir / ANALYSIS_DIR / f'{sequence_id}.csv')
        if plot:
            plot_report(report, run_dir / ANALYSIS_DIR / f'{sequence_id}.png')
        reports.append(report)
    logger.info(f"[OK] Analyzed {len(reports)} sequence(s) in {run_dir}")
    return reports


def compare_reports(base: Seq[SequenceReport], adjusted: Seq[SequenceReport]) -> Dict:
    """
    Paired comparison over the sequences and frames both runs share

    Returns:
        mean_delta_d, per-side mean D and fault counts, overlap delta and paired frame count
    """
    base_by_id = {r.sequence: r for r in base}
    d_base, d_adj, o_base, o_adj = [], [], [], []
    faults_base = faults_adj = 0
    for report in adjusted:
        other = base_by_id.get(report.sequence)
        if other is None:
            continue
        by_frame = dict(zip(other.frames, other.diagnostics))
        for frame, diag in zip(report.frames, report.diagnostics):
            if frame not in by_frame:
                continue
            ref = by_frame[frame]
            d_base.append(ref.d)
            d_adj.append(diag.d)
            o_base.append(ref.pred_overlap)
            o_adj.append(diag.pred_overlap)
            faults_base += int(ref.fault)
            faults_adj += int(diag.fault)
    paired = len(d_adj)
    if paired == 0:
        raise ReportError("the two runs share no analysed frame")
    return {
        'paired_frames': paired,
        'mean_d_base': float(np.mean(d_base)),
        'mean_d_adjusted': float(np.mean(d_adj)),
        'mean_delta_d': float(np.mean(np.subtract(d_adj, d_base))),
        'faults_base': faults_base,
        'faults_adjusted': faults_adj,
        'overlap_delta': float(np.mean(o_adj) - np.mean(o_base)),
    }
