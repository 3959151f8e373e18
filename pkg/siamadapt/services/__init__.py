"""
Services Package
Dataset, training, tracking, evaluation and analysis logic
"""

from siamadapt.services.dataset_service import (
    Sequence,
    SynthSpec,
    load_dataset,
    load_sequence,
    save_sequence,
    split_suite,
    synth_generate,
    synth_suite,
)
from siamadapt.services.training_service import (
    BaseTrainer,
    CLNetTrainer,
    PairSampler,
    combined_loss,
    mine_diverse_samples,
    pretrain_base,
    train_clnet,
)
from siamadapt.services.tracker_service import (
    CandidateSet,
    CLNetTracker,
    FrameRecord,
    TrackerState,
    TrackingMode,
    read_trajectory,
    write_trajectory,
)
from siamadapt.services.evaluation_service import (
    BenchmarkResult,
    precision_at,
    precision_curve,
    run_benchmark,
    success_auc,
    success_curve,
)
from siamadapt.services.analysis_service import (
    FrameDiagnostics,
    SequenceReport,
    analyze_run,
    compare_reports,
    decisive_boxes,
    score_difference,
    sequence_report,
)

__all__ = [
    'Sequence',
    'SynthSpec',
    'load_dataset',
    'load_sequence',
    'save_sequence',
    'split_suite',
    'synth_generate',
    'synth_suite',
    'BaseTrainer',
    'CLNetTrainer',
    'PairSampler',
    'combined_loss',
    'mine_diverse_samples',
    'pretrain_base',
    'train_clnet',
    'CandidateSet',
    'CLNetTracker',
    'FrameRecord',
    'TrackerState',
    'TrackingMode',
    'read_trajectory',
    'write_trajectory',
    'BenchmarkResult',
    'precision_at',
    'precision_curve',
    'run_benchmark',
    'success_auc',
    'success_curve',
    'FrameDiagnostics',
    'SequenceReport',
    'analyze_run',
    'compare_reports',
    'decisive_boxes',
    'score_difference',
    'sequence_report',
]
