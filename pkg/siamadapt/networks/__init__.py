"""
Networks Package
Siamese base trackers, the compact latent network and checkpoint handling
"""

from siamadapt.networks.siamese import (
    Backbone,
    DepthwiseRPNHead,
    HeadWeights,
    SiameseFC,
    SiameseRPN,
    anchor_deltas,
    anchor_logits,
    anchor_scores,
    build_pipeline,
    count_parameters,
    dw_xcorr_heads,
    head_forward,
    head_key,
    similarity_map,
    xcorr_depthwise,
    xcorr_fast,
)
from siamadapt.networks.clnet import (
    CLNet,
    CLNetBranch,
    DeviationPredictor,
    FCAdjustment,
    FeatureAdjuster,
    LatentFeature,
    WeightDelta,
    adjust_features,
    adjusted_forward,
    augment_weights,
    clnet_parameter_count,
    clnet_total_parameters,
    delta_size,
    fc_adjust,
    latent_encode,
    predict_delta,
)
from siamadapt.networks.checkpoint import CheckpointManager, LoadedCheckpoint, checkpoint_digest

__all__ = [
    'Backbone',
    'DepthwiseRPNHead',
    'HeadWeights',
    'SiameseFC',
    'SiameseRPN',
    'anchor_deltas',
    'anchor_logits',
    'anchor_scores',
    'build_pipeline',
    'count_parameters',
    'dw_xcorr_heads',
    'head_forward',
    'head_key',
    'similarity_map',
    'xcorr_depthwise',
    'xcorr_fast',
    'CLNet',
    'CLNetBranch',
    'DeviationPredictor',
    'FCAdjustment',
    'FeatureAdjuster',
    'LatentFeature',
    'WeightDelta',
    'adjust_features',
    'adjusted_forward',
    'augment_weights',
    'clnet_parameter_count',
    'clnet_total_parameters',
    'delta_size',
    'fc_adjust',
    'latent_encode',
    'predict_delta',
    'CheckpointManager',
    'LoadedCheckpoint',
    'checkpoint_digest',
]
