"""
Pytest Configuration and Fixtures
Provides shared fixtures and configuration for all tests
"""

import pytest
import tempfile
import shutil
from pathlib import Path

import numpy as np
import torch

from siamadapt.config import load_run_config
from siamadapt.geometry import BBox
from siamadapt.networks import CLNet, CheckpointManager, build_pipeline
from siamadapt.services.dataset_service import Sequence, SynthSpec, synth_generate


@pytest.fixture(scope='session')
def temp_dir():
    """Create a temporary directory for test data"""
    temp_path = tempfile.mkdtemp(prefix='siamadapt_test_')
    yield Path(temp_path)
    shutil.rmtree(temp_path, ignore_errors=True)


@pytest.fixture(scope='function')
def run_config(tmp_path):
    """Testing preset with results under a per-test directory"""
    return load_run_config(env='testing', overrides={'paths.results_root': str(tmp_path / 'results')})


@pytest.fixture(scope='function')
def model_cfg(run_config):
    return run_config.model


@pytest.fixture(scope='function')
def clnet_cfg(run_config):
    return run_config.clnet


@pytest.fixture(scope='function')
def fc_config(tmp_path):
    """Testing preset switched to the similarity-map head"""
    return load_run_config(env='testing', overrides={
        'model.head_type': 'fc',
        'model.anchors_per_cell': '1',
        'model.anchor_ratios': '1.0',
        'clnet.branches': 'fc',
        'paths.results_root': str(tmp_path / 'results'),
    })


@pytest.fixture(scope='function')
def tiny_pipeline(model_cfg):
    """Seeded tiny RPN base tracker in eval mode"""
    torch.manual_seed(0)
    return build_pipeline(model_cfg).eval()


@pytest.fixture(scope='function')
def tiny_clnet(model_cfg, clnet_cfg):
    """Seeded CLNet matching the tiny pipeline"""
    torch.manual_seed(1)
    return CLNet(model_cfg, clnet_cfg).eval()


@pytest.fixture(scope='function')
def zero_clnet(tiny_clnet):
    """CLNet whose deviation predictor outputs exactly zero"""
    return tiny_clnet.zero_predictor()


@pytest.fixture(scope='function')
def tiny_sequence():
    """Short deterministic synthetic sequence at testing-preset scale"""
    return synth_generate(SynthSpec(seed=3, length=8, canvas=64, target_size=12.0, distractors=1), 'tiny')


@pytest.fixture(scope='function')
def static_sequence():
    """Noise-free textured square that never moves"""
    frame = np.full((64, 64, 3), 120, dtype=np.uint8)
    frame[26:38, 26:38] = [200, 40, 40]
    frame[26:32, 26:32] = [40, 40, 200]
    box = BBox(26.0, 26.0, 12.0, 12.0)
    return Sequence('static', [frame.copy() for _ in range(5)], [box] * 5)


@pytest.fixture(scope='function')
def base_checkpoint(tmp_path, tiny_pipeline, model_cfg, clnet_cfg):
    """Base-only checkpoint of the tiny pipeline"""
    return CheckpointManager().save(tmp_path / 'base.pt', tiny_pipeline, model_cfg, clnet_cfg)


@pytest.fixture(scope='function')
def zero_checkpoint(tmp_path, tiny_pipeline, zero_clnet, model_cfg, clnet_cfg):
    """Checkpoint holding the tiny pipeline and a zero-predictor CLNet"""
    return CheckpointManager().save(tmp_path / 'zero.pt', tiny_pipeline, model_cfg, clnet_cfg, zero_clnet)


@pytest.fixture(scope='function')
def flat_pipeline(tiny_pipeline):
    """Tiny pipeline whose last head layers output zero: uniform scores, anchors as boxes"""
    with torch.no_grad():
        for head in tiny_pipeline.heads.values():
            head.head1.weight.zero_()
            head.head1.bias.zero_()
    return tiny_pipeline


@pytest.fixture(scope='function')
def flat_checkpoint(tmp_path, flat_pipeline, zero_clnet, model_cfg, clnet_cfg):
    """Checkpoint holding the flat pipeline and a zero-predictor CLNet"""
    return CheckpointManager().save(tmp_path / 'flat.pt', flat_pipeline, model_cfg, clnet_cfg, zero_clnet)


@pytest.fixture(scope='function')
def shift_sequence():
    """Still target whose texture changes halfway through"""
    return synth_generate(SynthSpec(seed=5, length=8, canvas=64, target_size=12.0, distractors=0,
                                    shift_frame=4, noise=0.0, speed=0.0), 'shift')


# Utility functions for tests

def random_labels(anchors: int, positives: int, negatives: int, generator: torch.Generator) -> torch.Tensor:
    """IGNORE everywhere except `positives` POS and `negatives` NEG anchors at random positions"""
    labels = torch.full((anchors,), -1, dtype=torch.long)
    order = torch.randperm(anchors, generator=generator)
    labels[order[:positives]] = 1
    labels[order[positives:positives + negatives]] = 0
    return labels


@pytest.fixture(scope='function')
def make_labels():
    """Factory for random POS/NEG/IGNORE label vectors"""
    return random_labels
