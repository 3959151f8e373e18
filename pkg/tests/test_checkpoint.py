"""
Unit Tests for Checkpoints
"""

import pytest
import torch

from siamadapt.networks import CheckpointManager
from siamadapt.networks.checkpoint import checkpoint_digest
from siamadapt.utils.errors import ConfigurationError, ValidationError


def same_state(a, b):
    sa, sb = a.state_dict(), b.state_dict()
    return sa.keys() == sb.keys() and all(torch.equal(sa[k], sb[k]) for k in sa)


# ==================== CHECKPOINT TESTS ====================

class TestCheckpointManager:
    """Test suite for CheckpointManager"""

    def test_round_trip(self, zero_checkpoint, tiny_pipeline, zero_clnet, model_cfg, clnet_cfg):
        """Test networks and configs come back unchanged"""
        loaded = CheckpointManager().load(zero_checkpoint, require_clnet=True)
        assert loaded.model_config == model_cfg
        assert loaded.clnet_config == clnet_cfg
        assert same_state(loaded.base, tiny_pipeline)
        assert same_state(loaded.clnet, zero_clnet)
        assert not loaded.base.training

    def test_base_only(self, base_checkpoint):
        """Test a base-only checkpoint loads without CLNet unless one is required"""
        assert CheckpointManager().load(base_checkpoint).clnet is None
        with pytest.raises(ConfigurationError):
            CheckpointManager().load(base_checkpoint, require_clnet=True)

    def test_missing_file(self, tmp_path):
        """Test a missing file raises ValidationError"""
        with pytest.raises(ValidationError):
            CheckpointManager().load(tmp_path / 'absent.pt')

    def test_version_mismatch(self, tmp_path, tiny_pipeline, model_cfg, clnet_cfg):
        """Test a different major format version is refused"""
        path = CheckpointManager(format_version='2.0').save(tmp_path / 'v2.pt', tiny_pipeline, model_cfg, clnet_cfg)
        with pytest.raises(ConfigurationError):
            CheckpointManager().load(path)

    def test_hash_mismatch(self, tmp_path, base_checkpoint):
        """Test a tampered config hash is refused"""
        payload = torch.load(base_checkpoint, weights_only=True)
        payload['config_hash'] = '000000000000'
        torch.save(payload, tmp_path / 'tampered.pt')
        with pytest.raises(ConfigurationError):
            CheckpointManager().load(tmp_path / 'tampered.pt')

    def test_meta(self, tmp_path, tiny_pipeline, model_cfg, clnet_cfg):
        """Test metadata is stored"""
        path = CheckpointManager().save(tmp_path / 'm.pt', tiny_pipeline, model_cfg, clnet_cfg,
                                        meta={'seed': 3, 'epochs': 2})
        assert CheckpointManager().load(path).meta == {'seed': 3, 'epochs': 2}


class TestDigest:
    """Test suite for checkpoint_digest"""

    def test_ignores_creation_time(self, tmp_path, tiny_pipeline, model_cfg, clnet_cfg):
        """Test saving the same networks twice gives the same digest"""
        manager = CheckpointManager()
        a = manager.save(tmp_path / 'a.pt', tiny_pipeline, model_cfg, clnet_cfg)
        b = manager.save(tmp_path / 'b.pt', tiny_pipeline, model_cfg, clnet_cfg)
        assert checkpoint_digest(a) == checkpoint_digest(b)

    def test_tracks_weights(self, base_checkpoint, zero_checkpoint):
        """Test different weights give different digests"""
        assert checkpoint_digest(base_checkpoint) != checkpoint_digest(zero_checkpoint)

    def test_loaded_digest(self, base_checkpoint, zero_checkpoint):
        """Test a loaded checkpoint carries the digest of its weights"""
        for path in (base_checkpoint, zero_checkpoint):
            assert CheckpointManager().load(path).weights_digest == checkpoint_digest(path)
