"""
Checkpoint Manager
Versioned torch checkpoints holding the base tracker, CLNet weights and the configs they were built from
"""

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

import torch
import torch.nn as nn

from siamadapt.config import BackboneConfig, CLNetConfig, RunConfig, config_hash
from siamadapt.networks.clnet import CLNet
from siamadapt.networks.siamese import build_pipeline
from siamadapt.utils.errors import ConfigurationError, ValidationError

logger = logging.getLogger(__name__)

FORMAT_VERSION = '1.0'
CLNET_PREFIX = 'clnet.'


def _config_from_dict(cls, data: Dict[str, Any]):
    # tuples come back as lists from some serializers
    values = {key: tuple(value) if isinstance(value, list) else value for key, value in data.items()}
    return cls(**values)


def model_hash(model_cfg: BackboneConfig, clnet_cfg: CLNetConfig) -> str:
    """Config hash restricted to the sections that shape the weights"""
    return config_hash(RunConfig(model=model_cfg, clnet=clnet_cfg), sections=('model', 'clnet'))


def _namespace(state: Dict[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    # CLNet.branches.<branch>.<level>.* -> clnet.<branch>.<level>.*
    return {CLNET_PREFIX + key[len('branches.'):]: value for key, value in state.items()}


def _strip_namespace(state: Dict[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    return {'branches.' + key[len(CLNET_PREFIX):]: value for key, value in state.items()}


@dataclass
class LoadedCheckpoint:
    """Networks rebuilt from a checkpoint, in eval mode"""
    model_config: BackboneConfig
    clnet_config: CLNetConfig
    base: nn.Module
    clnet: Optional[CLNet]
    config_hash: str
    meta: Dict[str, Any] = field(default_factory=dict)
    weights_digest: str = ''


class CheckpointManager:
    """Saves and restores tracker checkpoints"""

    def __init__(self, format_version: str = FORMAT_VERSION):
        self.format_version = format_version

    def save(self, path: Path, base: nn.Module, model_cfg: BackboneConfig, clnet_cfg: CLNetConfig,
             clnet: Optional[CLNet] = None, meta: Optional[Dict[str, Any]] = None) -> Path:
        """
        Write a checkpoint

        Args:
            path: Destination file
            base: Base tracker network
            model_cfg: Model section the networks were built from
            clnet_cfg: CLNet section the networks were built from
            clnet: Optional trained CLNet
            meta: Free-form metadata (seed, epochs, losses)

        Returns:
            Path written
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            'format_version': self.format_version,
            'created_at': datetime.utcnow().isoformat(),
            'config_hash': model_hash(model_cfg, clnet_cfg),
            'model_config': asdict(model_cfg),
            'clnet_config': asdict(clnet_cfg),
            'base_state': {key: value.detach().cpu() for key, value in base.state_dict().items()},
            'clnet_state': _namespace({key: value.detach().cpu() for key, value in clnet.state_dict().items()})
            if clnet is not None else {},
            'meta': dict(meta or {}),
        }
        torch.save(payload, path)
        logger.info(f"[OK] Checkpoint saved: {path} (hash {payload['config_hash']})")
        return path

    def read(self, path: Path) -> Dict[str, Any]:
        """Load and verify the raw checkpoint dict"""
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"Checkpoint not found: {path}", field='paths.checkpoint')
        payload = torch.load(path, map_location='cpu', weights_only=True)
        version = str(payload.get('format_version', ''))
        if version.split('.')[0] != self.format_version.split('.')[0]:
            raise ConfigurationError(f"Unsupported checkpoint format {version!r} in {path}")
        return payload

    def load(self, path: Path, require_clnet: bool = False) -> LoadedCheckpoint:
        """
        Rebuild networks from a checkpoint

        Raises:
            ValidationError: If the file does not exist
            ConfigurationError: On version or config-hash mismatch, or a missing CLNet when required
        """
        payload = self.read(path)
        model_cfg = _config_from_dict(BackboneConfig, payload['model_config'])
        clnet_cfg = _config_from_dict(CLNetConfig, payload['clnet_config'])
        digest = model_hash(model_cfg, clnet_cfg)
        if digest != payload['config_hash']:
            raise ConfigurationError(
                f"Checkpoint {path} config hash {payload['config_hash']} does not match its configs ({digest})"
            )

        base = build_pipeline(model_cfg)
        base.load_state_dict(payload['base_state'])
        base.eval()

        clnet = None
        if payload['clnet_state']:
            clnet = CLNet(model_cfg, clnet_cfg)
            clnet.load_state_dict(_strip_namespace(payload['clnet_state']))
            clnet.eval()
        elif require_clnet:
            raise ConfigurationError(f"Checkpoint {path} holds no CLNet weights; run `train` first")

        logger.debug(f"Checkpoint loaded: {path} (hash {digest}, clnet={'yes' if clnet else 'no'})")
        return LoadedCheckpoint(model_cfg, clnet_cfg, base, clnet, digest, dict(payload.get('meta', {})),
                                weights_digest=_weights_digest(payload))


def _weights_digest(payload: Dict[str, Any]) -> str:
    digest = hashlib.sha256()
    for section in ('base_state', 'clnet_state'):
        for key in sorted(payload[section]):
            digest.update(key.encode('utf-8'))
            digest.update(payload[section][key].contiguous().numpy().tobytes())
    return digest.hexdigest()


def checkpoint_digest(path: Path) -> str:
    """sha256 over parameter bytes in key order (creation time excluded)"""
    return _weights_digest(CheckpointManager().read(path))
