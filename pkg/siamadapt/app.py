"""
Application Factory
Builds the run context (configuration, logging, registry and data sources) for every command
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import torch

from siamadapt.config import RunConfig, load_run_config
from siamadapt.database import RegistryManager
from siamadapt.networks.checkpoint import CheckpointManager, LoadedCheckpoint
from siamadapt.services.dataset_service import Sequence, load_dataset, split_suite, synth_suite
from siamadapt.utils.errors import ValidationError
from siamadapt.utils.logger import setup_logging

logger = logging.getLogger(__name__)


@dataclass
class AppContext:
    """Everything a command needs, built once per invocation"""
    run_config: RunConfig
    checkpoints: CheckpointManager = field(default_factory=CheckpointManager)
    _registry: Optional[RegistryManager] = None
    _suite: Optional[List[Sequence]] = None

    @property
    def registry(self) -> Optional[RegistryManager]:
        """Run registry under the results root, or None when eval.registry is off"""
        if not self.run_config.eval.registry:
            return None
        if self._registry is None:
            self._registry = RegistryManager(results_root=self.run_config.results_root)
        return self._registry

    def synthetic_suite(self) -> List[Sequence]:
        if self._suite is None:
            self._suite = synth_suite(self.run_config.synth, self.run_config.seed)
        return self._suite

    def train_sequences(self) -> List[Sequence]:
        """paths.dataset when set, otherwise the training split of the synthetic suite"""
        if self.run_config.paths.dataset:
            return load_dataset(Path(self.run_config.paths.dataset))
        logger.warning("paths.dataset is not set; training on the synthetic suite")
        train, _ = split_suite(self.synthetic_suite(), self.run_config.synth.test_fraction)
        return train

    def test_sequences(self) -> List[Sequence]:
        """paths.test_dataset when set, otherwise the held-out split of the synthetic suite"""
        if self.run_config.paths.test_dataset:
            return load_dataset(Path(self.run_config.paths.test_dataset))
        _, test = split_suite(self.synthetic_suite(), self.run_config.synth.test_fraction)
        return test

    def require_path(self, key: str) -> Path:
        """A [paths] entry that must be set, reported by its dotted key otherwise"""
        value = getattr(self.run_config.paths, key)
        if not value:
            raise ValidationError(f"paths.{key} is required for this command", field=f'paths.{key}')
        return Path(value)

    def load_checkpoint(self, require_clnet: bool = False) -> LoadedCheckpoint:
        return self.checkpoints.load(self.require_path('checkpoint'), require_clnet=require_clnet)

    def close(self) -> None:
        if self._registry is not None:
            self._registry.close()
            self._registry = None


def create_context(config_path: Optional[Path] = None, env: Optional[str] = None,
                   overrides: Optional[Dict[str, str]] = None, seed: Optional[int] = None,
                   log_level: Optional[str] = None) -> AppContext:
    """
    Context factory function

    Args:
        config_path: Optional INI file
        env: Preset name (default, toy, testing)
        overrides: Dotted `section.key` -> value overrides
        seed: Seed override
        log_level: Optional level overriding the preset's

    Returns:
        AppContext with a validated configuration and logging configured
    """
    run_config = load_run_config(config_path, env, overrides, seed)
    settings = run_config.settings
    setup_logging(settings, log_level)
    settings.init_app()
    torch.manual_seed(run_config.seed)
    logger.info(f"Starting {settings.APP_NAME} v{settings.VERSION} ({run_config.env} preset, seed {run_config.seed})")
    return AppContext(run_config)
