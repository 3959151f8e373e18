"""
Configuration management for SiamAdapt
Preset classes with environment variable support, INI run files and flag overrides
"""

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Type

from dotenv import load_dotenv

from siamadapt.utils.errors import ValidationError
from siamadapt.utils.validators import Validator, require, require_all

load_dotenv()

HEAD_TYPES = ('rpn', 'fc')
AUGMENTATIONS = ('additive', 'cbam', 'film')
BRANCHES = ('cls', 'reg', 'fc')
FC_DELTA_MODES = ('template', 'response')
LATENT_MODES = ('statistics', 'pooled')
TRACKING_MODES = ('base', 'clnet', 'clnet_star')


# ==================== SECTIONS ====================

@dataclass(frozen=True)
class BackboneConfig:
    """Toy Siamese core dimensions (section [model])"""
    head_type: str = 'rpn'
    embed_channels: int = 256
    head_hidden: int = 256
    anchors_per_cell: int = 5
    levels: int = 1
    backbone_layers: int = 4
    stride: int = 8
    exemplar_size: int = 128
    instance_size: int = 320
    anchor_scales: Tuple[float, ...] = (8.0,)
    anchor_ratios: Tuple[float, ...] = (0.33, 0.5, 1.0, 2.0, 3.0)
    context_amount: float = 0.5

    @property
    def template_size(self) -> int:
        """Spatial size of the template feature"""
        return self.exemplar_size // self.stride

    @property
    def search_size(self) -> int:
        """Spatial size of the search feature"""
        return self.instance_size // self.stride

    @property
    def map_size(self) -> int:
        """Spatial size of M and the score maps (valid correlation)"""
        return self.search_size - self.template_size + 1

    @property
    def head_in(self) -> int:
        """Input channels of the last head layer"""
        return self.head_hidden if self.head_type == 'rpn' else 1

    def head_out(self, branch: str) -> int:
        """Output channels of the last head layer for a branch"""
        if branch == 'cls':
            return 2 * self.anchors_per_cell
        if branch == 'reg':
            return 4 * self.anchors_per_cell
        return 1

    def validate(self) -> None:
        require(Validator.validate_choice(self.head_type, HEAD_TYPES, 'model.head_type'), 'model.head_type')
        for name in ('embed_channels', 'head_hidden', 'anchors_per_cell', 'levels',
                     'backbone_layers', 'stride', 'exemplar_size', 'instance_size'):
            require(Validator.validate_positive(getattr(self, name), f'model.{name}'), f'model.{name}')
        if len(self.anchor_scales) * len(self.anchor_ratios) != self.anchors_per_cell:
            raise ValidationError(
                f"model.anchors_per_cell={self.anchors_per_cell} does not match "
                f"{len(self.anchor_scales)} scale(s) x {len(self.anchor_ratios)} ratio(s)",
                field='model.anchors_per_cell'
            )
        if self.head_type == 'fc' and self.anchors_per_cell != 1:
            raise ValidationError("model.anchors_per_cell must be 1 for the fc head",
                                  field='model.anchors_per_cell')
        if self.exemplar_size % self.stride or self.instance_size % self.stride:
            raise ValidationError("model.exemplar_size and model.instance_size must be multiples of model.stride",
                                  field='model.stride')
        if self.map_size < 1:
            raise ValidationError("model.instance_size must exceed model.exemplar_size",
                                  field='model.instance_size')


@dataclass(frozen=True)
class CLNetConfig:
    """Compact latent network settings (section [clnet])"""
    enabled: bool = True
    latent_channels: int = 128
    hidden: int = 256
    augmentation: str = 'additive'
    branches: Tuple[str, ...] = ('cls', 'reg')
    fc_delta_mode: str = 'template'
    latent_mode: str = 'statistics'
    batch_norm: bool = True
    adjust_blocks: int = 3
    neg_thr: float = 0.3
    pos_thr: float = 0.6

    def validate(self, model: Optional[BackboneConfig] = None) -> None:
        require_all([
            (Validator.validate_positive(self.latent_channels, 'clnet.latent_channels'), 'clnet.latent_channels'),
            (Validator.validate_positive(self.hidden, 'clnet.hidden'), 'clnet.hidden'),
            (Validator.validate_positive(self.adjust_blocks, 'clnet.adjust_blocks'), 'clnet.adjust_blocks'),
            (Validator.validate_choice(self.augmentation, AUGMENTATIONS, 'clnet.augmentation'), 'clnet.augmentation'),
            (Validator.validate_choice(self.fc_delta_mode, FC_DELTA_MODES, 'clnet.fc_delta_mode'), 'clnet.fc_delta_mode'),
            (Validator.validate_choice(self.latent_mode, LATENT_MODES, 'clnet.latent_mode'), 'clnet.latent_mode'),
            (Validator.validate_threshold_pair(self.neg_thr, self.pos_thr), 'clnet.pos_thr'),
        ])
        for branch in self.branches:
            require(Validator.validate_choice(branch, BRANCHES, 'clnet.branches'), 'clnet.branches')
        if model is None:
            return
        if model.head_type == 'fc' and set(self.branches) != {'fc'}:
            raise ValidationError("clnet.branches must be 'fc' for the fc head", field='clnet.branches')
        if model.head_type == 'rpn':
            if 'fc' in self.branches:
                raise ValidationError("clnet.branches cannot contain 'fc' for the rpn head", field='clnet.branches')
            # the fc head has a single input channel, so the bound only binds rpn heads
            if self.latent_channels > 2 * model.head_in:
                raise ValidationError(
                    f"clnet.latent_channels={self.latent_channels} exceeds twice the hidden map "
                    f"channels ({model.head_in})", field='clnet.latent_channels'
                )


@dataclass(frozen=True)
class TrainConfig:
    """Offline training settings (section [training])"""
    loss_weight: float = 1.2
    batch_size: int = 8
    epochs: int = 20
    steps_per_epoch: int = 100
    warmup_epochs: int = 5
    lr_start: float = 0.001
    lr_peak: float = 0.005
    lr_end: float = 0.0005
    momentum: float = 0.9
    weight_decay: float = 1e-4
    total_samples: int = 64
    max_positive: int = 16
    diverse_samples: int = 16
    mining: bool = True
    one_sequence: bool = True
    min_frame_gap: int = 1
    max_frame_gap: int = 100
    translation_jitter: float = 0.2
    scale_jitter: float = 0.05
    neg_thr: float = 0.3
    pos_thr: float = 0.6
    base_epochs: int = 20
    base_lr: float = 0.01
    workers: int = 1

    def validate(self) -> None:
        require_all([
            (Validator.validate_positive(self.loss_weight, 'training.loss_weight'), 'training.loss_weight'),
            (Validator.validate_positive(self.batch_size, 'training.batch_size'), 'training.batch_size'),
            (Validator.validate_positive(self.epochs, 'training.epochs'), 'training.epochs'),
            (Validator.validate_positive(self.steps_per_epoch, 'training.steps_per_epoch'), 'training.steps_per_epoch'),
            (Validator.validate_non_negative(self.warmup_epochs, 'training.warmup_epochs'), 'training.warmup_epochs'),
            (Validator.validate_non_negative(self.lr_start, 'training.lr_start'), 'training.lr_start'),
            (Validator.validate_non_negative(self.lr_peak, 'training.lr_peak'), 'training.lr_peak'),
            (Validator.validate_non_negative(self.lr_end, 'training.lr_end'), 'training.lr_end'),
            (Validator.validate_positive(self.total_samples, 'training.total_samples'), 'training.total_samples'),
            (Validator.validate_non_negative(self.max_positive, 'training.max_positive'), 'training.max_positive'),
            (Validator.validate_non_negative(self.diverse_samples, 'training.diverse_samples'), 'training.diverse_samples'),
            (Validator.validate_positive(self.min_frame_gap, 'training.min_frame_gap'), 'training.min_frame_gap'),
            (Validator.validate_positive(self.workers, 'training.workers'), 'training.workers'),
            (Validator.validate_threshold_pair(self.neg_thr, self.pos_thr), 'training.pos_thr'),
        ])
        if self.max_frame_gap < self.min_frame_gap:
            raise ValidationError("training.max_frame_gap must be >= training.min_frame_gap",
                                  field='training.max_frame_gap')
        if self.max_positive > self.total_samples:
            raise ValidationError("training.max_positive cannot exceed training.total_samples",
                                  field='training.max_positive')


@dataclass(frozen=True)
class TrackConfig:
    """Online tracking settings (section [tracking])"""
    mode: str = 'clnet_star'
    score_threshold: float = 0.9
    margin_threshold: float = 0.2
    penalty_k: float = 0.05
    window_influence: float = 0.42
    lr: float = 0.38
    min_size: float = 4.0
    candidate_dump: int = 50
    neg_thr: float = 0.3
    pos_thr: float = 0.6

    def validate(self) -> None:
        require_all([
            (Validator.validate_choice(self.mode, TRACKING_MODES, 'tracking.mode'), 'tracking.mode'),
            (Validator.validate_non_negative(self.penalty_k, 'tracking.penalty_k'), 'tracking.penalty_k'),
            (Validator.validate_ratio(self.window_influence, 'tracking.window_influence'), 'tracking.window_influence'),
            (Validator.validate_ratio(self.lr, 'tracking.lr'), 'tracking.lr'),
            (Validator.validate_positive(self.min_size, 'tracking.min_size'), 'tracking.min_size'),
            (Validator.validate_non_negative(self.candidate_dump, 'tracking.candidate_dump'), 'tracking.candidate_dump'),
            (Validator.validate_threshold_pair(self.neg_thr, self.pos_thr), 'tracking.pos_thr'),
        ])
        # -inf / +inf are legal: they switch the update logic off
        for name in ('score_threshold', 'margin_threshold'):
            value = getattr(self, name)
            if value != value:
                raise ValidationError(f"tracking.{name} must not be NaN", field=f'tracking.{name}')


@dataclass(frozen=True)
class EvalConfig:
    """Benchmark settings (section [eval])"""
    precision_max: int = 50
    precision_at: int = 20
    success_bins: int = 21
    exclude_first_frame: bool = True
    workers: int = 1
    registry: bool = True
    plot: bool = False

    def validate(self) -> None:
        require_all([
            (Validator.validate_positive(self.precision_max, 'eval.precision_max'), 'eval.precision_max'),
            (Validator.validate_non_negative(self.precision_at, 'eval.precision_at'), 'eval.precision_at'),
            (Validator.validate_positive(self.success_bins - 1, 'eval.success_bins'), 'eval.success_bins'),
            (Validator.validate_positive(self.workers, 'eval.workers'), 'eval.workers'),
        ])


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic suite settings (section [synth])"""
    suite_size: int = 60
    test_fraction: float = 0.2
    length: int = 60
    canvas: int = 192
    target_size: float = 32.0
    distractors: int = 2
    shift_fraction: float = 0.0
    noise: float = 6.0
    speed: float = 2.5

    def validate(self) -> None:
        require_all([
            (Validator.validate_positive(self.suite_size, 'synth.suite_size'), 'synth.suite_size'),
            (Validator.validate_ratio(self.test_fraction, 'synth.test_fraction'), 'synth.test_fraction'),
            (Validator.validate_ratio(self.shift_fraction, 'synth.shift_fraction'), 'synth.shift_fraction'),
            (Validator.validate_positive(self.canvas, 'synth.canvas'), 'synth.canvas'),
            (Validator.validate_positive(self.target_size, 'synth.target_size'), 'synth.target_size'),
            (Validator.validate_non_negative(self.distractors, 'synth.distractors'), 'synth.distractors'),
            (Validator.validate_non_negative(self.noise, 'synth.noise'), 'synth.noise'),
            (Validator.validate_non_negative(self.speed, 'synth.speed'), 'synth.speed'),
        ])
        if self.length < 2:
            raise ValidationError("synth.length must be at least 2", field='synth.length')


@dataclass(frozen=True)
class PathsConfig:
    """Filesystem locations (section [paths])"""
    dataset: Optional[str] = None
    test_dataset: Optional[str] = None
    checkpoint: Optional[str] = None
    base_checkpoint: Optional[str] = None
    output: Optional[str] = None
    results_root: Optional[str] = None

    def validate(self) -> None:
        return None


SECTIONS: Dict[str, type] = {
    'model': BackboneConfig,
    'clnet': CLNetConfig,
    'training': TrainConfig,
    'tracking': TrackConfig,
    'eval': EvalConfig,
    'synth': SynthConfig,
    'paths': PathsConfig,
}


# ==================== PRESETS ====================

class BaseConfig:
    """Base preset: full-size dimensions and common settings"""

    APP_NAME = "SiamAdapt"
    VERSION = "1.0.0"
    TESTING = False
    SEED = 0

    # Logging
    LOG_LEVEL = os.environ.get('SIAMADAPT_LOG_LEVEL', 'INFO')
    LOG_FORMAT = '[%(asctime)s] %(levelname)s in %(module)s: %(message)s'
    LOG_FILE = os.environ.get('SIAMADAPT_LOG_FILE')
    LOG_MAX_BYTES = 10 * 1024 * 1024  # 10MB
    LOG_BACKUP_COUNT = 5

    # Paths
    BASE_DIR = Path(__file__).parent.parent
    RESULTS_ROOT = Path(os.environ.get('SIAMADAPT_RESULTS_ROOT', BASE_DIR / 'results'))

    # Section overrides on top of the dataclass defaults
    MODEL: Dict[str, Any] = {}
    CLNET: Dict[str, Any] = {}
    TRAINING: Dict[str, Any] = {}
    TRACKING: Dict[str, Any] = {}
    EVAL: Dict[str, Any] = {}
    SYNTH: Dict[str, Any] = {}
    PATHS: Dict[str, Any] = {}

    @classmethod
    def section_overrides(cls) -> Dict[str, Dict[str, Any]]:
        return {name: dict(getattr(cls, name.upper())) for name in SECTIONS}

    @classmethod
    def init_app(cls) -> None:
        """Create directories the preset relies on"""
        cls.RESULTS_ROOT.mkdir(parents=True, exist_ok=True)


class ToyConfig(BaseConfig):
    """Desk-scale preset for the synthetic suite"""

    MODEL = {
        'embed_channels': 32,
        'head_hidden': 32,
        'backbone_layers': 4,
        'stride': 2,
        'exemplar_size': 32,
        'instance_size': 80,
        'anchor_scales': (8.0,),
    }
    CLNET = {'latent_channels': 32, 'hidden': 64}
    TRAINING = {
        'batch_size': 8,
        'epochs': 6,
        'steps_per_epoch': 40,
        'warmup_epochs': 1,
        'max_frame_gap': 30,
        'base_epochs': 8,
    }
    SYNTH = {'suite_size': 60, 'length': 60, 'canvas': 160, 'target_size': 24.0}


class TestingConfig(BaseConfig):
    """Tiny preset used by the test suite"""

    TESTING = True
    LOG_LEVEL = 'DEBUG'
    RESULTS_ROOT = Path('/tmp/siamadapt_test/results')

    MODEL = {
        'embed_channels': 8,
        'head_hidden': 8,
        'backbone_layers': 3,
        'stride': 2,
        'exemplar_size': 24,
        'instance_size': 48,
        'anchor_scales': (6.0,),
    }
    CLNET = {'latent_channels': 6, 'hidden': 16}
    TRAINING = {
        'batch_size': 2,
        'epochs': 2,
        'steps_per_epoch': 2,
        'warmup_epochs': 1,
        'max_frame_gap': 5,
        'base_epochs': 1,
    }
    TRACKING = {'candidate_dump': 20}
    SYNTH = {'suite_size': 4, 'length': 8, 'canvas': 64, 'target_size': 12.0, 'distractors': 1}


# Configuration dictionary
config: Dict[str, Type[BaseConfig]] = {
    'default': BaseConfig,
    'toy': ToyConfig,
    'testing': TestingConfig,
}


def get_config(env: Optional[str] = None) -> Type[BaseConfig]:
    """
    Get the preset for an environment name

    Args:
        env: Preset name (default, toy, testing); SIAMADAPT_ENV when omitted

    Returns:
        Preset class

    Raises:
        ValidationError: If the preset name is unknown
    """
    if env is None:
        env = os.environ.get('SIAMADAPT_ENV', 'default')
    if env not in config:
        raise ValidationError(f"Unknown preset {env!r}; choose from {', '.join(config)}", field='env')
    return config[env]


# ==================== RUN CONFIG ====================

@dataclass(frozen=True)
class RunConfig:
    """Merged configuration for one command invocation"""
    model: BackboneConfig = field(default_factory=BackboneConfig)
    clnet: CLNetConfig = field(default_factory=CLNetConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    tracking: TrackConfig = field(default_factory=TrackConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0
    env: str = 'default'

    def validate(self) -> 'RunConfig':
        self.model.validate()
        self.clnet.validate(self.model)
        self.training.validate()
        self.tracking.validate()
        self.eval.validate()
        self.synth.validate()
        self.paths.validate()
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = {name: asdict(getattr(self, name)) for name in SECTIONS}
        data['seed'] = self.seed
        return data

    @property
    def settings(self) -> Type[BaseConfig]:
        """Preset class carrying logging and path settings"""
        return get_config(self.env)

    @property
    def results_root(self) -> Path:
        return Path(self.paths.results_root) if self.paths.results_root else self.settings.RESULTS_ROOT

    def with_section(self, name: str, **changes: Any) -> 'RunConfig':
        """Copy with some fields of one section replaced"""
        return replace(self, **{name: replace(getattr(self, name), **changes)})


def config_hash(run_config: RunConfig, sections: Optional[Tuple[str, ...]] = None) -> str:
    """
    Digest of the canonical JSON form of a config

    Args:
        run_config: Configuration to hash
        sections: Restrict hashing to these sections (all plus seed when omitted)

    Returns:
        12 hex digits
    """
    data = run_config.to_dict()
    if sections is not None:
        data = {name: data[name] for name in sections}
    canonical = json.dumps(data, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:12]


def _build_section(name: str, values: Mapping[str, Any]) -> Any:
    cls = SECTIONS[name]
    allowed = {f.name for f in fields(cls)}
    require(Validator.validate_known_keys(dict(values), allowed, name))
    return cls(**values)


def _parse_section_text(name: str, raw: Mapping[str, str], base: Mapping[str, Any]) -> Dict[str, Any]:
    cls = SECTIONS[name]
    defaults = {f.name: getattr(cls(), f.name) for f in fields(cls)}
    defaults.update(base)
    require(Validator.validate_known_keys(dict(raw), defaults.keys(), name))
    return {key: Validator.parse_value(value, defaults[key], f'{name}.{key}') for key, value in raw.items()}


def load_run_config(path: Optional[os.PathLike] = None, env: Optional[str] = None,
                    overrides: Optional[Mapping[str, str]] = None,
                    seed: Optional[int] = None) -> RunConfig:
    """
    Merge preset, INI file and overrides into a validated RunConfig

    Precedence: overrides > file > preset > dataclass defaults.

    Args:
        path: Optional INI file with [model] [clnet] [training] [tracking] [eval] [synth] [paths] [run]
        env: Preset name
        overrides: Dotted `section.key` -> text value
        seed: Seed override (wins over everything)

    Returns:
        Validated RunConfig

    Raises:
        ValidationError: Unknown keys, unparsable values or failed invariants
    """
    preset = get_config(env)
    merged = preset.section_overrides()
    run_seed = preset.SEED

    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"Config file not found: {path}", field='config')
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read(path, encoding='utf-8')
        for section in parser.sections():
            raw = dict(parser.items(section))
            if section == 'run':
                require(Validator.validate_known_keys(raw, {'seed'}, 'run'))
                if 'seed' in raw:
                    run_seed = Validator.parse_value(raw['seed'], 0, 'run.seed')
                continue
            if section not in SECTIONS:
                raise ValidationError(f"Unknown configuration section [{section}]", field=section)
            merged[section].update(_parse_section_text(section, raw, merged[section]))

    for key, value in (overrides or {}).items():
        if '.' not in key:
            raise ValidationError(f"Override key must look like section.key, got {key!r}", field=key)
        section, name = key.split('.', 1)
        if section == 'run' and name == 'seed':
            run_seed = Validator.parse_value(value, 0, key)
            continue
        if section not in SECTIONS:
            raise ValidationError(f"Unknown configuration section in override {key!r}", field=key)
        merged[section].update(_parse_section_text(section, {name: value}, merged[section]))

    if seed is not None:
        run_seed = seed

    sections = {name: _build_section(name, values) for name, values in merged.items()}
    run_config = RunConfig(**sections, seed=run_seed, env=env or os.environ.get('SIAMADAPT_ENV', 'default'))
    return run_config.validate()


# Export configuration utilities
__all__ = [
    'BackboneConfig',
    'CLNetConfig',
    'TrainConfig',
    'TrackConfig',
    'EvalConfig',
    'SynthConfig',
    'PathsConfig',
    'BaseConfig',
    'ToyConfig',
    'TestingConfig',
    'RunConfig',
    'config',
    'get_config',
    'config_hash',
    'load_run_config',
]
