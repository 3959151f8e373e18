"""
Training Service
Pair sampling, diverse sample mining, the combined loss and the offline training loops
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence as Seq, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from siamadapt.config import BackboneConfig, RunConfig, TrainConfig
from siamadapt.geometry import (
    IGNORE, NEG, POS, BBox, LabelMap, anchor_grid_for, assign_labels, encode_boxes, select_samples,
)
from siamadapt.networks.checkpoint import CheckpointManager, LoadedCheckpoint
from siamadapt.networks.clnet import CLNet
from siamadapt.networks.siamese import (
    anchor_deltas, anchor_logits, anchor_scores, build_pipeline, similarity_map,
)
from siamadapt.services.dataset_service import Sequence
from siamadapt.utils.errors import ConfigurationError, NumericError, TrainingDivergedError, ValidationError
from siamadapt.utils.image import box_in_crop, context_size, crop_square, to_tensor

logger = logging.getLogger(__name__)

LOG_COLUMNS = ('step', 'loss_cls', 'loss_loc', 'loss_total')
BASE_WARMUP_FACTOR = 0.2
BASE_FINAL_FACTOR = 0.1


class SampleRole(str, Enum):
    POS = 'pos'
    NEG = 'neg'
    DIVERSE = 'diverse'


def _empty_index() -> torch.Tensor:
    return torch.empty(0, dtype=torch.long)


@dataclass
class TrainingPair:
    """Template/search crops of one sequence with labels and the selected sample indices"""
    sequence_id: str
    template: torch.Tensor
    search: torch.Tensor
    gt: BBox
    labels: LabelMap
    loc_target: torch.Tensor
    positives: torch.Tensor
    negatives: torch.Tensor
    diverse: torch.Tensor = field(default_factory=_empty_index)

    @property
    def selected(self) -> torch.Tensor:
        return torch.cat([self.positives, self.negatives, self.diverse])

    def roles(self) -> Dict[int, SampleRole]:
        roles = {int(i): SampleRole.POS for i in self.positives}
        roles.update({int(i): SampleRole.NEG for i in self.negatives})
        roles.update({int(i): SampleRole.DIVERSE for i in self.diverse})
        return roles

    def selected_labels(self) -> torch.Tensor:
        """Labels restricted to the selected samples; diverse samples count as NEG"""
        labels = torch.full((len(self.labels),), IGNORE, dtype=torch.long)
        labels[self.positives] = POS
        labels[self.negatives] = NEG
        labels[self.diverse] = NEG
        return labels


@dataclass(frozen=True)
class PairPlan:
    """Random draws behind one pair, fixed before any cropping"""
    sequence_index: int
    template_frame: int
    search_frame: int
    shift: Tuple[float, float]
    scale: float
    sample_seed: int


@dataclass
class LossBreakdown:
    total: torch.Tensor
    cls: torch.Tensor
    loc: torch.Tensor

    def as_floats(self) -> Dict[str, float]:
        return {'loss_cls': float(self.cls), 'loss_loc': float(self.loc), 'loss_total': float(self.total)}


@dataclass
class TrainResult:
    checkpoint: Path
    history: List[Dict[str, float]]


# ==================== LOSS ====================

def smooth_l1(residual: torch.Tensor) -> torch.Tensor:
    """0.5 r^2 for |r| < 1, |r| - 0.5 otherwise"""
    magnitude = residual.abs()
    return torch.where(magnitude < 1.0, 0.5 * residual * residual, magnitude - 0.5)


def combined_loss(cls_map: torch.Tensor, loc_map: Optional[torch.Tensor], y_cls: torch.Tensor,
                  y_loc: Optional[torch.Tensor], weight: float = 1.2) -> LossBreakdown:
    """
    L = L_cls + weight * L_loc

    L_cls is softmax cross-entropy (sigmoid for a 1-channel similarity map) over the selected
    samples, i.e. every anchor whose label is not IGNORE. L_loc is smooth-L1 summed over the four
    offsets and averaged over POS anchors.

    Args:
        cls_map: (N, 2k, H, W) or (N, 1, H, W)
        loc_map: (N, 4k, H, W) or None
        y_cls: (N, A) labels with IGNORE outside the selection
        y_loc: (N, A, 4) regression targets or None

    Raises:
        NumericError: If any input holds NaN or infinity
    """
    for name, value in (('cls_map', cls_map), ('loc_map', loc_map), ('y_loc', y_loc)):
        if value is not None and not torch.isfinite(value).all():
            raise NumericError(f"non-finite values in {name}")
    batch = cls_map.size(0)
    labels = y_cls.reshape(batch, -1).long()
    selected = labels != IGNORE
    zero = cls_map.sum() * 0.0

    if not selected.any():
        cls_loss = zero
    elif cls_map.size(1) == 1:
        logits = cls_map.reshape(batch, -1)
        cls_loss = F.binary_cross_entropy_with_logits(logits[selected], (labels[selected] == POS).to(logits.dtype))
    else:
        cls_loss = F.cross_entropy(anchor_logits(cls_map)[selected], labels[selected])

    positive = labels == POS
    if loc_map is None or y_loc is None or not positive.any():
        loc_loss = zero
    else:
        residual = anchor_deltas(loc_map)[positive] - y_loc.reshape(batch, -1, 4)[positive]
        loc_loss = smooth_l1(residual).sum(dim=-1).mean()
    return LossBreakdown(cls_loss + weight * loc_loss, cls_loss, loc_loss)


# ==================== SAMPLING ====================

def mine_diverse_samples(scores: torch.Tensor, labels: LabelMap, used: Union[torch.Tensor, Iterable[int]],
                         count: int = 16) -> torch.Tensor:
    """
    Highest-scoring unused negatives

    Args:
        scores: Foreground scores per anchor (A,) or an unadjusted (1, 2k, H, W) classification map
        labels: Full label map of the pair
        used: Indices already selected
        count: Number of samples to mine

    Returns:
        Up to `count` NEG indices, by descending score, ties by ascending index
    """
    if scores.dim() == 4:
        scores = anchor_scores(scores)[0]
    scores = scores.reshape(-1).detach()
    candidate = labels.labels == NEG
    used = used if isinstance(used, torch.Tensor) else torch.as_tensor(list(used), dtype=torch.long)
    if used.numel():
        candidate[used.long()] = False
    indices = torch.nonzero(candidate, as_tuple=False).flatten()
    order = torch.sort(scores[indices], descending=True, stable=True).indices
    return indices[order[:count]]


class PairSampler:
    """
    Builds training pairs from sequences

    With `one_sequence` on, every pair of a batch comes from one uniformly chosen sequence.
    """

    def __init__(self, sequences: Seq[Sequence], model_cfg: BackboneConfig, train_cfg: TrainConfig,
                 seed: int = 0, max_attempts: int = 20):
        if not sequences:
            raise ValidationError("training needs at least one sequence", field='paths.dataset')
        if all(len(s) - 1 < train_cfg.min_frame_gap for s in sequences):
            raise ValidationError(
                f"no sequence is longer than training.min_frame_gap={train_cfg.min_frame_gap}",
                field='training.min_frame_gap'
            )
        self.sequences = list(sequences)
        self.model_cfg = model_cfg
        self.cfg = train_cfg
        self.rng = np.random.default_rng(seed)
        self.anchors = anchor_grid_for(model_cfg)
        self.max_attempts = max_attempts

    def choose_sequence(self) -> int:
        """Uniform over the dataset; too-short sequences are redrawn"""
        while True:
            index = int(self.rng.integers(len(self.sequences)))
            if len(self.sequences[index]) - 1 >= self.cfg.min_frame_gap:
                return index

    def plan(self, sequence_index: int) -> PairPlan:
        length = len(self.sequences[sequence_index])
        max_gap = min(self.cfg.max_frame_gap, length - 1)
        gap = int(self.rng.integers(self.cfg.min_frame_gap, max_gap + 1))
        start = int(self.rng.integers(0, length - gap))
        shift = self.rng.uniform(-1.0, 1.0, size=2) * self.cfg.translation_jitter
        scale = float(np.exp(self.rng.uniform(-1.0, 1.0) * self.cfg.scale_jitter))
        return PairPlan(sequence_index, start, start + gap, (float(shift[0]), float(shift[1])), scale,
                        int(self.rng.integers(2 ** 31 - 1)))

    def build(self, plan: PairPlan) -> TrainingPair:
        sequence = self.sequences[plan.sequence_index]
        model = self.model_cfg

        box_z = sequence.gt[plan.template_frame]
        side_z = context_size(box_z.w, box_z.h, model.context_amount)
        template = crop_square(sequence.frame(plan.template_frame), box_z.center, side_z, model.exemplar_size)

        box_x = sequence.gt[plan.search_frame]
        side_x = context_size(box_x.w, box_x.h, model.context_amount) * model.instance_size / model.exemplar_size
        side_x *= plan.scale
        cx, cy = box_x.center
        center = (cx + plan.shift[0] * side_x / 2, cy + plan.shift[1] * side_x / 2)
        search = crop_square(sequence.frame(plan.search_frame), center, side_x, model.instance_size)

        gt = box_in_crop(box_x, center, side_x, model.instance_size)
        labels = assign_labels(self.anchors, gt, self.cfg.neg_thr, self.cfg.pos_thr)
        generator = torch.Generator().manual_seed(plan.sample_seed)
        positives, negatives = select_samples(labels, self.cfg.total_samples, self.cfg.max_positive, generator)
        return TrainingPair(sequence.id, to_tensor(template), to_tensor(search), gt, labels,
                            encode_boxes(self.anchors, gt), positives, negatives)

    def _build_all(self, plans: List[PairPlan]) -> List[TrainingPair]:
        if self.cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
                return list(pool.map(self.build, plans))
        return [self.build(plan) for plan in plans]

    def sample_batch(self, batch_size: int) -> List[TrainingPair]:
        """
        One batch of pairs; pairs without positives are redrawn from the same sequence

        Raises:
            ConfigurationError: If no pair with a positive anchor can be drawn
        """
        if self.cfg.one_sequence:
            index = self.choose_sequence()
            plans = [self.plan(index) for _ in range(batch_size)]
        else:
            plans = [self.plan(self.choose_sequence()) for _ in range(batch_size)]

        pairs = self._build_all(plans)
        for slot, pair in enumerate(pairs):
            attempts = 0
            while pair.positives.numel() == 0 and attempts < self.max_attempts:
                pair = self.build(self.plan(plans[slot].sequence_index))
                attempts += 1
            pairs[slot] = pair
        pairs = [pair for pair in pairs if pair.positives.numel() > 0]
        if not pairs:
            raise ConfigurationError("no positive anchors in any sampled pair; check model anchor settings")
        return pairs


def sample_sequence_batch(dataset: Seq[Sequence], batch_size: int, seed: int, model_cfg: BackboneConfig,
                          train_cfg: TrainConfig) -> List[TrainingPair]:
    """A batch of training pairs drawn from one sequence"""
    return PairSampler(dataset, model_cfg, train_cfg, seed).sample_batch(batch_size)


# ==================== SCHEDULE ====================

def learning_rate(epoch: int, epochs: int, warmup: int, start: float, peak: float, end: float) -> float:
    """Linear warmup from `start` to `peak`, then exponential decay reaching `end` at the last epoch"""
    if epoch < warmup:
        return start + (peak - start) * epoch / warmup
    decay_epochs = max(1, epochs - warmup - 1)
    if peak <= 0 or end <= 0:
        return peak
    gamma = (end / peak) ** (1.0 / decay_epochs)
    return peak * gamma ** min(epoch - warmup, decay_epochs)


def _set_learning_rate(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group['lr'] = lr


def freeze(module: nn.Module) -> nn.Module:
    for parameter in module.parameters():
        parameter.requires_grad_(False)
    return module.eval()


def _stack(pairs: Seq[TrainingPair]) -> Tuple[torch.Tensor, torch.Tensor]:
    return torch.cat([p.template for p in pairs]), torch.cat([p.search for p in pairs])


# ==================== TRAINERS ====================

class CLNetTrainer:
    """One optimisation step of CLNet on top of a frozen base tracker"""

    def __init__(self, base: nn.Module, clnet: CLNet, cfg: TrainConfig):
        self.base = freeze(base)
        self.clnet = clnet
        self.cfg = cfg
        self.optimizer = torch.optim.SGD(clnet.parameters(), lr=cfg.lr_start, momentum=cfg.momentum,
                                         weight_decay=cfg.weight_decay)

    def set_learning_rate(self, lr: float) -> None:
        _set_learning_rate(self.optimizer, lr)

    @property
    def mines(self) -> bool:
        """Diverse negative mining runs for RPN heads only"""
        return self.cfg.mining and self.base.head_type != 'fc'

    def mine(self, pairs: Seq[TrainingPair], base_cls: torch.Tensor) -> None:
        scores = anchor_scores(base_cls)
        for row, pair in enumerate(pairs):
            used = torch.cat([pair.positives, pair.negatives])
            pair.diverse = mine_diverse_samples(scores[row], pair.labels, used, self.cfg.diverse_samples) \
                if self.mines else _empty_index()

    def loss(self, pairs: Seq[TrainingPair]) -> LossBreakdown:
        """Adjusted forward pass with batch-pooled latent statistics"""
        z, x = _stack(pairs)
        with torch.no_grad():
            search_feature = self.base.embed(x)
            if self.base.head_type == 'rpn':
                maps = self.base.hidden_maps(self.base.embed(z), search_feature)
                base_cls, _ = self.base.head_outputs(maps)
            else:
                template = self.base.template_feature(z)
                base_cls = similarity_map(search_feature, template, self.base.bias)
        self.mine(pairs, base_cls)

        y_cls = torch.stack([pair.selected_labels() for pair in pairs])
        if self.base.head_type == 'rpn':
            y_loc = torch.stack([pair.loc_target for pair in pairs])
            adjusted = self.clnet.adjust_heads(maps, y_cls, self.base.base_weights())
            cls_map, loc_map = self.base.head_outputs(maps, adjusted)
            return combined_loss(cls_map, loc_map, y_cls, y_loc, self.cfg.loss_weight)

        adjustment = self.clnet.adjust_similarity(base_cls, y_cls, template, self.base.bias)
        return combined_loss(adjustment.score(search_feature), None, y_cls, None, self.cfg.loss_weight)

    def step(self, pairs: Seq[TrainingPair]) -> LossBreakdown:
        self.clnet.train()
        losses = self.loss(pairs)
        self.optimizer.zero_grad()
        losses.total.backward()
        self.optimizer.step()
        return losses


class BaseTrainer:
    """One optimisation step of the base tracker on the 64-sample protocol"""

    def __init__(self, base: nn.Module, cfg: TrainConfig):
        self.base = base
        self.cfg = cfg
        self.optimizer = torch.optim.SGD(base.parameters(), lr=cfg.base_lr, momentum=cfg.momentum,
                                         weight_decay=cfg.weight_decay)

    def set_learning_rate(self, lr: float) -> None:
        _set_learning_rate(self.optimizer, lr)

    def loss(self, pairs: Seq[TrainingPair]) -> LossBreakdown:
        z, x = _stack(pairs)
        y_cls = torch.stack([pair.selected_labels() for pair in pairs])
        if self.base.head_type == 'rpn':
            cls_map, loc_map = self.base(z, x)
            y_loc = torch.stack([pair.loc_target for pair in pairs])
            return combined_loss(cls_map, loc_map, y_cls, y_loc, self.cfg.loss_weight)
        return combined_loss(self.base(z, x), None, y_cls, None, self.cfg.loss_weight)

    def step(self, pairs: Seq[TrainingPair]) -> LossBreakdown:
        self.base.train()
        losses = self.loss(pairs)
        self.optimizer.zero_grad()
        losses.total.backward()
        self.optimizer.step()
        return losses


def _run_epochs(trainer, sampler: PairSampler, cfg: TrainConfig, epochs: int, rates: Tuple[float, float, float],
                log_path: Optional[Path], label: str) -> List[Dict[str, float]]:
    history: List[Dict[str, float]] = []
    last_finite: Dict[str, float] = {}
    writer_file = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        is_new = not log_path.exists()
        writer_file = open(log_path, 'a', newline='', encoding='utf-8')
        writer = csv.writer(writer_file)
        if is_new:
            writer.writerow(LOG_COLUMNS)

    step = 0
    try:
        for epoch in range(epochs):
            lr = learning_rate(epoch, epochs, cfg.warmup_epochs, *rates)
            trainer.set_learning_rate(lr)
            epoch_losses = []
            for _ in range(cfg.steps_per_epoch):
                step += 1
                try:
                    losses = trainer.step(sampler.sample_batch(cfg.batch_size)).as_floats()
                except NumericError:
                    raise TrainingDivergedError(step, last_finite)
                if not all(math.isfinite(v) for v in losses.values()):
                    raise TrainingDivergedError(step, last_finite)
                last_finite = losses
                record = {'step': step, **losses}
                history.append(record)
                epoch_losses.append(losses['loss_total'])
                if writer_file is not None:
                    writer.writerow([step] + [f"{losses[c]:.6f}" for c in LOG_COLUMNS[1:]])
                logger.debug(f"{label} step {step}: {losses}")
            logger.info(f"{label} epoch {epoch + 1}/{epochs}: lr={lr:.5f} "
                        f"mean loss={sum(epoch_losses) / len(epoch_losses):.4f}")
    finally:
        if writer_file is not None:
            writer_file.close()
    return history


def train_clnet(base_checkpoint: Union[Path, LoadedCheckpoint], dataset: Seq[Sequence], run_config: RunConfig,
                output: Path, log_path: Optional[Path] = None) -> TrainResult:
    """
    Train CLNet with the base tracker frozen

    Args:
        base_checkpoint: Path to (or loaded) base tracker checkpoint
        dataset: Training sequences
        run_config: Run configuration; clnet and training sections are used
        output: Checkpoint destination
        log_path: Optional append-only CSV loss log

    Returns:
        TrainResult with the checkpoint path and per-step losses

    Raises:
        TrainingDivergedError: If the loss becomes NaN or infinite
    """
    loaded = base_checkpoint if isinstance(base_checkpoint, LoadedCheckpoint) \
        else CheckpointManager().load(base_checkpoint)
    model_cfg = loaded.model_config
    if model_cfg != run_config.model:
        logger.warning("Model section differs from the base checkpoint; using the checkpoint's model config")

    cfg = run_config.training
    torch.manual_seed(run_config.seed)
    clnet = CLNet(model_cfg, run_config.clnet)
    trainer = CLNetTrainer(loaded.base, clnet, cfg)
    sampler = PairSampler(dataset, model_cfg, cfg, seed=run_config.seed)

    logger.info(f"Training CLNet on {len(dataset)} sequence(s): {cfg.epochs} epoch(s) x {cfg.steps_per_epoch} step(s)")
    history = _run_epochs(trainer, sampler, cfg, cfg.epochs, (cfg.lr_start, cfg.lr_peak, cfg.lr_end),
                          log_path, 'clnet')

    clnet.eval()
    meta = {
        'seed': run_config.seed,
        'epochs': cfg.epochs,
        'steps': len(history),
        'final_loss': history[-1]['loss_total'] if history else None,
        'base_config_hash': loaded.config_hash,
        'mining': cfg.mining,
        'one_sequence': cfg.one_sequence,
    }
    path = CheckpointManager().save(output, loaded.base, model_cfg, run_config.clnet, clnet, meta)
    logger.info(f"[OK] CLNet training finished: {path}")
    return TrainResult(path, history)


def pretrain_base(dataset: Seq[Sequence], run_config: RunConfig, output: Path,
                  log_path: Optional[Path] = None) -> TrainResult:
    """Train the toy base tracker end to end on the 64-sample protocol"""
    cfg = run_config.training
    torch.manual_seed(run_config.seed)
    base = build_pipeline(run_config.model)
    trainer = BaseTrainer(base, cfg)
    sampler = PairSampler(dataset, run_config.model, cfg, seed=run_config.seed)

    logger.info(f"Pre-training base tracker ({run_config.model.head_type}) on {len(dataset)} sequence(s)")
    rates = (BASE_WARMUP_FACTOR * cfg.base_lr, cfg.base_lr, BASE_FINAL_FACTOR * cfg.base_lr)
    history = _run_epochs(trainer, sampler, cfg, cfg.base_epochs, rates, log_path, 'base')

    base.eval()
    meta = {'seed': run_config.seed, 'epochs': cfg.base_epochs, 'steps': len(history),
            'final_loss': history[-1]['loss_total'] if history else None}
    path = CheckpointManager().save(output, base, run_config.model, run_config.clnet, None, meta)
    logger.info(f"[OK] Base tracker pre-training finished: {path}")
    return TrainResult(path, history)
