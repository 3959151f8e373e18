"""
Tracker Service
First-frame adjustment, per-frame prediction and conditional updating of the head weights
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from siamadapt.config import BackboneConfig, TrackConfig, TrainConfig
from siamadapt.geometry import NEG, POS, BBox, LabelMap, anchor_grid_for, assign_labels, decode_boxes, select_samples
from siamadapt.networks.clnet import CLNet, FCAdjustment
from siamadapt.networks.siamese import FeatureMap, HeadWeights, anchor_deltas, anchor_scores, head_key, similarity_map
from siamadapt.services.dataset_service import Sequence
from siamadapt.services.training_service import mine_diverse_samples
from siamadapt.utils.errors import ConfigurationError, InitializationError, ValidationError
from siamadapt.utils.image import box_from_crop, box_in_crop, context_size, crop_square, to_tensor

logger = logging.getLogger(__name__)

LATENT_SAMPLE_SEED = 0
MAX_LOG_DELTA = 10.0


class TrackingMode(str, Enum):
    BASE = 'base'
    CLNET = 'clnet'
    CLNET_STAR = 'clnet_star'


@dataclass
class CandidateSet:
    """Cached hidden maps and predicted box (search-crop coordinates) of the last reliable frame"""
    feature: Optional[Dict[str, FeatureMap]] = None
    box: Optional[BBox] = None

    def __post_init__(self):
        if (self.feature is None) != (self.box is None):
            raise ValidationError("candidate feature and box must be both present or both empty", field='candidates')

    @property
    def empty(self) -> bool:
        return self.feature is None


@dataclass
class FrameRecord:
    """One output line of a trajectory"""
    frame: int
    box: BBox
    score: float
    eta: Optional[float] = None
    updated: bool = False
    candidates: List[Tuple[BBox, float]] = field(default_factory=list)

    def to_json(self, with_candidates: bool = True) -> Dict:
        record = {
            'frame': self.frame,
            'x': self.box.x,
            'y': self.box.y,
            'w': self.box.w,
            'h': self.box.h,
            'score': self.score,
            'eta': self.eta,
            'updated': self.updated,
        }
        if with_candidates:
            record['candidates'] = [box.to_list() + [score] for box, score in self.candidates]
        return record

    @classmethod
    def from_json(cls, data: Dict) -> 'FrameRecord':
        candidates = [(BBox(*row[:4]), float(row[4])) for row in data.get('candidates', [])]
        return cls(int(data['frame']), BBox(data['x'], data['y'], data['w'], data['h']), float(data['score']),
                   data.get('eta'), bool(data.get('updated', False)), candidates)


@dataclass
class TrackerState:
    """Everything the tracker carries between frames of one sequence"""
    mode: TrackingMode
    template: FeatureMap
    base_weights: Dict[str, HeadWeights]
    adjusted: Dict[str, HeadWeights]
    candidates: CandidateSet
    score_threshold: float
    margin_threshold: float
    center: Tuple[float, float]
    size: Tuple[float, float]
    fc: Optional[FCAdjustment] = None
    frame_index: int = 0
    updates: int = 0
    history: List[FrameRecord] = field(default_factory=list)


@dataclass
class FrameOutput:
    """Network outputs of one search crop"""
    maps: Dict[str, FeatureMap]
    scores: torch.Tensor
    boxes: torch.Tensor
    crop_center: Tuple[float, float]
    crop_side: float


def margin(scores: torch.Tensor, pseudo: LabelMap) -> Optional[float]:
    """
    eta = max POS score - max NEG score

    Returns:
        None when either set is empty
    """
    scores = scores.reshape(-1)
    positive = scores[pseudo.labels == POS]
    negative = scores[pseudo.labels == NEG]
    if positive.numel() == 0 or negative.numel() == 0:
        return None
    return float(positive.max() - negative.max())


def update_candidates(candidates: CandidateSet, feature: Dict[str, FeatureMap], box: BBox, score: float,
                      score_threshold: float, frame_index: int) -> CandidateSet:
    """Replace the candidate set with {M_i, b_i} when s_i > tau_r; frame 0 always yields an empty set"""
    if frame_index == 0:
        return CandidateSet()
    if score > score_threshold:
        return CandidateSet(feature, box)
    return candidates


class CLNetTracker:
    """
    Anchor-based Siamese tracker with CLNet adjustment

    BASE never adjusts, CLNET adjusts on the first frame only and CLNET_STAR also re-adjusts when
    the score margin drops below tau_m and a reliable frame has been cached.
    """

    def __init__(self, base: nn.Module, model_cfg: BackboneConfig, track_cfg: TrackConfig,
                 clnet: Optional[CLNet] = None, mode: Optional[TrackingMode] = None,
                 train_cfg: Optional[TrainConfig] = None):
        self.base = base.eval()
        self.clnet = clnet.eval() if clnet is not None else None
        self.model_cfg = model_cfg
        self.cfg = track_cfg
        self.train_cfg = train_cfg or TrainConfig()
        self.mode = TrackingMode(mode or track_cfg.mode)
        if self.mode != TrackingMode.BASE and self.clnet is None:
            raise ConfigurationError(f"tracking mode {self.mode.value!r} needs CLNet weights")
        self.anchors = anchor_grid_for(model_cfg)
        hanning = np.hanning(model_cfg.map_size)
        window = np.tile(np.outer(hanning, hanning).flatten(), model_cfg.anchors_per_cell)
        self.window = torch.from_numpy(window)

    @property
    def is_fc(self) -> bool:
        return self.base.head_type == 'fc'

    @property
    def mines(self) -> bool:
        """Diverse negative mining runs for RPN heads only"""
        return self.train_cfg.mining and not self.is_fc

    # ==================== NETWORK ====================

    def _template(self, frame: np.ndarray, center: Tuple[float, float], size: Tuple[float, float]) -> FeatureMap:
        side = context_size(size[0], size[1], self.model_cfg.context_amount)
        patch = to_tensor(crop_square(frame, center, side, self.model_cfg.exemplar_size))
        return self.base.template_feature(patch) if self.is_fc else self.base.embed(patch)

    def _search_side(self, size: Tuple[float, float]) -> float:
        side_z = context_size(size[0], size[1], self.model_cfg.context_amount)
        return side_z * self.model_cfg.instance_size / self.model_cfg.exemplar_size

    def _forward(self, state: TrackerState, frame: np.ndarray, adjusted: bool = True) -> FrameOutput:
        """Scores and decoded boxes (search-crop coordinates) for every anchor"""
        side = self._search_side(state.size)
        patch = to_tensor(crop_square(frame, state.center, side, self.model_cfg.instance_size))
        search = self.base.embed(patch)
        if self.is_fc:
            base_map = similarity_map(search, state.template, self.base.bias)
            response = state.fc.score(search) if adjusted and state.fc is not None else base_map
            scores = anchor_scores(response)[0]
            boxes = self._fc_boxes(state)
            return FrameOutput({head_key('fc', 0): base_map}, scores, boxes, state.center, side)

        maps = self.base.hidden_maps(state.template, search)
        weights = state.adjusted if adjusted else state.base_weights
        cls_map, loc_map = self.base.head_outputs(maps, weights)
        deltas = anchor_deltas(loc_map)[0].double()
        deltas[:, 2:] = deltas[:, 2:].clamp(-MAX_LOG_DELTA, MAX_LOG_DELTA)
        boxes = decode_boxes(self.anchors, deltas)
        return FrameOutput(maps, anchor_scores(cls_map)[0].double(), boxes, state.center, side)

    def _fc_boxes(self, state: TrackerState) -> torch.Tensor:
        # the similarity head only moves the centre; every position proposes the current size
        side = self._search_side(state.size)
        scale = self.model_cfg.instance_size / side
        centers = self.anchors.centers.double()
        w = torch.full_like(centers[:, 0], state.size[0] * scale)
        h = torch.full_like(centers[:, 0], state.size[1] * scale)
        return torch.stack([centers[:, 0] - w / 2, centers[:, 1] - h / 2, w, h], dim=-1)

    def _latent_labels(self, labels: LabelMap, maps: Dict[str, FeatureMap]) -> torch.Tensor:
        """The training-time selection: 64 base samples plus mined negatives, IGNORE elsewhere"""
        generator = torch.Generator().manual_seed(LATENT_SAMPLE_SEED)
        positives, negatives = select_samples(labels, self.train_cfg.total_samples,
                                              self.train_cfg.max_positive, generator)
        if self.is_fc:
            base_scores = anchor_scores(maps[head_key('fc', 0)])[0]
        else:
            base_cls, _ = self.base.head_outputs(maps)
            base_scores = anchor_scores(base_cls)[0]
        diverse = mine_diverse_samples(base_scores, labels, torch.cat([positives, negatives]),
                                       self.train_cfg.diverse_samples) if self.mines \
            else torch.empty(0, dtype=torch.long)
        selected = torch.full((len(labels),), -1, dtype=torch.long)
        selected[positives] = POS
        selected[negatives] = NEG
        selected[diverse] = NEG
        return selected.unsqueeze(0)

    def _adjust(self, state: TrackerState, maps: Dict[str, FeatureMap], labels: LabelMap) -> None:
        latent_labels = self._latent_labels(labels, maps)
        if self.is_fc:
            state.fc = self.clnet.adjust_similarity(maps[head_key('fc', 0)], latent_labels, state.template,
                                                    self.base.bias)
        else:
            state.adjusted = self.clnet.adjust_heads(maps, latent_labels, state.base_weights)

    # ==================== OPERATIONS ====================

    @torch.no_grad()
    def init(self, frame: np.ndarray, gt: BBox) -> TrackerState:
        """
        Build the template and, in CLNet modes, adjust every adapted head on the first frame

        Raises:
            InitializationError: If the first frame yields no positive anchor
        """
        center, size = gt.center, (gt.w, gt.h)
        template = self._template(frame, center, size)
        base_weights = {} if self.is_fc else self.base.base_weights()
        state = TrackerState(
            mode=self.mode,
            template=template,
            base_weights=base_weights,
            adjusted=dict(base_weights),
            candidates=CandidateSet(),
            score_threshold=self.cfg.score_threshold,
            margin_threshold=self.cfg.margin_threshold,
            center=center,
            size=size,
        )
        if self.is_fc:
            state.fc = FCAdjustment(template, self.base.bias)

        if self.mode != TrackingMode.BASE:
            output = self._forward(state, frame, adjusted=False)
            gt_crop = box_in_crop(gt, output.crop_center, output.crop_side, self.model_cfg.instance_size)
            labels = assign_labels(self.anchors, gt_crop, self.cfg.neg_thr, self.cfg.pos_thr)
            if labels.pos_count == 0:
                raise InitializationError("first frame yields no positive anchor; cannot encode the target")
            self._adjust(state, output.maps, labels)

        state.history.append(FrameRecord(0, gt, 1.0))
        return state

    @torch.no_grad()
    def track_frame(self, state: TrackerState, frame: np.ndarray) -> Tuple[BBox, float, bool]:
        """
        Predict the target box on the next frame, then run the candidate and update logic

        Returns:
            (box, s_i, updated)
        """
        state.frame_index += 1
        output = self._forward(state, frame)
        box, best, score = self._post_process(state, output, frame.shape[:2])

        box_crop = box_in_crop(box, output.crop_center, output.crop_side, self.model_cfg.instance_size)
        pseudo = assign_labels(self.anchors, box_crop, self.cfg.neg_thr, self.cfg.pos_thr)
        eta = margin(output.scores, pseudo)

        updated = False
        if state.mode == TrackingMode.CLNET_STAR:
            state.candidates = update_candidates(state.candidates, output.maps, box_crop, score,
                                                 state.score_threshold, state.frame_index)
            if eta is not None:
                updated = self.maybe_update(state, eta)

        state.history.append(FrameRecord(state.frame_index, box, score, eta, updated,
                                         self._candidate_dump(output)))
        return box, score, updated

    def maybe_update(self, state: TrackerState, eta: float) -> bool:
        """
        Re-run the adjustment from the cached reliable frame when eta < tau_m

        The candidate set is emptied after every update.
        """
        if state.mode != TrackingMode.CLNET_STAR or state.candidates.empty or not eta < state.margin_threshold:
            return False
        labels = assign_labels(self.anchors, state.candidates.box, self.cfg.neg_thr, self.cfg.pos_thr)
        if labels.pos_count == 0:
            logger.debug(f"Frame {state.frame_index}: cached box has no positive anchor, update skipped")
            return False
        with torch.no_grad():
            self._adjust(state, state.candidates.feature, labels)
        state.candidates = CandidateSet()
        state.updates += 1
        logger.debug(f"Frame {state.frame_index}: weights re-adjusted (eta={eta:.3f})")
        return True

    def _post_process(self, state: TrackerState, output: FrameOutput,
                      frame_shape: Tuple[int, int]) -> Tuple[BBox, int, float]:
        """Scale/ratio penalty, cosine window and size smoothing; returns (box, best index, s_i)"""
        cfg = self.cfg
        scale = self.model_cfg.instance_size / output.crop_side
        scores = output.scores
        boxes = output.boxes
        target_w, target_h = state.size[0] * scale, state.size[1] * scale

        def change(ratio: torch.Tensor) -> torch.Tensor:
            return torch.maximum(ratio, 1.0 / ratio)

        def padded(w, h):
            pad = (w + h) * 0.5
            return torch.sqrt((w + pad) * (h + pad)) if isinstance(w, torch.Tensor) \
                else math.sqrt((w + pad) * (h + pad))

        scale_change = change(padded(boxes[:, 2], boxes[:, 3]) / padded(target_w, target_h))
        ratio_change = change((target_w / target_h) / (boxes[:, 2] / boxes[:, 3]))
        penalty = torch.exp(-(ratio_change * scale_change - 1) * cfg.penalty_k)
        pscore = penalty * scores
        pscore = pscore * (1 - cfg.window_influence) + self.window.to(pscore.dtype) * cfg.window_influence
        best = int(torch.argmax(pscore))

        proposal = BBox(*boxes[best].tolist())
        in_image = box_from_crop(proposal, output.crop_center, output.crop_side, self.model_cfg.instance_size)
        lr = float(penalty[best] * scores[best]) * cfg.lr
        width = state.size[0] * (1 - lr) + in_image.w * lr
        height = state.size[1] * (1 - lr) + in_image.h * lr
        cx, cy = in_image.center

        frame_h, frame_w = frame_shape
        cx = min(max(cx, 0.0), float(frame_w))
        cy = min(max(cy, 0.0), float(frame_h))
        width = min(max(width, cfg.min_size), float(frame_w))
        height = min(max(height, cfg.min_size), float(frame_h))

        state.center = (cx, cy)
        state.size = (width, height)
        return BBox.from_center(cx, cy, width, height), best, float(scores[best])

    def _candidate_dump(self, output: FrameOutput) -> List[Tuple[BBox, float]]:
        """Top-N proposals by post-softmax score, in image coordinates"""
        if self.cfg.candidate_dump <= 0:
            return []
        count = min(self.cfg.candidate_dump, output.scores.numel())
        top = torch.topk(output.scores, count)
        dump = []
        for score, index in zip(top.values.tolist(), top.indices.tolist()):
            proposal = BBox(*output.boxes[index].tolist())
            dump.append((box_from_crop(proposal, output.crop_center, output.crop_side,
                                       self.model_cfg.instance_size), float(score)))
        return dump

    def track_sequence(self, sequence: Sequence) -> List[FrameRecord]:
        """One-pass run: initialise on frame 0 and track to the end"""
        state = self.init(sequence.frame(0), sequence.gt[0])
        for index in range(1, len(sequence)):
            self.track_frame(state, sequence.frame(index))
        logger.debug(f"Tracked {sequence.id}: {len(sequence)} frame(s), {state.updates} update(s)")
        return state.history


def write_trajectory(records: List[FrameRecord], path: Path, with_candidates: bool = True) -> Path:
    """JSON lines, one record per frame"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record.to_json(with_candidates)) + '\n')
    return path


def read_trajectory(path: Path) -> List[FrameRecord]:
    with open(path, 'r', encoding='utf-8') as f:
        return [FrameRecord.from_json(json.loads(line)) for line in f if line.strip()]
