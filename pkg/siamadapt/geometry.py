"""
Geometry
Boxes, anchor grids, overlap computation, label assignment and box coding
"""

import math
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch

from siamadapt.config import BackboneConfig
from siamadapt.utils.errors import ConfigurationError, IngestionError, ValidationError
from siamadapt.utils.validators import Validator, require

POS = 1
NEG = 0
IGNORE = -1

_COMMA_SPLIT = re.compile(r'\s*,\s*')
_ANY_SPLIT = re.compile(r'[,\s]+')


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box stored as (left, top, width, height) in pixels"""
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        values = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise ValidationError(f"Box coordinates must be finite, got {values}", field='bbox')
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"Box width and height must be positive, got {values}", field='bbox')

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> 'BBox':
        return cls(float(cx - w / 2), float(cy - h / 2), float(w), float(h))

    @classmethod
    def parse(cls, line: str, allow_whitespace: bool = False) -> 'BBox':
        """
        Parse an OTB ground-truth line `x,y,w,h`

        Args:
            line: Text line
            allow_whitespace: Also accept tab/space separated values

        Raises:
            IngestionError: If the line does not hold four numbers forming a valid box
        """
        text = line.strip()
        parts = _ANY_SPLIT.split(text) if allow_whitespace else _COMMA_SPLIT.split(text)
        if len(parts) != 4:
            raise IngestionError(f"expected 4 comma-separated values, got {text!r}")
        try:
            return cls(*(float(part) for part in parts))
        except ValueError:
            raise IngestionError(f"non-numeric box values in {text!r}")
        except ValidationError as e:
            raise IngestionError(e.message)

    @property
    def center(self) -> Tuple[float, float]:
        return self.x + self.w / 2, self.y + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_list(self) -> List[float]:
        return [self.x, self.y, self.w, self.h]

    def to_line(self) -> str:
        return ','.join(f'{v:.3f}' for v in self.to_list())


@dataclass(frozen=True)
class AnchorGrid:
    """
    w x h x k anchors in search-region pixel coordinates

    Index order is anchor-major: index = a * (w * h) + y * w + x.
    """
    width: int
    height: int
    anchors_per_cell: int
    stride: float
    xywh: torch.Tensor

    def __len__(self) -> int:
        return self.xywh.shape[0]

    @property
    def boxes(self) -> List[BBox]:
        return [BBox(*row) for row in self.xywh.tolist()]

    @property
    def centers(self) -> torch.Tensor:
        """Anchors in centre form (cx, cy, w, h)"""
        x, y, w, h = self.xywh.unbind(-1)
        return torch.stack([x + w / 2, y + h / 2, w, h], dim=-1)

    def cell_of(self, index: int) -> Tuple[int, int, int]:
        """(anchor, row, col) of a flat anchor index"""
        cells = self.width * self.height
        anchor, rest = divmod(index, cells)
        row, col = divmod(rest, self.width)
        return anchor, row, col


@dataclass(frozen=True)
class LabelMap:
    """Per-anchor POS / NEG / IGNORE labels"""
    labels: torch.Tensor

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def pos_count(self) -> int:
        return int((self.labels == POS).sum())

    @property
    def neg_count(self) -> int:
        return int((self.labels == NEG).sum())

    @property
    def positive_indices(self) -> torch.Tensor:
        return torch.nonzero(self.labels == POS, as_tuple=False).flatten()

    @property
    def negative_indices(self) -> torch.Tensor:
        return torch.nonzero(self.labels == NEG, as_tuple=False).flatten()

    def restricted_to(self, indices: torch.Tensor) -> 'LabelMap':
        """Copy keeping labels only at the given indices, IGNORE elsewhere"""
        restricted = torch.full_like(self.labels, IGNORE)
        restricted[indices] = self.labels[indices]
        return LabelMap(restricted)


# ==================== OVERLAP ====================

def iou(a: BBox, b: BBox) -> float:
    """Intersection over union on continuous coordinates"""
    left = max(a.x, b.x)
    top = max(a.y, b.y)
    right = min(a.x + a.w, b.x + b.w)
    bottom = min(a.y + a.h, b.y + b.h)
    inter = max(0.0, right - left) * max(0.0, bottom - top)
    union = a.area + b.area - inter
    return min(1.0, max(0.0, inter / union))


def iou_many(xywh: torch.Tensor, box: BBox) -> torch.Tensor:
    """IoU of every row of an (N, 4) xywh tensor against one box"""
    x, y, w, h = xywh.unbind(-1)
    left = torch.clamp(x, min=box.x)
    top = torch.clamp(y, min=box.y)
    right = torch.clamp(x + w, max=box.x + box.w)
    bottom = torch.clamp(y + h, max=box.y + box.h)
    inter = (right - left).clamp(min=0) * (bottom - top).clamp(min=0)
    union = w * h + box.area - inter
    return (inter / union).clamp(0.0, 1.0)


def center_distance(a: BBox, b: BBox) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return math.hypot(ax - bx, ay - by)


# ==================== ANCHORS AND LABELS ====================

def generate_anchors(w: int, h: int, k: int, stride: float, scales: Sequence[float],
                     ratios: Sequence[float], center: Tuple[float, float] = (0.0, 0.0),
                     dtype: torch.dtype = torch.float32) -> AnchorGrid:
    """
    Build a w x h x k anchor grid centred on `center`

    Each base anchor has area (stride * scale)^2 and aspect h/w = ratio. The centre of
    cell (col, row) is center + ((col - (w-1)/2) * stride, (row - (h-1)/2) * stride).

    Raises:
        ConfigurationError: If len(scales) * len(ratios) != k
    """
    if len(scales) * len(ratios) != k:
        raise ConfigurationError(
            f"anchors_per_cell={k} but {len(scales)} scale(s) x {len(ratios)} ratio(s) were given"
        )
    if w <= 0 or h <= 0 or stride <= 0:
        raise ConfigurationError(f"anchor grid needs positive size and stride, got {w}x{h}, {stride}")

    base = []
    for ratio in ratios:
        base_w = stride / math.sqrt(ratio)
        base_h = base_w * ratio
        for scale in scales:
            base.append((base_w * scale, base_h * scale))
    sizes = torch.tensor(base, dtype=dtype)

    cols = (torch.arange(w, dtype=dtype) - (w - 1) / 2) * stride + center[0]
    rows = (torch.arange(h, dtype=dtype) - (h - 1) / 2) * stride + center[1]
    cy, cx = torch.meshgrid(rows, cols, indexing='ij')
    cx = cx.reshape(1, -1).expand(k, -1)
    cy = cy.reshape(1, -1).expand(k, -1)
    aw = sizes[:, 0:1].expand(-1, w * h)
    ah = sizes[:, 1:2].expand(-1, w * h)
    xywh = torch.stack([cx - aw / 2, cy - ah / 2, aw, ah], dim=-1).reshape(-1, 4)
    return AnchorGrid(width=w, height=h, anchors_per_cell=k, stride=float(stride), xywh=xywh.contiguous())


def assign_labels(anchors: AnchorGrid, gt: BBox, neg_thr: float = 0.3,
                  pos_thr: float = 0.6) -> LabelMap:
    """
    Label anchors against a ground-truth box

    POS iff IoU > pos_thr, NEG iff IoU < neg_thr, IGNORE otherwise.
    """
    require(Validator.validate_threshold_pair(neg_thr, pos_thr), 'thresholds')
    overlaps = iou_many(anchors.xywh, gt)
    labels = torch.full((len(anchors),), IGNORE, dtype=torch.int8)
    labels[overlaps < neg_thr] = NEG
    labels[overlaps > pos_thr] = POS
    return LabelMap(labels)


def select_samples(labels: LabelMap, total: int = 64, max_pos: int = 16,
                   generator: Optional[torch.Generator] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Random base sample selection: at most `max_pos` positives, negatives fill up to `total`

    Returns:
        (positive indices, negative indices), each sorted ascending
    """
    pos = labels.positive_indices
    neg = labels.negative_indices
    if pos.numel() > max_pos:
        pos = pos[torch.randperm(pos.numel(), generator=generator)[:max_pos]]
    neg_keep = total - pos.numel()
    if neg.numel() > neg_keep:
        neg = neg[torch.randperm(neg.numel(), generator=generator)[:neg_keep]]
    return pos.sort().values, neg.sort().values


# ==================== BOX CODING ====================

def encode_boxes(anchors: AnchorGrid, gt: BBox) -> torch.Tensor:
    """Regression targets (dx, dy, dw, dh) of a box relative to every anchor"""
    acx, acy, aw, ah = anchors.centers.unbind(-1)
    gcx, gcy = gt.center
    return torch.stack([
        (gcx - acx) / aw,
        (gcy - acy) / ah,
        torch.log(gt.w / aw),
        torch.log(gt.h / ah),
    ], dim=-1)


def decode_boxes(anchors: AnchorGrid, deltas: torch.Tensor) -> torch.Tensor:
    """Inverse of encode_boxes; returns (N, 4) xywh boxes"""
    acx, acy, aw, ah = anchors.centers.to(deltas.dtype).unbind(-1)
    dx, dy, dw, dh = deltas.unbind(-1)
    cx = dx * aw + acx
    cy = dy * ah + acy
    w = torch.exp(dw) * aw
    h = torch.exp(dh) * ah
    return torch.stack([cx - w / 2, cy - h / 2, w, h], dim=-1)


def anchor_grid_for(model: BackboneConfig) -> AnchorGrid:
    """Anchor grid of a model config, centred on its search crop"""
    half = model.instance_size / 2
    return generate_anchors(model.map_size, model.map_size, model.anchors_per_cell, model.stride,
                            model.anchor_scales, model.anchor_ratios, center=(half, half))
