"""
Image Utilities
Context-padded square crops, tensor conversion and frame I/O
"""

import math
from pathlib import Path
from typing import Tuple

import cv2
import numpy as np
import torch

from siamadapt.geometry import BBox
from siamadapt.utils.errors import IngestionError


def context_size(w: float, h: float, context_amount: float = 0.5) -> float:
    """Side of the square exemplar region around a w x h target"""
    pad = context_amount * (w + h)
    return math.sqrt((w + pad) * (h + pad))


def crop_square(frame: np.ndarray, center: Tuple[float, float], side: float, out_size: int) -> np.ndarray:
    """
    Crop a `side` x `side` square centred at `center` and resample it to `out_size`

    Areas outside the frame are filled with the frame's mean colour.
    """
    scale = out_size / side
    cx, cy = center
    matrix = np.array([
        [scale, 0.0, -scale * (cx - side / 2)],
        [0.0, scale, -scale * (cy - side / 2)],
    ], dtype=np.float64)
    fill = tuple(float(v) for v in frame.reshape(-1, frame.shape[-1]).mean(axis=0))
    return cv2.warpAffine(frame, matrix, (out_size, out_size), flags=cv2.INTER_LINEAR,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=fill)


def to_tensor(patch: np.ndarray) -> torch.Tensor:
    """HWC uint8 patch -> (1, 3, H, W) float tensor centred on zero"""
    chw = patch.astype(np.float32).transpose(2, 0, 1) / 255.0 - 0.5
    return torch.from_numpy(np.ascontiguousarray(chw)).unsqueeze(0)


def box_in_crop(box: BBox, center: Tuple[float, float], side: float, out_size: int) -> BBox:
    """Map an image-space box into the coordinates of a crop centred at `center`"""
    scale = out_size / side
    cx, cy = box.center
    return BBox.from_center(
        (cx - center[0]) * scale + out_size / 2,
        (cy - center[1]) * scale + out_size / 2,
        box.w * scale,
        box.h * scale,
    )


def box_from_crop(box: BBox, center: Tuple[float, float], side: float, out_size: int) -> BBox:
    """Inverse of box_in_crop"""
    scale = side / out_size
    cx, cy = box.center
    return BBox.from_center(
        (cx - out_size / 2) * scale + center[0],
        (cy - out_size / 2) * scale + center[1],
        box.w * scale,
        box.h * scale,
    )


def read_frame(path: Path) -> np.ndarray:
    """Read an RGB frame"""
    image = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if image is None:
        raise IngestionError(f"cannot read frame {path}")
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB)


def write_frame(path: Path, frame: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    params = [cv2.IMWRITE_JPEG_QUALITY, 95] if path.suffix.lower() in ('.jpg', '.jpeg') else []
    if not cv2.imwrite(str(path), cv2.cvtColor(frame, cv2.COLOR_RGB2BGR), params):
        raise IngestionError(f"cannot write frame {path}")
