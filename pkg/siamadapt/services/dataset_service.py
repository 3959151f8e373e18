"""
Dataset Service
OTB-layout ingestion, synthetic sequence generation and suite splitting
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence as Seq, Tuple, Union

import cv2
import numpy as np

from siamadapt.config import SynthConfig
from siamadapt.geometry import BBox
from siamadapt.utils.errors import IngestionError
from siamadapt.utils.image import read_frame, write_frame
from siamadapt.utils.validators import Validator, require

logger = logging.getLogger(__name__)

GT_FILE = 'groundtruth_rect.txt'
ATTRIBUTES_FILE = 'attributes.txt'
IMAGE_DIR = 'img'
FRAME_PATTERN = '{:04d}.jpg'
FRAME_SUFFIXES = ('.jpg', '.jpeg', '.png', '.bmp')

Frame = Union[Path, np.ndarray]


@dataclass
class Sequence:
    """Ordered frames with one ground-truth box each"""
    id: str
    frames: List[Frame]
    gt: List[BBox]
    attributes: Tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.frames) != len(self.gt):
            raise IngestionError(
                f"sequence {self.id!r} has {len(self.frames)} frame(s) but {len(self.gt)} ground-truth box(es)"
            )
        if not self.gt:
            raise IngestionError(f"sequence {self.id!r} is empty")

    def __len__(self) -> int:
        return len(self.frames)

    def frame(self, index: int) -> np.ndarray:
        item = self.frames[index]
        return read_frame(item) if isinstance(item, Path) else item


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic sequence"""
    seed: int
    length: int = 60
    canvas: int = 192
    target_size: float = 32.0
    distractors: int = 2
    shift_frame: Optional[int] = None
    noise: float = 6.0
    speed: float = 2.5

    def __post_init__(self):
        if self.length < 2:
            raise IngestionError(f"synthetic sequences need at least 2 frames, got {self.length}")


# ==================== OTB LAYOUT ====================

def parse_groundtruth(lines: Seq[str], allow_whitespace: bool = False) -> List[BBox]:
    """Parse ground-truth lines, reporting malformed ones by 1-based line number"""
    boxes = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            boxes.append(BBox.parse(line, allow_whitespace=allow_whitespace))
        except IngestionError as e:
            raise IngestionError(e.message, line=number)
    return boxes


def load_sequence(path: Path, allow_whitespace: bool = False) -> Sequence:
    """
    Load an OTB-layout sequence directory (img/ frames + groundtruth_rect.txt)

    Args:
        path: Sequence directory
        allow_whitespace: Accept tab/space separated ground-truth lines

    Raises:
        IngestionError: Missing files, malformed lines or a frame/box count mismatch
    """
    path = Path(path)
    gt_path = path / GT_FILE
    if not gt_path.exists():
        raise IngestionError(f"{gt_path} not found")
    image_dir = path / IMAGE_DIR
    frames = sorted(p for p in image_dir.iterdir() if p.suffix.lower() in FRAME_SUFFIXES) \
        if image_dir.is_dir() else []

    gt = parse_groundtruth(gt_path.read_text(encoding='utf-8').splitlines(), allow_whitespace)
    if len(frames) != len(gt):
        raise IngestionError(f"{path.name}: {len(frames)} frame(s) but {len(gt)} ground-truth line(s)")

    attributes: Tuple[str, ...] = ()
    attributes_path = path / ATTRIBUTES_FILE
    if attributes_path.exists():
        attributes = tuple(t for t in attributes_path.read_text(encoding='utf-8').split() if t)
    return Sequence(path.name, list(frames), gt, attributes)


def save_sequence(sequence: Sequence, root: Path) -> Path:
    """Write a sequence in OTB layout under root/<id>"""
    require(Validator.validate_sequence_id(sequence.id), 'sequence')
    target = Path(root) / sequence.id
    for index in range(len(sequence)):
        write_frame(target / IMAGE_DIR / FRAME_PATTERN.format(index + 1), sequence.frame(index))
    (target / GT_FILE).write_text(''.join(box.to_line() + '\n' for box in sequence.gt), encoding='utf-8')
    if sequence.attributes:
        (target / ATTRIBUTES_FILE).write_text(' '.join(sequence.attributes) + '\n', encoding='utf-8')
    logger.debug(f"Sequence {sequence.id} written to {target}")
    return target


def load_dataset(root: Path, allow_whitespace: bool = False) -> List[Sequence]:
    """Every sequence directory under root, ordered by id"""
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset directory {root} not found")
    sequences = [load_sequence(p, allow_whitespace) for p in sorted(root.iterdir()) if (p / GT_FILE).exists()]
    if not sequences:
        raise IngestionError(f"no OTB-layout sequences under {root}")
    logger.info(f"Loaded {len(sequences)} sequence(s) from {root}")
    return sequences


# ==================== SYNTHETIC SUITE ====================

def _texture(rng: np.random.Generator, width: int, height: int, palette: np.ndarray) -> np.ndarray:
    cells = palette[rng.integers(0, len(palette), size=(4, 4))]
    return cv2.resize(cells.astype(np.uint8), (width, height), interpolation=cv2.INTER_NEAREST)


def _trajectory(rng: np.random.Generator, length: int, canvas: int, size: Tuple[int, int],
                speed: float) -> np.ndarray:
    """Smooth bouncing path of top-left corners, shape (length, 2)"""
    width, height = size
    limits = np.array([canvas - width, canvas - height], dtype=np.float64)
    position = rng.uniform(0.2, 0.8, size=2) * limits
    angle = rng.uniform(0, 2 * math.pi)
    velocity = speed * np.array([math.cos(angle), math.sin(angle)])
    path = np.empty((length, 2))
    for index in range(length):
        path[index] = position
        velocity = velocity + rng.normal(0.0, 0.3 * speed, size=2) * 0.3
        norm = np.linalg.norm(velocity)
        if norm > 0:
            velocity = velocity / norm * speed
        position = position + velocity
        for axis in range(2):
            if position[axis] < 0 or position[axis] > limits[axis]:
                velocity[axis] = -velocity[axis]
                position[axis] = float(np.clip(position[axis], 0, limits[axis]))
    return np.rint(path).astype(np.int64)


def synth_generate(spec: SynthSpec, sequence_id: Optional[str] = None) -> Sequence:
    """
    Render a deterministic synthetic sequence

    A textured target moves smoothly over a static low-frequency background. Distractors are
    built from the same colour palette as the target. From `shift_frame` on the target takes a
    new texture.
    """
    rng = np.random.default_rng(spec.seed)
    canvas = spec.canvas
    background = cv2.resize(rng.integers(40, 215, size=(6, 6, 3)).astype(np.uint8), (canvas, canvas),
                            interpolation=cv2.INTER_CUBIC)

    aspect = rng.uniform(0.75, 1.33)
    width = max(4, int(round(spec.target_size * math.sqrt(aspect))))
    height = max(4, int(round(spec.target_size / math.sqrt(aspect))))
    palette = rng.integers(0, 256, size=(3, 3))
    target = _texture(rng, width, height, palette)
    shifted = _texture(rng, width, height, rng.integers(0, 256, size=(3, 3)))

    path = _trajectory(rng, spec.length, canvas, (width, height), spec.speed)
    distractor_paths = [_trajectory(rng, spec.length, canvas, (width, height), spec.speed)
                        for _ in range(spec.distractors)]
    distractor_textures = [_texture(rng, width, height, palette) for _ in range(spec.distractors)]

    frames, gt = [], []
    for index in range(spec.length):
        frame = background.copy()
        for texture, d_path in zip(distractor_textures, distractor_paths):
            x, y = d_path[index]
            frame[y:y + height, x:x + width] = texture
        x, y = path[index]
        use_shift = spec.shift_frame is not None and index >= spec.shift_frame
        frame[y:y + height, x:x + width] = shifted if use_shift else target
        if spec.noise > 0:
            noisy = frame.astype(np.float64) + rng.normal(0.0, spec.noise, size=frame.shape)
            frame = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)
        frames.append(frame)
        gt.append(BBox(float(x), float(y), float(width), float(height)))

    attributes = ['synthetic']
    if spec.distractors:
        attributes.append('distractors')
    if spec.shift_frame is not None:
        attributes.append('appearance_shift')
    return Sequence(sequence_id or f'synth_{spec.seed:06d}', frames, gt, tuple(attributes))


def synth_specs(cfg: SynthConfig, seed: int = 0, count: Optional[int] = None) -> List[SynthSpec]:
    """Per-sequence specs of a suite; the first round(shift_fraction * n) get an appearance shift"""
    count = cfg.suite_size if count is None else count
    shifted = int(round(cfg.shift_fraction * count))
    return [
        SynthSpec(
            seed=seed * 100003 + index,
            length=cfg.length,
            canvas=cfg.canvas,
            target_size=cfg.target_size,
            distractors=cfg.distractors,
            shift_frame=cfg.length // 2 if index < shifted else None,
            noise=cfg.noise,
            speed=cfg.speed,
        )
        for index in range(count)
    ]


def synth_suite(cfg: SynthConfig, seed: int = 0, count: Optional[int] = None) -> List[Sequence]:
    """Deterministic synthetic suite"""
    specs = synth_specs(cfg, seed, count)
    suite = [synth_generate(spec, f'synth_{index:03d}') for index, spec in enumerate(specs)]
    logger.info(f"[OK] Generated {len(suite)} synthetic sequence(s) (seed {seed})")
    return suite


def split_suite(sequences: Seq[Sequence], test_fraction: float = 0.2) -> Tuple[List[Sequence], List[Sequence]]:
    """(train, test): the last ceil(n * test_fraction) sequences are held out"""
    held_out = int(math.ceil(len(sequences) * test_fraction))
    cut = len(sequences) - held_out
    return list(sequences[:cut]), list(sequences[cut:])
