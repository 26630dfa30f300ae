"""
Synthetic redundant-video dataset.

Every clip shows one small solid sprite over a static per-clip background
texture. The class is the sprite's motion pattern and nothing else, so most of
every clip is background that carries no label information.
"""
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import Dict, Tuple

import numpy as np

from ..errors import SpecError

logger = logging.getLogger(__name__)

MOTIONS = ('translate_left', 'translate_right', 'translate_up', 'translate_down',
           'orbit_cw', 'orbit_ccw', 'grow', 'shrink')
BINARY_CLASSES = ('static', 'moving')
MAX_FOREGROUND = 0.15
MIN_SCALE = 0.5          # grow/shrink start or end at this fraction of the sprite side
TEXTURE_CELL = 4


@dataclass(frozen=True)
class SyntheticVideoSpec:
    frames: int = 8
    height: int = 32
    width: int = 32
    channels: int = 3
    num_classes: int = 8
    sprite_fraction: float = 0.1
    noise_sigma: float = 0.05
    train_size: int = 256
    val_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.num_classes <= len(MOTIONS):
            raise SpecError(f"num_classes must lie in 2..{len(MOTIONS)}, got {self.num_classes}")
        if self.frames < 2:
            raise SpecError(f"motion needs at least 2 frames, got {self.frames}")
        if not 0.0 < self.sprite_fraction < MAX_FOREGROUND:
            raise SpecError(f"sprite_fraction must lie in (0, {MAX_FOREGROUND}), got {self.sprite_fraction}")
        if self.noise_sigma < 0:
            raise SpecError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        side = self.sprite_side
        if side < 2 or side + 4 > min(self.height, self.width):
            raise SpecError(f"a {side}px sprite does not fit a {self.height}x{self.width} frame with room to move")
        for size in (self.train_size, self.val_size):
            if size % self.num_classes:
                raise SpecError(f"split size {size} is not a multiple of {self.num_classes} classes")

    @property
    def sprite_side(self) -> int:
        return int(round(np.sqrt(self.sprite_fraction * self.height * self.width)))

    @property
    def class_names(self) -> Tuple[str, ...]:
        return BINARY_CLASSES if self.num_classes == 2 else MOTIONS[:self.num_classes]

    @property
    def clip_shape(self) -> Tuple[int, int, int, int]:
        return self.frames, self.height, self.width, self.channels

    @classmethod
    def from_dict(cls, doc: dict, seed: int = 0) -> 'SyntheticVideoSpec':
        return cls(seed=seed, **doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Split:
    videos: np.ndarray          # (n, frames, height, width, channels) float64
    labels: np.ndarray          # (n,) int64
    foreground: np.ndarray      # (n, frames, height, width) bool

    def __len__(self) -> int:
        return self.labels.shape[0]


def _trajectory(motion: str, spec: SyntheticVideoSpec, rng: np.random.Generator):
    """Per-frame sprite centre (y, x) and side length."""
    f, side = spec.frames, spec.sprite_side
    lo, hi = side / 2.0 + 1, min(spec.height, spec.width) - side / 2.0 - 1
    t = np.linspace(0.0, 1.0, f)
    sides = np.full(f, side, dtype=np.int64)
    if motion == 'static':
        cy, cx = rng.uniform(lo, hi, size=2)
        return np.full(f, cy), np.full(f, cx), sides
    if motion.startswith('translate'):
        travel = rng.uniform(0.5, 1.0) * (hi - lo)
        start = rng.uniform(lo, hi - travel)
        along = start + travel * t
        across = np.full(f, rng.uniform(lo, hi))
        if motion in ('translate_left', 'translate_up'):
            along = along[::-1]
        return (across, along, sides) if motion in ('translate_left', 'translate_right') else (along, across, sides)
    if motion.startswith('orbit'):
        radius = rng.uniform(0.5, 1.0) * (hi - lo) / 2.0
        cy, cx = rng.uniform(lo + radius, hi - radius, size=2)
        phase = rng.uniform(0.0, 2 * np.pi)
        # image rows grow downwards, so a positive angular step turns clockwise on screen
        direction = 1.0 if motion == 'orbit_cw' else -1.0
        angle = phase + direction * 1.5 * np.pi * t
        return cy + radius * np.sin(angle), cx + radius * np.cos(angle), sides
    cy, cx = rng.uniform(lo, hi, size=2)
    scale = MIN_SCALE + (1.0 - MIN_SCALE) * (t if motion == 'grow' else t[::-1])
    return np.full(f, cy), np.full(f, cx), np.maximum(1, np.round(side * scale)).astype(np.int64)


def _background(spec: SyntheticVideoSpec, rng: np.random.Generator) -> np.ndarray:
    cells = (-(-spec.height // TEXTURE_CELL), -(-spec.width // TEXTURE_CELL), spec.channels)
    coarse = rng.uniform(0.0, 0.5, size=cells)
    texture = np.kron(coarse, np.ones((TEXTURE_CELL, TEXTURE_CELL, 1)))
    return texture[:spec.height, :spec.width]


def render_clip(spec: SyntheticVideoSpec, label: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """One clip of class ``label`` and its foreground mask."""
    name = spec.class_names[label]
    if name == 'moving':
        name = MOTIONS[int(rng.integers(0, 4))]
    ys, xs, sides = _trajectory(name, spec, rng)
    background = _background(spec, rng)
    colour = rng.uniform(0.7, 1.0, size=spec.channels)
    video = np.repeat(background[None], spec.frames, axis=0)
    mask = np.zeros(spec.clip_shape[:3], dtype=bool)
    for i in range(spec.frames):
        s = int(sides[i])
        top = int(np.clip(np.round(ys[i] - s / 2.0), 0, spec.height - s))
        left = int(np.clip(np.round(xs[i] - s / 2.0), 0, spec.width - s))
        video[i, top:top + s, left:left + s] = colour
        mask[i, top:top + s, left:left + s] = True
    if spec.noise_sigma > 0:
        video = video + rng.normal(0.0, spec.noise_sigma, size=video.shape)
    return video, mask


def generate_split(spec: SyntheticVideoSpec, split: str, size: int) -> Split:
    split_id = 0 if split == 'train' else 1
    labels = np.arange(size, dtype=np.int64) % spec.num_classes
    videos = np.empty((size,) + spec.clip_shape)
    foreground = np.empty((size,) + spec.clip_shape[:3], dtype=bool)
    for i in range(size):
        rng = np.random.default_rng([spec.seed, split_id, i])
        videos[i], foreground[i] = render_clip(spec, int(labels[i]), rng)
    return Split(videos, labels, foreground)


def generate_dataset(spec: SyntheticVideoSpec) -> Dict[str, Split]:
    """Balanced train/val splits; each clip depends only on (seed, split, index)."""
    splits = {'train': generate_split(spec, 'train', spec.train_size),
              'val': generate_split(spec, 'val', spec.val_size)}
    fg = max(float(s.foreground.mean(axis=(1, 2, 3)).max()) for s in splits.values())
    logger.info(f"Generated {spec.train_size}+{spec.val_size} clips of {spec.clip_shape}, "
                f"{spec.num_classes} classes, max foreground {100 * fg:.1f}%")
    return splits


def _digest(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def save_dataset(spec: SyntheticVideoSpec, splits: Dict[str, Split], out_dir: str) -> str:
    """Write ``<split>_videos.npy``/``<split>_labels.npy`` and a manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {'spec': spec.to_dict(), 'classes': list(spec.class_names), 'arrays': {}}
    for name, split in splits.items():
        for kind, arr in (('videos', split.videos), ('labels', split.labels)):
            filename = f"{name}_{kind}.npy"
            np.save(os.path.join(out_dir, filename), arr)
            manifest['arrays'][filename] = {'shape': list(arr.shape), 'sha256': _digest(arr)}
    path = os.path.join(out_dir, 'manifest.json')
    with open(path, 'w') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write('\n')
    logger.info(f"Dataset written to {out_dir}")
    return path


def load_split(out_dir: str, split: str) -> Tuple[np.ndarray, np.ndarray]:
    return (np.load(os.path.join(out_dir, f"{split}_videos.npy")),
            np.load(os.path.join(out_dir, f"{split}_labels.npy")))
