"""
Score heatmaps, pool membership images and token embedding dumps.

Images are binary 8-bit PGM written through Pillow. A token grid of shape
(T, H, W) renders either as one H x W image per frame-slice (heatmaps) or as
the T slices tiled left to right (membership images).
"""
import csv
import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

from ..core.module import Module
from ..errors import ArgumentError, ContractViolation
from ..models.config import BlockPlan
from ..models.vit import Recorder
from ..spm.config import NEIGHBOR
from ..spm.scoring import average_scores
from ..spm.types import SupertokenSet

logger = logging.getLogger(__name__)

SOFTMAX_TOLERANCE = 1e-9
EMBEDDING_KEYS = ['clip', 'class', 'layer', 'token']


@dataclass
class PoolMembershipImage:
    head: int
    prototype: int
    window: int
    pixels: np.ndarray          # (H, T * W) uint8
    path: Optional[str] = None


@dataclass
class TokenEmbedding:
    clip: int
    label: int
    layer: int
    token: int
    values: np.ndarray


def write_pgm(path: str, pixels: np.ndarray) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(path, format='PPM')


def normalize_heatmap(values: np.ndarray) -> np.ndarray:
    """Min-max to 0..255 over the whole clip; a constant map becomes mid-gray."""
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.full(values.shape, 128, dtype=np.uint8)
    return np.round(255.0 * (values - lo) / (hi - lo)).astype(np.uint8)


def _record(model: Module, clip: np.ndarray) -> Recorder:
    recorder = Recorder()
    model.forward(clip, recorder)
    return recorder


def _check_layer(model: Module, layer: int) -> None:
    depth = len(model.blocks)
    if not 1 <= layer <= depth:
        raise ArgumentError(f"layer {layer} is outside 1..{depth}")


def token_heatmap(model: Module, clip: np.ndarray, layer: int):
    """Per-token values and their grid: mean compressed score at an SPM, else mean received attention."""
    _check_layer(model, layer)
    recorder = _record(model, clip)
    if layer in recorder.pooling:
        heads = recorder.pooling[layer].heads
        return average_scores([hp.scores for hp in heads]), heads[0].scores.grid
    attention = recorder.attention.get(layer)
    if attention is None:
        raise ArgumentError(f"layer {layer} hosts neither semantic pooling nor attention")
    received = attention.mean(axis=(0, 1))
    plan = model.plan[layer - 1]
    grid = plan.grid_kv if isinstance(plan, BlockPlan) else recorder.tokens[layer - 1].grid
    if grid is None or int(np.prod(grid)) != received.size:
        raise ArgumentError(f"attention keys at layer {layer} carry no spatio-temporal grid")
    return received, grid


def export_score_heatmaps(model: Module, clip: np.ndarray, layer: int, out_dir: str,
                          prefix: str = 'clip') -> List[str]:
    """
    Write one grayscale image per frame-slice of the token grid.

    Args:
        model: ViT or MViT backbone.
        clip: (frames, height, width, channels) video.
        layer: 1-based block index hosting an SPM or attention.
        out_dir: Destination directory.
        prefix: File name prefix.

    Returns:
        The written paths, in frame order.
    """
    values, grid = token_heatmap(model, clip, layer)
    if grid is None:
        raise ArgumentError(f"tokens entering layer {layer} carry no spatio-temporal grid")
    pixels = normalize_heatmap(values).reshape(grid)
    paths = []
    for t in range(grid[0]):
        path = os.path.join(out_dir, f"{prefix}_layer{layer}_t{t:02d}.pgm")
        write_pgm(path, pixels[t])
        paths.append(path)
    logger.info(f"Wrote {len(paths)} heatmaps for layer {layer} to {out_dir}")
    return paths


def membership_pixels(weights: np.ndarray, active: np.ndarray, members: np.ndarray, n_tokens: int) -> np.ndarray:
    """(N,) pixel values of one pool: active tokens scale to ``max(1, round(255 w / max w))``, the rest 0."""
    out = np.zeros(n_tokens, dtype=np.uint8)
    on = active[members]
    if on.any():
        w = weights[on]
        out[members[on]] = np.maximum(1, np.round(255.0 * w / w.max())).astype(np.uint8)
    return out


def _tile(values: np.ndarray, grid) -> np.ndarray:
    t, h, w = grid
    return values.reshape(t, h, w).transpose(1, 0, 2).reshape(h, t * w)


def membership_images(pooled: SupertokenSet) -> List[PoolMembershipImage]:
    """One image per (head, prototype, window), after re-asserting the pooling laws."""
    images = []
    for h, hp in enumerate(pooled.heads):
        if hp.active is None:
            raise ArgumentError(f"membership images need the elitism variant, got '{NEIGHBOR}' pooling")
        grid = hp.scores.grid
        if grid is None:
            raise ArgumentError("membership images need tokens on a spatio-temporal grid")
        mask = hp.active.mask
        m, n_win, _ = hp.weights.shape
        for i in range(m):
            for w in range(n_win):
                weights, members = hp.weights[i, w], hp.members[i, w]
                total = float(weights.sum())
                if abs(total - 1.0) > SOFTMAX_TOLERANCE:
                    raise ContractViolation(f"head {h} pool ({i}, {w}) weights sum to {total!r}")
                pixels = membership_pixels(weights, mask[i], members, mask.shape[1])
                if hp.active.fallback_applied[i, w] and not pixels[members].all():
                    raise ContractViolation(f"head {h} pool ({i}, {w}) fell back but left tokens inactive")
                images.append(PoolMembershipImage(h, i, w, _tile(pixels, grid)))
    return images


def export_pool_membership(model: Module, clip: np.ndarray, layer: int, out_dir: Optional[str] = None,
                           prefix: str = 'clip') -> List[PoolMembershipImage]:
    _check_layer(model, layer)
    recorder = _record(model, clip)
    if layer not in recorder.pooling:
        raise ArgumentError(f"layer {layer} hosts no semantic pooling")
    images = membership_images(recorder.pooling[layer])
    if out_dir is not None:
        for img in images:
            img.path = os.path.join(out_dir, f"{prefix}_layer{layer}_h{img.head}_p{img.prototype:03d}"
                                             f"_w{img.window:03d}.pgm")
            write_pgm(img.path, img.pixels)
        logger.info(f"Wrote {len(images)} membership images for layer {layer} to {out_dir}")
    return images


def export_token_embeddings(model: Module, clips: np.ndarray, labels: Sequence[int],
                            layers: Sequence[int], path: str) -> int:
    """
    Dump the tokens leaving each of ``layers`` (0 is the embedding) for every clip.

    Rows are ``clip, class, layer, token`` followed by that layer's channels
    with 17 significant digits. Returns the number of rows written.
    """
    depth = len(model.blocks)
    bad = [layer for layer in layers if not 0 <= layer <= depth]
    if bad:
        raise ArgumentError(f"layers {bad} are outside 0..{depth}")
    rows = []
    for c, (clip, label) in enumerate(zip(clips, labels)):
        recorder = _record(model, clip)
        for layer in layers:
            tokens = recorder.tokens[layer].tokens.data
            for j, vec in enumerate(tokens):
                rows.append([c, int(label), layer, j] + [format(v, '.17g') for v in vec])
    width = max((len(r) for r in rows), default=len(EMBEDDING_KEYS)) - len(EMBEDDING_KEYS)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(EMBEDDING_KEYS + [f'e{i}' for i in range(width)])
        writer.writerows(rows)
    logger.info(f"Wrote {len(rows)} token embeddings to {path}")
    return len(rows)


def load_token_embeddings(path: str) -> List[TokenEmbedding]:
    with open(path, 'r', newline='') as f:
        reader = csv.reader(f)
        next(reader)
        return [TokenEmbedding(int(r[0]), int(r[1]), int(r[2]), int(r[3]),
                               np.array([float(v) for v in r[4:] if v != ''], dtype=np.float64))
                for r in reader]
