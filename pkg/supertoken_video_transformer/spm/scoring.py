"""
Prototype scoring, the elitism gate and top-N_k retention.
"""
import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from ..core import ops
from ..core.tensor import DArray
from ..errors import ConfigError
from .config import SPMConfig
from .types import ActiveMask, ScoreMap, TokenGrid, WindowPartition
from .windows import make_partition

logger = logging.getLogger(__name__)


def compute_scores(x: TokenGrid, prototypes: DArray) -> ScoreMap:
    """S = E X^T, so S[i, j] = x_j . e_i; compressed = sigmoid(S)."""
    if prototypes.ndim != 2 or prototypes.shape[1] != x.width:
        raise ConfigError(f"prototypes {prototypes.shape} do not match token width {x.width}")
    raw = ops.matmul(prototypes, ops.transpose(x.tokens))
    return ScoreMap(raw, expit(raw.data), x.grid)


def elitism_filter(scores: ScoreMap, cfg: SPMConfig,
                   partition: Optional[WindowPartition] = None) -> ActiveMask:
    """
    Keep token j in prototype i's pool iff sigmoid(s_ij) > theta.

    A (prototype, window) slice with no survivor gets every token switched on.
    With ``cfg.adopt_orphans`` a token surviving under no prototype is then
    switched on under its highest raw-score prototype (lowest index on ties).
    """
    m, n = scores.raw.shape
    part = partition or make_partition(n, scores.grid, cfg)
    passed = scores.compressed > cfg.theta
    windowed = passed[:, part.index]                       # (M, N_win, P)
    fallback = ~windowed.any(axis=-1)                      # (M, N_win)
    mask = passed.copy()
    if fallback.any():
        rows, wins = np.nonzero(fallback)
        mask[rows[:, None], part.index[wins]] = True
        logger.debug(f"Elitism fallback on {rows.size} of {fallback.size} (prototype, window) slices")
    adopted = np.zeros_like(mask)
    if cfg.adopt_orphans:
        orphans = ~mask.any(axis=0)
        if orphans.any():
            cols = np.nonzero(orphans)[0]
            best = np.argmax(scores.raw.data[:, cols], axis=0)
            adopted[best, cols] = True
            mask |= adopted
    return ActiveMask(mask, passed, fallback, adopted)


def average_scores(scores: Union[ScoreMap, Sequence[ScoreMap]]) -> np.ndarray:
    """Per-token mean of compressed scores over prototypes (and heads)."""
    maps = [scores] if isinstance(scores, ScoreMap) else list(scores)
    return np.concatenate([s.compressed for s in maps], axis=0).mean(axis=0)


def keep_top_k(x: TokenGrid, scores: Union[ScoreMap, Sequence[ScoreMap]],
               cfg: SPMConfig) -> Tuple[Optional[DArray], np.ndarray]:
    """
    Retain the N_k tokens with the highest average compressed score.

    Returns the kept tokens in their original relative order (None when
    N_k = 0) and their source positions.
    """
    if cfg.keep > x.n:
        raise ConfigError(f"cannot keep {cfg.keep} of {x.n} tokens")
    if cfg.keep == 0:
        return None, np.zeros(0, dtype=np.int64)
    indices = np.sort(ops.topk_indices(average_scores(scores), cfg.keep))
    return ops.take(x.tokens, indices, name='keep_top_k'), indices
