"""
Window partition of the token grid.

Windows are enumerated row-major over the window grid (N_t, N_h, N_w) and the
tokens inside a window row-major over (T_w, H_w, W_w), so token ids inside a
window are increasing.
"""
from typing import Optional, Sequence

import numpy as np

from ..core import ops
from ..core.tensor import DArray
from ..errors import ConfigError, ShapeError
from .config import SPMConfig
from .types import ScoreMap, TokenGrid, WindowedViews, WindowPartition


def make_partition(n_tokens: int, grid: Optional[Sequence[int]], cfg: SPMConfig) -> WindowPartition:
    plan = cfg.plan_windows(n_tokens, grid)
    if grid is None:
        return WindowPartition(np.arange(n_tokens).reshape(1, n_tokens), None, None)
    return grid_partition(grid, plan.window)


def grid_partition(grid: Sequence[int], window: Optional[Sequence[int]] = None) -> WindowPartition:
    """Split a (T, H, W) grid into windows; None means one window covering the grid."""
    grid = tuple(int(g) for g in grid)
    window = grid if window is None else tuple(int(w) for w in window)
    if any(g % w for g, w in zip(grid, window)):
        raise ConfigError(f"window {window} does not divide grid {grid}")
    wt, wh, ww = window
    nt, nh, nw = (g // w for g, w in zip(grid, window))
    ids = np.arange(int(np.prod(grid))).reshape(nt, wt, nh, wh, nw, ww)
    ids = ids.transpose(0, 2, 4, 1, 3, 5).reshape(nt * nh * nw, wt * wh * ww)
    return WindowPartition(np.ascontiguousarray(ids), window, (nt, nh, nw))


def window_partition(x: TokenGrid, scores: ScoreMap, cfg: SPMConfig) -> WindowedViews:
    """Windowed views: tokens (N_win, P, C) and scores (M, N_win, P)."""
    if scores.raw.shape[1] != x.n:
        raise ShapeError(f"score map {scores.raw.shape} does not cover {x.n} tokens")
    part = make_partition(x.n, x.grid, cfg)
    tokens = ops.take(x.tokens, part.index)
    return WindowedViews(part, tokens, gather_scores(scores.raw, part.index[None, :, :]))


def gather_scores(raw: DArray, token_ids: np.ndarray) -> DArray:
    """
    Pick s_ij for every prototype i from an (M, N) score map.

    ``token_ids`` has shape (M, ...): row i holds token ids read under prototype i.
    A leading extent of 1 is broadcast across prototypes.
    """
    m, n = raw.shape
    token_ids = np.broadcast_to(token_ids, (m,) + token_ids.shape[1:])
    flat = token_ids + (np.arange(m) * n).reshape((m,) + (1,) * (token_ids.ndim - 1))
    return ops.take(ops.reshape(raw, (m * n,)), flat, name='gather_scores')


def unpartition(windowed: DArray, part: WindowPartition) -> DArray:
    """Inverse of the token view: (N_win, P, C) back to (N, C) in source order."""
    n_win, per, c = windowed.shape
    flat = ops.reshape(windowed, (n_win * per, c))
    return ops.take(flat, part.inverse())
