"""
Neighbor grouping: rank tokens inside each window by score and pool K
contiguous rank groups per prototype instead of thresholding.
"""
from typing import Tuple

import numpy as np

from ..core import ops
from ..core.tensor import DArray
from .config import SPMConfig
from .pooling import rank_window
from .types import ScoreMap, TokenGrid, WindowPartition
from .windows import gather_scores


def rank_members(scores: ScoreMap, part: WindowPartition, groups: int) -> np.ndarray:
    """
    (M, N_win, K, G) token ids: per (prototype, window) sorted by score
    descending, ties to the lower token id, split into K groups of G.
    """
    ids = rank_window(scores, part)
    return ids.reshape(ids.shape[:2] + (groups, part.per_window // groups))


def pool_neighbor_groups(x: TokenGrid, scores: ScoreMap, part: WindowPartition,
                         cfg: SPMConfig) -> Tuple[DArray, np.ndarray, np.ndarray]:
    """
    Returns (N_win * M * K, C) supertokens ordered window, prototype, group;
    the (M, N_win, K, G) weights; and the matching token ids.
    """
    cfg.plan_windows(x.n, x.grid)
    m, k = scores.num_prototypes, cfg.groups
    members = rank_members(scores, part, k)
    g = members.shape[-1]
    s_g = gather_scores(scores.raw, members)                               # (M, N_win, K, G)
    weights = ops.softmax(s_g, axis=-1)
    x_g = ops.take(x.tokens, members.transpose(1, 0, 2, 3))                # (N_win, M, K, G, C)
    w_g = ops.reshape(ops.transpose(weights, (1, 0, 2, 3)), (part.n_windows, m, k, 1, g))
    z = ops.matmul(w_g, x_g)                                               # (N_win, M, K, 1, C)
    return ops.reshape(z, (part.n_windows * m * k, x.width)), weights.data, members
