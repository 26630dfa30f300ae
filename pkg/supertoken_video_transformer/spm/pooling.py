"""
Window-axis softmax pooling of active tokens into supertokens.
"""
from typing import Optional, Tuple

import numpy as np

from ..core import ops
from ..core.tensor import DArray
from ..errors import ContractViolation, ShapeError
from .config import SPMConfig
from .types import (ActiveMask, HeadPooling, ScoreMap, SupertokenLayout, SupertokenSet, TokenGrid,
                    WindowPartition)
from .windows import gather_scores, make_partition


def rank_window(scores: ScoreMap, part: WindowPartition) -> np.ndarray:
    """(M, N_win, P) token ids of every window sorted by score descending, ties to the lower id."""
    s_w = scores.raw.data[:, part.index]
    order = np.argsort(-s_w, axis=-1, kind='stable')
    return np.take_along_axis(np.broadcast_to(part.index, s_w.shape), order, axis=-1)


def pool_windows(x: TokenGrid, scores: ScoreMap, active: ActiveMask,
                 part: WindowPartition) -> Tuple[DArray, np.ndarray, np.ndarray]:
    """
    Z[w, i] = sum_j softmax over active j of s_ij times x_j, per window w.

    Each pool is summed in score order, so permuting tokens inside a window
    leaves the supertokens bit-identical on tie-free scores.

    Returns the (N_win * M, C) supertokens, window-major then prototype, the
    (M, N_win, P) pooling weights and the token ids they belong to.
    """
    m = scores.num_prototypes
    if active.mask.shape != scores.raw.shape:
        raise ShapeError(f"active mask {active.mask.shape} does not match scores {scores.raw.shape}")
    members = rank_window(scores, part)                                    # (M, N_win, P)
    mask_w = np.take_along_axis(active.mask, members.reshape(m, -1), axis=1).reshape(members.shape)
    if not mask_w.any(axis=-1).all():
        empty = np.argwhere(~mask_w.any(axis=-1))[0]
        raise ContractViolation(f"pool (prototype {empty[0]}, window {empty[1]}) has no active token; "
                                f"elitism_filter must guarantee one")
    s_w = gather_scores(scores.raw, members)                               # (M, N_win, P)
    weights = ops.masked_softmax(s_w, mask_w, axis=-1)
    x_w = ops.take(x.tokens, members.transpose(1, 0, 2))                   # (N_win, M, P, C)
    w_w = ops.reshape(ops.transpose(weights, (1, 0, 2)), (part.n_windows, m, 1, part.per_window))
    z = ops.matmul(w_w, x_w)                                               # (N_win, M, 1, C)
    return ops.reshape(z, (part.n_windows * m, x.width)), weights.data, members


def pool_supertokens(x: TokenGrid, scores: ScoreMap, active: ActiveMask, cfg: SPMConfig,
                     partition: Optional[WindowPartition] = None) -> SupertokenSet:
    """Pool one head without retention or projection: exactly M * N_win rows."""
    part = partition or make_partition(x.n, x.grid, cfg)
    z, weights, members = pool_windows(x, scores, active, part)
    layout = SupertokenLayout(0, part.n_windows, scores.num_prototypes)
    return SupertokenSet(tokens=z, supertokens=z, kept=None, kept_indices=np.zeros(0, dtype=np.int64),
                         layout=layout, partition=part, heads=[HeadPooling(scores, active, weights, members)])
