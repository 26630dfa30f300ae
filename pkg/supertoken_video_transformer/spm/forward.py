"""
Full semantic pooling pass: score, gate or rank, pool, retain, project.
"""
import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ..core import ops
from ..core.tensor import DArray
from ..errors import ConfigError
from .config import ELITISM, NEIGHBOR, SPMConfig
from .neighbor import pool_neighbor_groups
from .pooling import pool_windows
from .scoring import compute_scores, elitism_filter, keep_top_k
from .types import HeadPooling, SupertokenLayout, SupertokenSet, TokenGrid
from .windows import make_partition

logger = logging.getLogger(__name__)

Prototypes = Union[DArray, Sequence[DArray]]


def channel_slice(tokens: DArray, start: int, width: int) -> DArray:
    cols = ops.take(ops.transpose(tokens), np.arange(start, start + width), name='channel_slice')
    return ops.transpose(cols)


def spm_forward(x: TokenGrid, prototypes: Prototypes, cfg: SPMConfig,
                projection: Optional[Tuple[DArray, DArray]] = None) -> SupertokenSet:
    """
    Reduce N tokens to N_r = [kept originals in source order] ++ [supertokens].

    Args:
        x: Incoming tokens.
        prototypes: One (M, C/heads) matrix per head; a bare matrix when heads == 1.
        cfg: Pooling settings.
        projection: (weight, bias) of the C -> C output layer, required when
            ``cfg.output_projection`` is set.
    """
    protos = [prototypes] if isinstance(prototypes, DArray) else list(prototypes)
    if len(protos) != cfg.heads:
        raise ConfigError(f"{len(protos)} prototype sets given for {cfg.heads} SPM heads")
    if cfg.output_projection and projection is None:
        raise ConfigError("output projection enabled but no projection weights given")
    cfg.check_width(x.width)
    width = x.width // cfg.heads
    part = make_partition(x.n, x.grid, cfg)
    if cfg.keep > x.n:
        raise ConfigError(f"cannot keep {cfg.keep} of {x.n} tokens")

    pooled, evidence = [], []
    for h, e in enumerate(protos):
        xh = x if cfg.heads == 1 else TokenGrid(channel_slice(x.tokens, h * width, width), x.grid)
        scores = compute_scores(xh, e)
        if cfg.variant == ELITISM:
            active = elitism_filter(scores, cfg, part)
            z, weights, members = pool_windows(xh, scores, active, part)
        else:
            active = None
            z, weights, members = pool_neighbor_groups(xh, scores, part, cfg)
        pooled.append(z)
        evidence.append(HeadPooling(scores, active, weights, members))
    supertokens = ops.concat(pooled, axis=1)

    kept, kept_indices = keep_top_k(x, [hp.scores for hp in evidence], cfg)
    tokens = supertokens if kept is None else ops.concat([kept, supertokens], axis=0)
    if cfg.output_projection:
        tokens = ops.linear(tokens, *projection)

    groups = cfg.groups if cfg.variant == NEIGHBOR else 1
    layout = SupertokenLayout(cfg.keep, part.n_windows, cfg.num_prototypes, groups)
    logger.debug(f"SPM reduced {x.n} tokens to {layout.total} ({cfg.variant}, {part.n_windows} windows)")
    return SupertokenSet(tokens, supertokens, kept, kept_indices, layout, part, evidence)


def neighbor_grouping_forward(x: TokenGrid, prototypes: Prototypes, cfg: SPMConfig,
                              projection: Optional[Tuple[DArray, DArray]] = None) -> SupertokenSet:
    if cfg.variant != NEIGHBOR:
        raise ConfigError(f"neighbor grouping needs variant '{NEIGHBOR}', got '{cfg.variant}'")
    return spm_forward(x, prototypes, cfg, projection)
