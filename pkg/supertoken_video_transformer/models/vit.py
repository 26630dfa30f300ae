"""
Single-scale video transformer with semantic pooling inserted between blocks.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..core import ops
from ..core.module import Module
from ..core.tensor import DArray
from ..errors import ConfigError, ContractViolation
from ..spm.module import SemanticPooling
from ..spm.types import SupertokenSet, TokenGrid
from ..spm.windows import grid_partition
from .config import AVGPOOL, MAXPOOL, SPM, ViTConfig
from .layers import Block, Linear, PatchEmbed

logger = logging.getLogger(__name__)


@dataclass
class Recorder:
    """
    Intermediate state captured during a forward pass.

    ``tokens[l]`` is the sequence leaving layer ``l`` (after its reducer, if any);
    ``tokens[0]`` is the patch embedding output.
    """
    tokens: Dict[int, TokenGrid] = field(default_factory=dict)
    pooling: Dict[int, SupertokenSet] = field(default_factory=dict)
    attention: Dict[int, np.ndarray] = field(default_factory=dict)


def _window_tokens(x: TokenGrid, window: Optional[Sequence[int]]):
    if x.grid is None:
        raise ConfigError("window pooling needs a spatio-temporal grid, but the tokens carry none")
    part = grid_partition(x.grid, window)
    return ops.take(x.tokens, part.index), part.window_grid


def reduce_avgpool(x: TokenGrid, window: Optional[Sequence[int]] = None) -> TokenGrid:
    """Mean over each window, giving one token per window on the window grid."""
    tokens, window_grid = _window_tokens(x, window)
    return TokenGrid(ops.mean(tokens, axis=1), window_grid)


def reduce_maxpool(x: TokenGrid, window: Optional[Sequence[int]] = None) -> TokenGrid:
    """Channel-wise max over each window."""
    tokens, window_grid = _window_tokens(x, window)
    return TokenGrid(ops.amax(tokens, axis=1), window_grid)


class VisionTransformer(Module):
    """
    Plain ViT when the schedule is empty; otherwise the sequence is replaced
    after block L by the output of the reducer scheduled at L.
    """

    def __init__(self, cfg: ViTConfig, rng: np.random.Generator, scope: Optional[Module] = None, id: str = 'vit'):
        super().__init__(scope, id)
        self.cfg = cfg
        c = cfg.embed_dim
        self.patch_embed = PatchEmbed(self, 'patch_embed', cfg.patch, cfg.input[3], c, cfg.grid, rng)
        blocks = Module(self, 'blocks')
        self.blocks: List[Block] = [Block(blocks, str(layer), c, cfg.num_heads, cfg.mlp_ratio, rng)
                                    for layer in range(1, cfg.depth + 1)]
        reducers = Module(self, 'reducers')
        self.spms: Dict[int, SemanticPooling] = {
            e.layer: SemanticPooling(reducers, str(e.layer), c, e.spm, rng)
            for e in cfg.spm_schedule if e.reducer == SPM
        }
        self.head = Linear(self, 'head', c, cfg.num_classes, rng)
        self.plan = cfg.layer_plan()

    def forward_tokens(self, video: np.ndarray, recorder: Optional[Recorder] = None) -> TokenGrid:
        x = TokenGrid(self.patch_embed(video), self.cfg.grid)
        if recorder is not None:
            recorder.tokens[0] = x
        for block, plan in zip(self.blocks, self.plan):
            x = TokenGrid(block(x.tokens), x.grid)
            if recorder is not None:
                recorder.attention[plan.layer] = block.attn.last_attention
            entry = plan.reducer
            if entry is not None:
                if entry.reducer == SPM:
                    pooled = self.spms[plan.layer](x)
                    if recorder is not None:
                        recorder.pooling[plan.layer] = pooled
                    x = TokenGrid(pooled.tokens)
                elif entry.reducer == AVGPOOL:
                    x = reduce_avgpool(x, entry.window)
                elif entry.reducer == MAXPOOL:
                    x = reduce_maxpool(x, entry.window)
                if x.n != plan.n_out:
                    raise ContractViolation(f"layer {plan.layer} produced {x.n} tokens, plan says {plan.n_out}")
                logger.debug(f"Layer {plan.layer}: {entry.reducer} {plan.n_in} -> {x.n} tokens")
            if recorder is not None:
                recorder.tokens[plan.layer] = x
        return x

    def forward(self, video: np.ndarray, recorder: Optional[Recorder] = None) -> DArray:
        """(1, num_classes) logits of one clip: linear over the mean of the final tokens."""
        x = self.forward_tokens(video, recorder)
        return self.head(ops.mean(x.tokens, axis=0, keepdims=True))

    __call__ = forward
