"""
Multi-scale video transformer with pooling attention and semantic attention.

    Input
      |-----------------------+
      ↓                       |
     Norm                     |
      ↓                       |
    PoolingAttention         MaxPool (when q is strided)
    or SemanticAttention      |
      ↓                       |
    Summation ←---------------+
      |-----------------------+
      ↓                       |
     Norm ------------------ Proj (when width changes)
      ↓                       |
     Mlp                      |
      ↓                       |
    Summation ←---------------+
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core import ops
from ..core.conv import grouped_conv3d, maxpool3d
from ..core.module import Module
from ..core.tensor import DArray
from ..errors import ConfigError, ContractViolation
from ..spm.config import SPMConfig
from ..spm.module import SemanticPooling
from ..spm.types import SupertokenSet, TokenGrid
from ..spm.windows import make_partition
from .config import UNIT, BlockPlan, MViTConfig
from .layers import LayerNorm, Linear, Mlp, merge_heads, split_heads
from .relpos import RelPosTable, grid_coords
from .vit import Recorder

logger = logging.getLogger(__name__)


def identity_kernel(kernel: Sequence[int], channels: int) -> np.ndarray:
    """Depthwise (k_t, k_h, k_w, 1, channels) kernel passing the centre tap through."""
    w = np.zeros(tuple(kernel) + (1, channels))
    w[kernel[0] // 2, kernel[1] // 2, kernel[2] // 2] = 1.0
    return w


def pooling_active(kernel: Sequence[int], stride: Sequence[int]) -> bool:
    return int(np.prod(kernel)) > 1 or int(np.prod(stride)) > 1


def pool_tokens(x: DArray, grid: Sequence[int], weight: Optional[DArray],
                stride: Sequence[int]) -> Tuple[DArray, Tuple[int, int, int]]:
    """Depthwise conv pooling of (N, C) tokens laid on ``grid``; no weight means no pooling."""
    if weight is None:
        return x, tuple(grid)
    c = x.shape[1]
    pooled = grouped_conv3d(ops.reshape(x, tuple(grid) + (c,)), weight, groups=c, stride=stride)
    out_grid = pooled.shape[:3]
    return ops.reshape(pooled, (int(np.prod(out_grid)), c)), out_grid


def attend(q: DArray, k: DArray, v: DArray, heads: int, bias: DArray) -> Tuple[DArray, np.ndarray]:
    """q + softmax(alpha * q k^T + bias) v per head, merged back to (N_q, C)."""
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    alpha = qh.shape[-1] ** -0.5
    logits = ops.add(ops.scale(ops.matmul(qh, ops.transpose(kh, (0, 2, 1))), alpha), bias)
    attn = ops.softmax(logits, axis=-1)
    return merge_heads(ops.add(ops.matmul(attn, vh), qh)), attn.data


class PoolingAttention(Module):
    """
    ConvAttnPool(x) = FC_o(q + softmax(alpha * q k^T + relpos) v) with
    q, k, v = depthwise conv pooling of FC_q, FC_k, FC_v outputs.
    """

    def __init__(self, scope: Module, id: str, plan: BlockPlan, kernel_q: Sequence[int],
                 kernel_kv: Sequence[int], rng: np.random.Generator):
        super().__init__(scope, id)
        dim = plan.dim_in
        self.plan = plan
        self.heads = plan.heads
        self.fc_q = Linear(self, 'fc_q', dim, dim, rng)
        self.fc_k = Linear(self, 'fc_k', dim, dim, rng)
        self.fc_v = Linear(self, 'fc_v', dim, dim, rng)
        self.fc_o = Linear(self, 'fc_o', dim, dim, rng)
        q_on, kv_on = pooling_active(kernel_q, plan.q_stride), pooling_active(kernel_kv, plan.kv_stride)
        self.pool_q = self.parameter('pool_q', identity_kernel(kernel_q, dim)) if q_on else None
        self.pool_k = self.parameter('pool_k', identity_kernel(kernel_kv, dim)) if kv_on else None
        self.pool_v = self.parameter('pool_v', identity_kernel(kernel_kv, dim)) if kv_on else None
        self.relpos = RelPosTable(self, 'relpos', plan.grid_in, plan.heads, rng)
        self.last_attention: Optional[np.ndarray] = None

    def __call__(self, x: TokenGrid) -> TokenGrid:
        plan = self.plan
        q, grid_q = pool_tokens(self.fc_q(x.tokens), x.grid, self.pool_q, plan.q_stride)
        k, grid_kv = pool_tokens(self.fc_k(x.tokens), x.grid, self.pool_k, plan.kv_stride)
        v, _ = pool_tokens(self.fc_v(x.tokens), x.grid, self.pool_v, plan.kv_stride)
        q_stride = plan.q_stride if self.pool_q is not None else UNIT
        kv_stride = plan.kv_stride if self.pool_k is not None else UNIT
        bias = self.relpos(grid_coords(grid_q, q_stride), grid_coords(grid_kv, kv_stride))
        out, self.last_attention = attend(q, k, v, self.heads, bias)
        return TokenGrid(self.fc_o(out), grid_q)


class SemanticAttention(Module):
    """
    Attention whose keys and values come from semantic pooling.

    The N_win * M supertokens are laid on the window grid with M * C channels,
    so the stride-1 depthwise conv over FC_k / FC_v outputs mixes each
    (prototype, channel) pair across neighbouring windows only. Queries keep
    the full input resolution, and each semantic key sits at the centre of
    its source window for the relative position lookup.
    """

    def __init__(self, scope: Module, id: str, plan: BlockPlan, kernel_q: Sequence[int],
                 kernel_kv: Sequence[int], rng: np.random.Generator):
        super().__init__(scope, id)
        if plan.transition:
            raise ConfigError(f"block {plan.index}: semantic attention cannot stride queries")
        dim = plan.dim_in
        self.plan = plan
        self.heads = plan.heads
        self.cfg: SPMConfig = plan.spm
        self.partition = make_partition(plan.n_in, plan.grid_in, self.cfg)
        m = self.cfg.num_prototypes
        self.spm = SemanticPooling(self, 'spm', dim, self.cfg, rng)
        self.fc_q = Linear(self, 'fc_q', dim, dim, rng)
        self.fc_k = Linear(self, 'fc_k', dim, dim, rng)
        self.fc_v = Linear(self, 'fc_v', dim, dim, rng)
        self.fc_o = Linear(self, 'fc_o', dim, dim, rng)
        self.pool_q = self.parameter('pool_q', identity_kernel(kernel_q, dim)) \
            if pooling_active(kernel_q, UNIT) else None
        kv_on = pooling_active(kernel_kv, UNIT)
        self.pool_k = self.parameter('pool_k', identity_kernel(kernel_kv, m * dim)) if kv_on else None
        self.pool_v = self.parameter('pool_v', identity_kernel(kernel_kv, m * dim)) if kv_on else None
        self.relpos = RelPosTable(self, 'relpos', plan.grid_in, plan.heads, rng)
        self.key_coords = np.repeat(self.partition.centres(), m, axis=0)
        self.last_attention: Optional[np.ndarray] = None
        self.last_pooling: Optional[SupertokenSet] = None

    def _window_conv(self, x: DArray, weight: Optional[DArray]) -> DArray:
        """(N_win * M, C) -> conv over the window grid with M * C channels -> (N_win * M, C)."""
        if weight is None:
            return x
        rows, c = x.shape
        window_grid = self.partition.window_grid
        mc = self.cfg.num_prototypes * c
        out = grouped_conv3d(ops.reshape(x, tuple(window_grid) + (mc,)), weight, groups=mc)
        return ops.reshape(out, (rows, c))

    def __call__(self, x: TokenGrid) -> TokenGrid:
        q, _ = pool_tokens(self.fc_q(x.tokens), x.grid, self.pool_q, UNIT)
        pooled = self.spm(x)
        self.last_pooling = pooled
        if pooled.n != self.plan.n_kv:
            raise ContractViolation(f"block {self.plan.index}: {pooled.n} semantic keys, plan says {self.plan.n_kv}")
        k = self._window_conv(self.fc_k(pooled.tokens), self.pool_k)
        v = self._window_conv(self.fc_v(pooled.tokens), self.pool_v)
        bias = self.relpos(grid_coords(x.grid), self.key_coords)
        out, self.last_attention = attend(q, k, v, self.heads, bias)
        return TokenGrid(self.fc_o(out), x.grid)


class MultiScaleBlock(Module):

    def __init__(self, scope: Module, id: str, plan: BlockPlan, cfg: MViTConfig, rng: np.random.Generator):
        super().__init__(scope, id)
        self.plan = plan
        self.norm1 = LayerNorm(self, 'norm1', plan.dim_in)
        attention = SemanticAttention if plan.semantic else PoolingAttention
        self.attn = attention(self, 'attn', plan, cfg.kernel_q, cfg.kernel_kv, rng)
        self.norm2 = LayerNorm(self, 'norm2', plan.dim_in)
        self.mlp = Mlp(self, 'mlp', plan.dim_in, int(plan.dim_in * cfg.mlp_ratio), rng, out_dim=plan.dim_out)
        self.proj = Linear(self, 'proj', plan.dim_in, plan.dim_out, rng) if plan.dim_in != plan.dim_out else None
        self.kernel_skip = cfg.kernel_q

    def residual(self, x: TokenGrid) -> DArray:
        if not self.plan.transition:
            return x.tokens
        c = x.width
        pooled = maxpool3d(ops.reshape(x.tokens, tuple(x.grid) + (c,)), self.kernel_skip, self.plan.q_stride)
        return ops.reshape(pooled, (self.plan.n_q, c))

    def __call__(self, x: TokenGrid) -> TokenGrid:
        a = self.attn(TokenGrid(self.norm1(x.tokens), x.grid))
        h = ops.add(self.residual(x), a.tokens)
        hn = self.norm2(h)
        skip = self.proj(hn) if self.proj is not None else h
        return TokenGrid(ops.add(skip, self.mlp(hn)), a.grid)


class MultiscaleVisionTransformer(Module):
    """Conv stem, stages of multi-scale blocks, then mean -> LayerNorm -> linear."""

    def __init__(self, cfg: MViTConfig, rng: np.random.Generator, scope: Optional[Module] = None, id: str = 'mvit'):
        super().__init__(scope, id)
        self.cfg = cfg
        ch, dim = cfg.input[3], cfg.stages[0].dim
        fan_in = int(np.prod(cfg.stem_kernel)) * ch
        stem = Module(self, 'stem')
        self.stem_weight = stem.parameter('weight', rng.normal(0.0, fan_in ** -0.5,
                                                               size=tuple(cfg.stem_kernel) + (ch, dim)))
        self.stem_bias = stem.parameter('bias', np.zeros(dim))
        self.plan: List[BlockPlan] = cfg.block_plan()
        blocks = Module(self, 'blocks')
        self.blocks = [MultiScaleBlock(blocks, str(p.index), p, cfg, rng) for p in self.plan]
        width = cfg.stages[-1].dim
        self.norm = LayerNorm(self, 'norm', width)
        self.head = Linear(self, 'head', width, cfg.num_classes, rng)

    def stem(self, video: np.ndarray) -> TokenGrid:
        clip = np.asarray(video, dtype=np.float64)
        if clip.shape != self.cfg.input:
            raise ConfigError(f"clip shape {clip.shape} does not match model input {self.cfg.input}")
        out = grouped_conv3d(DArray(clip), self.stem_weight, stride=self.cfg.stem_stride, bias=self.stem_bias)
        grid = out.shape[:3]
        return TokenGrid(ops.reshape(out, (int(np.prod(grid)), out.shape[3])), grid)

    def forward_tokens(self, video: np.ndarray, recorder: Optional[Recorder] = None) -> TokenGrid:
        x = self.stem(video)
        if recorder is not None:
            recorder.tokens[0] = x
        for block in self.blocks:
            x = block(x)
            if x.grid != block.plan.grid_q:
                raise ContractViolation(f"block {block.plan.index} produced grid {x.grid}, "
                                        f"plan says {block.plan.grid_q}")
            if recorder is not None:
                recorder.tokens[block.plan.index] = x
                recorder.attention[block.plan.index] = block.attn.last_attention
                if block.plan.semantic:
                    recorder.pooling[block.plan.index] = block.attn.last_pooling
        return x

    def forward(self, video: np.ndarray, recorder: Optional[Recorder] = None) -> DArray:
        x = self.forward_tokens(video, recorder)
        return self.head(self.norm(ops.mean(x.tokens, axis=0, keepdims=True)))

    __call__ = forward
