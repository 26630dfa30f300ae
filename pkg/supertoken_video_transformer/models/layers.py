"""
Building blocks shared by the single-scale and multi-scale backbones.
"""
from typing import Optional, Sequence, Tuple

import numpy as np

from ..core import ops
from ..core.module import Module
from ..core.tensor import DArray
from ..errors import ConfigError

POS_EMBED_STD = 0.02


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(Module):
    """Fully connected layer; the weight is stored (in, out)."""

    def __init__(self, scope: Module, id: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator, bias: bool = True):
        super().__init__(scope, id)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = self.parameter('weight', xavier_uniform(rng, in_dim, out_dim))
        self.bias = self.parameter('bias', np.zeros(out_dim)) if bias else None

    def __call__(self, x: DArray) -> DArray:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):

    def __init__(self, scope: Module, id: str, dim: int, eps: float = 1e-6):
        super().__init__(scope, id)
        self.eps = eps
        self.gamma = self.parameter('gamma', np.ones(dim))
        self.beta = self.parameter('beta', np.zeros(dim))

    def __call__(self, x: DArray) -> DArray:
        return ops.layernorm(x, self.gamma, self.beta, self.eps)


class Mlp(Module):

    def __init__(self, scope: Module, id: str, dim: int, hidden: int, rng: np.random.Generator,
                 out_dim: Optional[int] = None):
        super().__init__(scope, id)
        self.fc1 = Linear(self, 'fc1', dim, hidden, rng)
        self.fc2 = Linear(self, 'fc2', hidden, out_dim or dim, rng)

    def __call__(self, x: DArray) -> DArray:
        return self.fc2(ops.gelu(self.fc1(x)))


def split_heads(x: DArray, heads: int) -> DArray:
    """(N, C) -> (heads, N, C / heads)."""
    n, c = x.shape
    return ops.transpose(ops.reshape(x, (n, heads, c // heads)), (1, 0, 2))


def merge_heads(x: DArray) -> DArray:
    """(heads, N, d) -> (N, heads * d)."""
    heads, n, d = x.shape
    return ops.reshape(ops.transpose(x, (1, 0, 2)), (n, heads * d))


class MultiHeadAttention(Module):
    """
    Global self-attention: FC_o(softmax(alpha * q k^T) v) with alpha = (C / heads)^-1/2.

    ``last_attention`` holds the (heads, N, N) weights of the latest call.
    """

    def __init__(self, scope: Module, id: str, dim: int, heads: int, rng: np.random.Generator):
        super().__init__(scope, id)
        if dim % heads:
            raise ConfigError(f"width {dim} is not divisible by {heads} attention heads")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = Linear(self, 'qkv', dim, 3 * dim, rng)
        self.proj = Linear(self, 'proj', dim, dim, rng)
        self.last_attention: Optional[np.ndarray] = None

    def __call__(self, x: DArray) -> DArray:
        n, c = x.shape
        qkv = ops.transpose(ops.reshape(self.qkv(x), (n, 3, self.heads, c // self.heads)), (1, 2, 0, 3))
        q, k, v = (ops.take(qkv, np.asarray(i), name='qkv_split') for i in range(3))
        attn = ops.softmax(ops.scale(ops.matmul(q, ops.transpose(k, (0, 2, 1))), self.scale), axis=-1)
        self.last_attention = attn.data
        return self.proj(merge_heads(ops.matmul(attn, v)))


class Block(Module):
    """Pre-norm transformer block: x + MHSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, scope: Module, id: str, dim: int, heads: int, mlp_ratio: float,
                 rng: np.random.Generator):
        super().__init__(scope, id)
        self.norm1 = LayerNorm(self, 'norm1', dim)
        self.attn = MultiHeadAttention(self, 'attn', dim, heads, rng)
        self.norm2 = LayerNorm(self, 'norm2', dim)
        self.mlp = Mlp(self, 'mlp', dim, int(dim * mlp_ratio), rng)

    def __call__(self, x: DArray) -> DArray:
        x = ops.add(x, self.attn(self.norm1(x)))
        return ops.add(x, self.mlp(self.norm2(x)))


def patchify(video: np.ndarray, patch: Sequence[int]) -> Tuple[np.ndarray, Tuple[int, int, int]]:
    """
    Cut a (frames, height, width, channels) clip into non-overlapping tubes.

    Returns the (N, p_t * p_h * p_w * channels) patch rows in row-major grid
    order and the (T, H, W) token grid.
    """
    f, h, w, ch = video.shape
    pt, ph, pw = patch
    if f % pt or h % ph or w % pw:
        raise ConfigError(f"input {video.shape[:3]} is not divisible by patch {tuple(patch)}")
    grid = (f // pt, h // ph, w // pw)
    tubes = video.reshape(grid[0], pt, grid[1], ph, grid[2], pw, ch).transpose(0, 2, 4, 1, 3, 5, 6)
    return tubes.reshape(int(np.prod(grid)), pt * ph * pw * ch), grid


class PatchEmbed(Module):
    """Linear projection of every patch tube plus a learned positional embedding per token."""

    def __init__(self, scope: Module, id: str, patch: Sequence[int], channels: int, dim: int,
                 grid: Sequence[int], rng: np.random.Generator):
        super().__init__(scope, id)
        self.patch = tuple(patch)
        self.grid = tuple(grid)
        self.proj = Linear(self, 'proj', int(np.prod(self.patch)) * channels, dim, rng)
        self.pos_embed = self.parameter('pos_embed', rng.normal(0.0, POS_EMBED_STD,
                                                                size=(int(np.prod(self.grid)), dim)))

    def __call__(self, video: np.ndarray) -> DArray:
        rows, grid = patchify(np.asarray(video, dtype=np.float64), self.patch)
        if grid != self.grid:
            raise ConfigError(f"clip gives token grid {grid}, model was built for {self.grid}")
        return ops.add(self.proj(DArray(rows)), self.pos_embed)
