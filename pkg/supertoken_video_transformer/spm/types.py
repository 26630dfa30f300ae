from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..core.tensor import DArray
from ..errors import ShapeError

Triple = Tuple[int, int, int]


@dataclass
class TokenGrid:
    """N x C tokens with an optional (T, H, W) factorization, absent once pooling destroys it."""
    tokens: DArray
    grid: Optional[Triple] = None

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise ShapeError(f"tokens must be N x C, got {self.tokens.shape}")
        if self.grid is not None:
            self.grid = tuple(int(g) for g in self.grid)
            if int(np.prod(self.grid)) != self.tokens.shape[0]:
                raise ShapeError(f"grid {self.grid} does not factor {self.tokens.shape[0]} tokens")

    @property
    def n(self) -> int:
        return self.tokens.shape[0]

    @property
    def width(self) -> int:
        return self.tokens.shape[1]


@dataclass
class ScoreMap:
    raw: DArray                 # (M, N) dot products s_ij
    compressed: np.ndarray      # (M, N) sigmoid(s_ij), not differentiated
    grid: Optional[Triple] = None

    @property
    def num_prototypes(self) -> int:
        return self.raw.shape[0]


@dataclass
class ActiveMask:
    mask: np.ndarray                # (M, N) final membership
    passed: np.ndarray              # (M, N) threshold result before fallback
    fallback_applied: np.ndarray    # (M, N_win)
    adopted: np.ndarray             # (M, N) entries switched on by orphan adoption


@dataclass
class WindowPartition:
    """Bijective reindexing of N tokens into N_win windows of P tokens each (window-major)."""
    index: np.ndarray               # (N_win, P) source token ids
    window: Optional[Triple]
    window_grid: Optional[Triple]

    @property
    def n_windows(self) -> int:
        return self.index.shape[0]

    @property
    def per_window(self) -> int:
        return self.index.shape[1]

    def inverse(self) -> np.ndarray:
        return np.argsort(self.index.reshape(-1), kind='stable')

    def window_of(self) -> np.ndarray:
        """(N,) window id of every token."""
        owner = np.empty(self.index.size, dtype=np.int64)
        owner[self.index.reshape(-1)] = np.repeat(np.arange(self.n_windows), self.per_window)
        return owner

    def centres(self) -> np.ndarray:
        """(N_win, 3) integer centre coordinates of every window on the token grid."""
        if self.window is None:
            raise ShapeError("window centres need a spatio-temporal grid")
        nt, nh, nw = self.window_grid
        wt, wh, ww = self.window
        t, h, w = np.meshgrid(np.arange(nt), np.arange(nh), np.arange(nw), indexing='ij')
        return np.stack([t.reshape(-1) * wt + wt // 2,
                         h.reshape(-1) * wh + wh // 2,
                         w.reshape(-1) * ww + ww // 2], axis=1)


@dataclass
class WindowedViews:
    partition: WindowPartition
    tokens: DArray              # (N_win, P, C)
    scores: DArray              # (M, N_win, P)


@dataclass
class HeadPooling:
    """Per-head pooling evidence kept for the exporters."""
    scores: ScoreMap
    active: Optional[ActiveMask]
    weights: np.ndarray         # (M, N_win, P) elitism, (M, N_win, K, G) neighbor
    members: np.ndarray         # token ids aligned with ``weights``


@dataclass(frozen=True)
class SupertokenLayout:
    """Row layout of an SPM output: kept originals first, then supertokens window-major."""
    n_kept: int
    n_windows: int
    num_prototypes: int
    groups: int = 1

    @property
    def n_supertokens(self) -> int:
        return self.n_windows * self.num_prototypes * self.groups

    @property
    def total(self) -> int:
        return self.n_kept + self.n_supertokens

    def row_of(self, window: int, prototype: int, group: int = 0) -> int:
        return self.n_kept + (window * self.num_prototypes + prototype) * self.groups + group


@dataclass
class SupertokenSet:
    tokens: DArray                      # (N_r, C) output sequence
    supertokens: DArray                 # (N_win*M[*K], C) pooled rows, before projection
    kept: Optional[DArray]              # (N_k, C) retained originals, or None
    kept_indices: np.ndarray            # (N_k,) ascending source positions
    layout: SupertokenLayout
    partition: WindowPartition
    heads: List[HeadPooling] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.tokens.shape[0]
