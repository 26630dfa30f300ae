from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from ..errors import ConfigError

ELITISM = 'elitism'
NEIGHBOR = 'neighbor'
GLOBAL = 'global'

Triple = Tuple[int, int, int]

# Threshold defaults per integration style (ablation optimum for each backbone).
SINGLE_SCALE_THETA = 0.7
MULTI_SCALE_THETA = 0.5


@dataclass(frozen=True)
class WindowPlan:
    """How an SPM splits N tokens: ``n_windows`` windows of ``per_window`` tokens each."""
    window: Optional[Triple]
    window_grid: Optional[Triple]
    n_windows: int
    per_window: int


@dataclass(frozen=True)
class SPMConfig:
    """
    Semantic pooling settings.

    Args:
        num_prototypes: M, prototypes per head.
        theta: Elitism threshold on sigmoid scores, strictly inside (0, 1).
        window: (T_w, H_w, W_w), or None for GLOBAL (the whole current grid).
        keep: N_k, original tokens retained by average compressed score.
        variant: ``elitism`` or ``neighbor``.
        groups: K, rank groups per (prototype, window) for the neighbor variant.
        heads: Channel splits, each with its own prototype set.
        output_projection: Apply a final C->C linear to the output sequence.
        adopt_orphans: Activate tokens left out of every pool under their best prototype.
            Adopted entries sit in the active mask without passing the threshold or
            a fallback, so the mask no longer follows the elitism law alone. They
            are flagged in ``ActiveMask.adopted``.
    """
    num_prototypes: int
    theta: float = SINGLE_SCALE_THETA
    window: Optional[Triple] = None
    keep: int = 0
    variant: str = ELITISM
    groups: int = 1
    heads: int = 1
    output_projection: bool = False
    adopt_orphans: bool = False

    def __post_init__(self):
        if self.num_prototypes < 1:
            raise ConfigError(f"num_prototypes must be >= 1, got {self.num_prototypes}")
        if not 0.0 < self.theta < 1.0:
            raise ConfigError(f"theta must lie strictly inside (0, 1), got {self.theta}")
        if self.keep < 0:
            raise ConfigError(f"keep must be >= 0, got {self.keep}")
        if self.variant not in (ELITISM, NEIGHBOR):
            raise ConfigError(f"unknown SPM variant '{self.variant}'")
        if self.groups < 1:
            raise ConfigError(f"groups must be >= 1, got {self.groups}")
        if self.variant == ELITISM and self.groups != 1:
            raise ConfigError("groups only applies to the neighbor variant")
        if self.heads < 1:
            raise ConfigError(f"heads must be >= 1, got {self.heads}")
        if self.window is not None:
            window = tuple(int(w) for w in self.window)
            if len(window) != 3 or any(w < 1 for w in window):
                raise ConfigError(f"window must be three positive extents or global, got {self.window}")
            object.__setattr__(self, 'window', window)

    @property
    def is_global(self) -> bool:
        return self.window is None

    @property
    def pools_per_window(self) -> int:
        return self.num_prototypes * (self.groups if self.variant == NEIGHBOR else 1)

    def check_width(self, width: int) -> None:
        if width % self.heads:
            raise ConfigError(f"token width {width} is not divisible by {self.heads} SPM heads")

    def plan_windows(self, n_tokens: int, grid: Optional[Sequence[int]]) -> WindowPlan:
        if grid is None:
            if not self.is_global:
                raise ConfigError(f"window {self.window} needs a spatio-temporal grid, "
                                  f"but the incoming {n_tokens} tokens carry none")
            plan = WindowPlan(None, None, 1, n_tokens)
        else:
            grid = tuple(grid)
            window = grid if self.is_global else self.window
            if any(g % w for g, w in zip(grid, window)):
                raise ConfigError(f"window {window} does not divide grid {grid}")
            window_grid = tuple(g // w for g, w in zip(grid, window))
            n_windows = window_grid[0] * window_grid[1] * window_grid[2]
            plan = WindowPlan(window, window_grid, n_windows, n_tokens // n_windows)
        if self.variant == NEIGHBOR and plan.per_window % self.groups:
            raise ConfigError(f"{plan.per_window} tokens per window do not split into {self.groups} equal groups")
        return plan

    def output_count(self, n_tokens: int, grid: Optional[Sequence[int]]) -> int:
        """N_r = M*N_win + N_k (elitism) or M*K*N_win + N_k (neighbor)."""
        if self.keep > n_tokens:
            raise ConfigError(f"cannot keep {self.keep} of {n_tokens} tokens")
        return self.pools_per_window * self.plan_windows(n_tokens, grid).n_windows + self.keep

    @classmethod
    def from_dict(cls, doc: dict) -> 'SPMConfig':
        doc = dict(doc)
        window = doc.pop('window', GLOBAL)
        return cls(window=None if window in (None, GLOBAL) else tuple(window), **doc)

    def to_dict(self) -> dict:
        return {
            'num_prototypes': self.num_prototypes,
            'theta': self.theta,
            'window': GLOBAL if self.window is None else list(self.window),
            'keep': self.keep,
            'variant': self.variant,
            'groups': self.groups,
            'heads': self.heads,
            'output_projection': self.output_projection,
            'adopt_orphans': self.adopt_orphans,
        }
