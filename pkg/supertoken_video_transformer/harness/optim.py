import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..core.tensor import DArray
from ..errors import ConfigError

logger = logging.getLogger(__name__)

SGD = 'sgd'
ADAMW = 'adamw'


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int
    lr: float
    optimizer: str = ADAMW
    momentum: float = 0.9
    weight_decay: float = 0.05
    betas: Tuple[float, float] = (0.9, 0.999)
    warmup_steps: int = 0
    clip_norm: Optional[float] = None
    eval_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in (SGD, ADAMW):
            raise ConfigError(f"unknown optimizer '{self.optimizer}'")
        if self.steps < 0 or self.batch_size < 1 or self.lr < 0:
            raise ConfigError(f"invalid budget: steps={self.steps} batch_size={self.batch_size} lr={self.lr}")
        if self.warmup_steps > self.steps:
            raise ConfigError(f"warmup_steps {self.warmup_steps} exceeds steps {self.steps}")
        object.__setattr__(self, 'betas', tuple(float(b) for b in self.betas))

    @classmethod
    def from_dict(cls, doc: dict, seed: int = 0) -> 'TrainConfig':
        return cls(seed=seed, **doc)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``cfg.lr``, then cosine decay to zero at ``cfg.steps``."""
    if step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    span = max(1, cfg.steps - cfg.warmup_steps)
    return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * (step - cfg.warmup_steps) / span))


def clip_grad_norm(params: List[DArray], max_norm: float) -> float:
    """Rescale all gradients in place so their joint L2 norm is at most ``max_norm``; returns the norm before."""
    norm = math.sqrt(sum(float(np.sum(p.grad ** 2)) for p in params if p.grad is not None))
    if norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm


class Optimizer:

    def __init__(self, params: List[Tuple[str, DArray]], cfg: TrainConfig):
        self.params = list(params)
        self.cfg = cfg
        self.t = 0

    def _grad(self, p: DArray) -> np.ndarray:
        return p.grad if p.grad is not None else np.zeros_like(p.data)

    def step(self, lr: float) -> None:
        raise NotImplementedError


class MomentumSGD(Optimizer):
    """Heavy-ball SGD with L2 weight decay folded into the gradient."""

    def __init__(self, params, cfg: TrainConfig):
        super().__init__(params, cfg)
        self.buffers: Dict[str, np.ndarray] = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self, lr: float) -> None:
        self.t += 1
        for name, p in self.params:
            g = self._grad(p) + self.cfg.weight_decay * p.data
            buf = self.buffers[name]
            buf *= self.cfg.momentum
            buf += g
            p.data -= lr * buf


class AdamW(Optimizer):
    """Adam with decoupled weight decay."""

    def __init__(self, params, cfg: TrainConfig, eps: float = 1e-8):
        super().__init__(params, cfg)
        self.eps = eps
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.cfg.betas
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for name, p in self.params:
            g = self._grad(p)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * self.cfg.weight_decay * p.data
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(params, cfg: TrainConfig) -> Optimizer:
    opt = MomentumSGD(params, cfg) if cfg.optimizer == SGD else AdamW(params, cfg)
    logger.debug(f"{type(opt).__name__} over {len(opt.params)} parameter arrays")
    return opt
