import numpy as np

from ..core.module import Module
from ..models.layers import Linear
from .config import SPMConfig
from .forward import spm_forward
from .types import SupertokenSet, TokenGrid


class SemanticPooling(Module):
    """
    Learnable semantic pooling layer.

    Each head owns M prototypes of width C / heads drawn from N(0, (C / heads)^-1/2),
    so dot products with unit-scale tokens start near unit scale.
    """

    def __init__(self, scope: Module, id: str, width: int, cfg: SPMConfig, rng: np.random.Generator):
        super().__init__(scope, id)
        cfg.check_width(width)
        self.cfg = cfg
        self.width = width
        head_width = width // cfg.heads
        self.prototypes = [
            self.parameter('prototypes' if cfg.heads == 1 else f'prototypes_{h}',
                           rng.normal(0.0, head_width ** -0.5, size=(cfg.num_prototypes, head_width)))
            for h in range(cfg.heads)
        ]
        self.proj = Linear(self, 'proj', width, width, rng) if cfg.output_projection else None

    def __call__(self, x: TokenGrid) -> SupertokenSet:
        projection = (self.proj.weight, self.proj.bias) if self.proj is not None else None
        return spm_forward(x, self.prototypes, self.cfg, projection)
