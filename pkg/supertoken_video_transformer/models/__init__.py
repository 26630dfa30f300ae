"""
Backbones and their configurations.

Submodules are imported directly (``models.vit``, ``models.mvit``) so the
layer library stays importable from the pooling package.
"""
from typing import Optional

import numpy as np

from ..core.module import Module


def build_model(cfg, rng: np.random.Generator, scope: Optional[Module] = None) -> Module:
    """Instantiate the backbone a ViTConfig or MViTConfig describes."""
    from .config import MVIT
    if cfg.kind == MVIT:
        from .mvit import MultiscaleVisionTransformer
        return MultiscaleVisionTransformer(cfg, rng, scope)
    from .vit import VisionTransformer
    return VisionTransformer(cfg, rng, scope)
