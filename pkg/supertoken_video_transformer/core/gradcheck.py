"""
Central finite-difference checks for tape gradients.
"""
import logging
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .tensor import DArray, Tape

logger = logging.getLogger(__name__)


def analytic_gradients(fn: Callable[[], DArray], inputs: Sequence[DArray]) -> Dict[int, np.ndarray]:
    for x in inputs:
        x.zero_grad()
    with Tape() as tape:
        out = fn()
    tape.backward(out)
    return {i: (np.zeros_like(x.data) if x.grad is None else x.grad.copy()) for i, x in enumerate(inputs)}


def numeric_gradient(fn: Callable[[], DArray], x: DArray, eps: float = 1e-6,
                     coords: Optional[np.ndarray] = None) -> np.ndarray:
    """Central differences of scalar ``fn`` w.r.t. ``x`` at ``coords`` (all entries by default)."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    positions = range(flat.size) if coords is None else coords
    for i in positions:
        orig = flat[i]
        flat[i] = orig + eps
        up = fn().item()
        flat[i] = orig - eps
        down = fn().item()
        flat[i] = orig
        grad.reshape(-1)[i] = (up - down) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), floor))


def check_gradients(fn: Callable[[], DArray], inputs: Sequence[DArray], eps: float = 1e-6,
                    max_coords: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> float:
    """
    Compare tape gradients of scalar ``fn`` against central differences.

    Args:
        fn: Zero-argument closure rebuilding the scalar from ``inputs``.
        inputs: Arrays with ``requires_grad`` set.
        max_coords: Sample at most this many entries per input.
        rng: Generator used for the sampling.

    Returns:
        The worst relative error over all inputs.
    """
    rng = rng or np.random.default_rng(0)
    analytic = analytic_gradients(fn, inputs)
    worst = 0.0
    for i, x in enumerate(inputs):
        coords = None
        if max_coords is not None and x.size > max_coords:
            coords = np.sort(rng.choice(x.size, size=max_coords, replace=False))
        numeric = numeric_gradient(fn, x, eps=eps, coords=coords)
        a = analytic[i].reshape(-1)
        n = numeric.reshape(-1)
        if coords is not None:
            a, n = a[coords], n[coords]
        err = relative_error(a, n)
        logger.debug(f"gradcheck input {i} {x.shape}: rel err {err:.3e}")
        worst = max(worst, err)
    return worst
