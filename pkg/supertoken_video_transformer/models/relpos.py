"""
Decomposed relative position bias.

One learned scalar per head and per relative offset along each of T, H, W.
Coordinates are expressed on the block's input grid, so a query pooled with
stride s sits at ``index * s`` and offsets stay inside ``[-(E-1), E-1]``.
"""
from typing import Sequence

import numpy as np

from ..core import ops
from ..core.module import Module
from ..core.tensor import DArray
from ..errors import ArgumentError

RELPOS_INIT_STD = 0.02
AXES = ('t', 'h', 'w')


def grid_coords(grid: Sequence[int], stride: Sequence[int] = (1, 1, 1)) -> np.ndarray:
    """(N, 3) input-grid coordinates of a row-major grid sampled with ``stride``."""
    t, h, w = np.meshgrid(*(np.arange(g) * s for g, s in zip(grid, stride)), indexing='ij')
    return np.stack([t.reshape(-1), h.reshape(-1), w.reshape(-1)], axis=1)


class RelPosTable(Module):

    def __init__(self, scope: Module, id: str, grid: Sequence[int], heads: int, rng: np.random.Generator):
        super().__init__(scope, id)
        self.grid = tuple(int(g) for g in grid)
        self.heads = heads
        self.tables = [self.parameter(f'rel_pos_{axis}', rng.normal(0.0, RELPOS_INIT_STD, size=(2 * e - 1, heads)))
                       for axis, e in zip(AXES, self.grid)]

    def offsets(self, q_coords: np.ndarray, k_coords: np.ndarray, axis: int) -> np.ndarray:
        offset = q_coords[:, None, axis] - k_coords[None, :, axis] + self.grid[axis] - 1
        if offset.min() < 0 or offset.max() > 2 * self.grid[axis] - 2:
            raise ArgumentError(f"relative offsets along {AXES[axis]} exceed the table for extent {self.grid[axis]}")
        return offset

    def __call__(self, q_coords: np.ndarray, k_coords: np.ndarray) -> DArray:
        """(heads, N_q, N_k) bias: the sum of the three per-axis lookups."""
        total = None
        for axis, table in enumerate(self.tables):
            term = ops.take(table, self.offsets(q_coords, k_coords, axis), name=f'relpos_{AXES[axis]}')
            total = term if total is None else ops.add(total, term)
        return ops.transpose(total, (2, 0, 1))
