"""
Multiply-accumulate counter hooked into the kernel's contraction ops.
"""
from collections import OrderedDict
from typing import Dict, List, Optional


class MacCounter:
    """
    Context manager tallying MACs of every ``matmul``, ``linear`` and
    ``grouped_conv3d`` executed while it is active.

    Usage:
        with MacCounter() as counter:
            model.forward(video)
        counter.total
    """

    _active: List['MacCounter'] = []

    def __init__(self):
        self.by_kind: Dict[str, int] = OrderedDict()
        self.calls = 0

    def __enter__(self) -> 'MacCounter':
        MacCounter._active.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        MacCounter._active.remove(self)
        return False

    @property
    def total(self) -> int:
        return sum(self.by_kind.values())

    def add(self, kind: str, macs: int) -> None:
        self.by_kind[kind] = self.by_kind.get(kind, 0) + int(macs)
        self.calls += 1

    @classmethod
    def current(cls) -> Optional['MacCounter']:
        return cls._active[-1] if cls._active else None


def count_macs(kind: str, macs: int) -> None:
    for counter in MacCounter._active:
        counter.add(kind, macs)
