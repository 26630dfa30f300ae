"""
Named module tree.

Modules are created inside a parent scope with an id, the same way constructs
are nested, so every parameter gets a stable dotted path such as
``blocks.3.attn.fc_q.weight``. Checkpoints, optimizers and the parameter
ledger all key on these paths.
"""
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..errors import ConfigError, ShapeError
from .tensor import DArray


class Module:

    def __init__(self, scope: Optional['Module'], id: str):
        self.node_id = id
        self.scope = scope
        self._children: List['Module'] = []
        self._params: 'OrderedDict[str, DArray]' = OrderedDict()
        if scope is not None:
            if any(c.node_id == id for c in scope._children):
                raise ConfigError(f"duplicate module id '{id}' under '{scope.path or '<root>'}'")
            scope._children.append(self)

    @property
    def path(self) -> str:
        if self.scope is None:
            return ''
        parent = self.scope.path
        return f"{parent}.{self.node_id}" if parent else self.node_id

    def parameter(self, name: str, data: np.ndarray) -> DArray:
        full = f"{self.path}.{name}" if self.path else name
        p = DArray(data, requires_grad=True, name=full)
        self._params[name] = p
        return p

    def walk(self) -> Iterator['Module']:
        yield self
        for child in self._children:
            yield from child.walk()

    def named_parameters(self) -> Iterator[Tuple[str, DArray]]:
        for node in self.walk():
            for p in node._params.values():
                yield p.name, p

    def parameters(self) -> List[DArray]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ConfigError(f"checkpoint does not match model: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ShapeError(f"checkpoint entry {name} has shape {state[name].shape}, model expects {p.shape}")
            p.data[...] = state[name]
