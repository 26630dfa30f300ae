"""
Declarative model configurations and the shape plans derived from them.

Plans are computed once at construction, so any schedule or grid
inconsistency is a ConfigError at build time. The FLOP auditor walks the
same plans the models are built from.
"""
import dataclasses
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.conv import output_grid
from ..errors import ArgumentError, ConfigError
from ..spm.config import ELITISM, GLOBAL, MULTI_SCALE_THETA, SPMConfig
from .schema import load_document, validate_document

logger = logging.getLogger(__name__)

Triple = Tuple[int, int, int]

VIT = 'vit'
MVIT = 'mvit'
SPM = 'spm'
AVGPOOL = 'avgpool'
MAXPOOL = 'maxpool'
REDUCERS = (SPM, AVGPOOL, MAXPOOL)
UNIT = (1, 1, 1)


def _triple(v: Sequence[int]) -> Triple:
    return tuple(int(i) for i in v)


def _window(v) -> Optional[Triple]:
    return None if v in (None, GLOBAL) else _triple(v)


@dataclass(frozen=True)
class ReducerEntry:
    """Token reduction applied after block ``layer`` (1-based)."""
    layer: int
    reducer: str = SPM
    spm: Optional[SPMConfig] = None
    window: Optional[Triple] = None      # avgpool/maxpool window, None = whole grid

    def __post_init__(self):
        if self.reducer not in REDUCERS:
            raise ConfigError(f"unknown reducer '{self.reducer}' at layer {self.layer}")
        if (self.reducer == SPM) != (self.spm is not None):
            raise ConfigError(f"layer {self.layer}: reducer '{self.reducer}' and SPM settings disagree")

    @classmethod
    def from_dict(cls, doc: dict) -> 'ReducerEntry':
        doc = dict(doc)
        layer = doc.pop('layer')
        reducer = doc.pop('reducer', SPM)
        if reducer == SPM:
            return cls(layer, SPM, spm=SPMConfig.from_dict(doc))
        window = doc.pop('window', GLOBAL)
        if doc:
            raise ConfigError(f"layer {layer}: {reducer} takes only a window, got {sorted(doc)}")
        return cls(layer, reducer, window=_window(window))

    def to_dict(self) -> dict:
        doc = {'layer': self.layer, 'reducer': self.reducer}
        if self.spm is not None:
            doc.update(self.spm.to_dict())
        else:
            doc['window'] = GLOBAL if self.window is None else list(self.window)
        return doc


@dataclass(frozen=True)
class LayerPlan:
    """Token bookkeeping around ViT block ``layer``."""
    layer: int
    n_in: int
    grid_in: Optional[Triple]
    n_out: int
    grid_out: Optional[Triple]
    reducer: Optional[ReducerEntry] = None


@dataclass(frozen=True)
class ViTConfig:
    """
    Single-scale backbone.

    Args:
        input: (frames, height, width, channels) of one clip.
        patch: (p_t, p_h, p_w) tube size of the patch embedding.
        spm_schedule: Reducers in strictly increasing layer order.
    """
    name: str
    depth: int
    embed_dim: int
    num_heads: int
    patch: Triple
    input: Tuple[int, int, int, int]
    num_classes: int
    mlp_ratio: float = 4.0
    spm_schedule: Tuple[ReducerEntry, ...] = ()
    head_type: str = 'mean'

    kind = VIT

    def __post_init__(self):
        object.__setattr__(self, 'patch', _triple(self.patch))
        object.__setattr__(self, 'input', tuple(int(i) for i in self.input))
        object.__setattr__(self, 'spm_schedule', tuple(self.spm_schedule))
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"{self.name}: width {self.embed_dim} is not divisible by {self.num_heads} heads")
        if self.head_type != 'mean':
            raise ConfigError(f"{self.name}: unsupported head type '{self.head_type}'")
        if any(e % p for e, p in zip(self.input[:3], self.patch)):
            raise ConfigError(f"{self.name}: input {self.input[:3]} is not divisible by patch {self.patch}")
        layers = [e.layer for e in self.spm_schedule]
        if any(b <= a for a, b in zip(layers, layers[1:])):
            raise ConfigError(f"{self.name}: reducer layers must be strictly increasing, got {layers}")
        if layers and (layers[0] < 1 or layers[-1] > self.depth):
            raise ConfigError(f"{self.name}: reducer layers {layers} fall outside 1..{self.depth}")
        self.layer_plan()

    @property
    def grid(self) -> Triple:
        return tuple(e // p for e, p in zip(self.input[:3], self.patch))

    @property
    def num_tokens(self) -> int:
        return int(np.prod(self.grid))

    def reducer_at(self, layer: int) -> Optional[ReducerEntry]:
        return next((e for e in self.spm_schedule if e.layer == layer), None)

    def layer_plan(self) -> List[LayerPlan]:
        """Token count and grid entering and leaving every block."""
        plans = []
        n, grid = self.num_tokens, self.grid
        for layer in range(1, self.depth + 1):
            entry = self.reducer_at(layer)
            n_out, grid_out = n, grid
            if entry is not None:
                n_out, grid_out = self._reduce(entry, n, grid)
            plans.append(LayerPlan(layer, n, grid, n_out, grid_out, entry))
            n, grid = n_out, grid_out
        return plans

    def _reduce(self, entry: ReducerEntry, n: int, grid: Optional[Triple]) -> Tuple[int, Optional[Triple]]:
        where = f"{self.name} layer {entry.layer}"
        if entry.reducer == SPM:
            try:
                entry.spm.check_width(self.embed_dim)
                return entry.spm.output_count(n, grid), None
            except ConfigError as e:
                raise ConfigError(f"{where}: {e}")
        if grid is None:
            raise ConfigError(f"{where}: {entry.reducer} needs a spatio-temporal grid, but an earlier SPM removed it")
        window = grid if entry.window is None else entry.window
        if any(g % w for g, w in zip(grid, window)):
            raise ConfigError(f"{where}: window {window} does not divide grid {grid}")
        window_grid = tuple(g // w for g, w in zip(grid, window))
        return int(np.prod(window_grid)), window_grid

    def token_counts(self) -> List[int]:
        """Sequence length after every reducer, starting with the patch-embedding count."""
        return [self.num_tokens] + [p.n_out for p in self.layer_plan() if p.reducer is not None]

    @classmethod
    def from_dict(cls, doc: dict) -> 'ViTConfig':
        doc = dict(doc)
        doc.pop('kind', None)
        schedule = tuple(ReducerEntry.from_dict(e) for e in doc.pop('spm_schedule', []))
        return cls(spm_schedule=schedule, **doc)

    def to_dict(self) -> dict:
        return {
            'kind': VIT,
            'name': self.name,
            'depth': self.depth,
            'embed_dim': self.embed_dim,
            'num_heads': self.num_heads,
            'mlp_ratio': self.mlp_ratio,
            'patch': list(self.patch),
            'input': list(self.input),
            'num_classes': self.num_classes,
            'head_type': self.head_type,
            'spm_schedule': [e.to_dict() for e in self.spm_schedule],
        }


@dataclass(frozen=True)
class StageConfig:
    blocks: int
    dim: int
    heads: int
    q_stride: Triple = UNIT
    kv_stride: Triple = UNIT
    spm_window: Union[None, str, Triple] = None     # None inherits the model-level SPM window

    def __post_init__(self):
        object.__setattr__(self, 'q_stride', _triple(self.q_stride))
        object.__setattr__(self, 'kv_stride', _triple(self.kv_stride))
        if self.spm_window not in (None, GLOBAL):
            object.__setattr__(self, 'spm_window', _triple(self.spm_window))

    @classmethod
    def from_dict(cls, doc: dict) -> 'StageConfig':
        return cls(**doc)

    def to_dict(self) -> dict:
        doc = {'blocks': self.blocks, 'dim': self.dim, 'heads': self.heads,
               'q_stride': list(self.q_stride), 'kv_stride': list(self.kv_stride)}
        if self.spm_window is not None:
            doc['spm_window'] = self.spm_window if self.spm_window == GLOBAL else list(self.spm_window)
        return doc


@dataclass(frozen=True)
class BlockPlan:
    """Geometry of one multi-scale block (``index`` is 1-based and global)."""
    index: int
    stage: int
    dim_in: int
    dim_out: int
    heads: int
    grid_in: Triple
    grid_q: Triple
    grid_kv: Triple
    q_stride: Triple
    kv_stride: Triple
    semantic: bool = False
    spm: Optional[SPMConfig] = None

    @property
    def transition(self) -> bool:
        return self.q_stride != UNIT

    @property
    def n_in(self) -> int:
        return int(np.prod(self.grid_in))

    @property
    def n_q(self) -> int:
        return int(np.prod(self.grid_q))

    @property
    def n_kv(self) -> int:
        """Key/value count: the pooled grid, or N_win * M for semantic attention."""
        if self.semantic:
            return self.spm.output_count(self.n_in, self.grid_in)
        return int(np.prod(self.grid_kv))


@dataclass(frozen=True)
class MViTConfig:
    """
    Multi-scale backbone.

    The first block of every stage after the first carries that stage's
    q-stride and widens channels; every ``semantic_attention_period``-th block
    (counted globally) swaps its attention for semantic attention, moving one
    block later when it would land on a stage transition.
    """
    name: str
    input: Tuple[int, int, int, int]
    num_classes: int
    stem_kernel: Triple
    stem_stride: Triple
    stages: Tuple[StageConfig, ...]
    kernel_q: Triple = (3, 3, 3)
    kernel_kv: Triple = (3, 3, 3)
    mlp_ratio: float = 4.0
    semantic_attention_period: Optional[int] = None
    spm: Optional[SPMConfig] = None

    kind = MVIT

    def __post_init__(self):
        for f in ('stem_kernel', 'stem_stride', 'kernel_q', 'kernel_kv'):
            object.__setattr__(self, f, _triple(getattr(self, f)))
        object.__setattr__(self, 'input', tuple(int(i) for i in self.input))
        object.__setattr__(self, 'stages', tuple(self.stages))
        if not self.stages:
            raise ConfigError(f"{self.name}: at least one stage is required")
        if any(k <= s for k, s in zip(self.stem_kernel, self.stem_stride)):
            raise ConfigError(f"{self.name}: stem kernel {self.stem_kernel} must overlap, i.e. exceed "
                              f"stride {self.stem_stride}")
        if self.stages[0].q_stride != UNIT:
            raise ConfigError(f"{self.name}: the first stage cannot downsample queries")
        for prev, stage in zip(self.stages, self.stages[1:]):
            if stage.dim != 2 * prev.dim:
                raise ConfigError(f"{self.name}: channel width must double across stages, got {prev.dim}->{stage.dim}")
            if stage.q_stride == UNIT:
                raise ConfigError(f"{self.name}: every stage boundary needs a q-stride")
        if self.semantic_attention_period is not None:
            if self.spm is None:
                raise ConfigError(f"{self.name}: semantic attention needs SPM settings")
            if self.spm.keep != 0 or self.spm.variant != ELITISM:
                raise ConfigError(f"{self.name}: semantic attention pools with elitism and keeps no originals")
            if not self.spm.adopt_orphans:
                object.__setattr__(self, 'spm', dataclasses.replace(self.spm, adopt_orphans=True))
        self.block_plan()

    @property
    def depth(self) -> int:
        return sum(s.blocks for s in self.stages)

    @property
    def stem_grid(self) -> Triple:
        return output_grid(self.input[:3], self.stem_kernel, self.stem_stride)

    def transition_blocks(self) -> List[int]:
        starts, index = [], 1
        for s, stage in enumerate(self.stages):
            if s > 0:
                starts.append(index)
            index += stage.blocks
        return starts

    def semantic_blocks(self) -> List[int]:
        """1-based indices of semantic attention blocks."""
        if self.semantic_attention_period is None:
            return []
        period, depth = self.semantic_attention_period, self.depth
        transitions = set(self.transition_blocks())
        chosen = []
        for target in range(period, depth + 1, period):
            index = target
            while index <= depth and (index in transitions or index in chosen):
                index += 1
            if index > depth:
                logger.warning(f"{self.name}: semantic block for period slot {target} runs past depth {depth}")
                continue
            if index != target:
                logger.debug(f"{self.name}: semantic block {target} collides with a stage transition, "
                             f"moved to {index}")
            chosen.append(index)
        return chosen

    def stage_spm(self, stage: int) -> SPMConfig:
        window = self.stages[stage].spm_window
        if window is None:
            return self.spm
        return dataclasses.replace(self.spm, window=None if window == GLOBAL else window)

    def block_plan(self) -> List[BlockPlan]:
        plans = []
        semantic = set(self.semantic_blocks())
        grid = self.stem_grid
        dim = self.stages[0].dim
        index = 1
        for s, stage in enumerate(self.stages):
            for b in range(stage.blocks):
                q_stride = stage.q_stride if b == 0 and s > 0 else UNIT
                if dim % stage.heads:
                    raise ConfigError(f"{self.name} block {index}: width {dim} is not divisible by {stage.heads} heads")
                try:
                    grid_q = output_grid(grid, self.kernel_q, q_stride)
                    grid_kv = output_grid(grid, self.kernel_kv, stage.kv_stride)
                except (ConfigError, ArgumentError) as e:
                    raise ConfigError(f"{self.name} block {index}: {e}")
                spm = None
                if index in semantic:
                    spm = self.stage_spm(s)
                    try:
                        spm.check_width(dim)
                        spm.plan_windows(int(np.prod(grid)), grid)
                    except ConfigError as e:
                        raise ConfigError(f"{self.name} block {index}: {e}")
                plans.append(BlockPlan(index, s, dim, stage.dim, stage.heads, grid, grid_q, grid_kv,
                                       q_stride, stage.kv_stride, index in semantic, spm))
                grid, dim = grid_q, stage.dim
                index += 1
        return plans

    @classmethod
    def from_dict(cls, doc: dict) -> 'MViTConfig':
        doc = dict(doc)
        doc.pop('kind', None)
        stages = tuple(StageConfig.from_dict(s) for s in doc.pop('stages'))
        spm = doc.pop('spm', None)
        if spm is not None:
            spm = dict(spm)
            spm.setdefault('theta', MULTI_SCALE_THETA)
            spm = SPMConfig.from_dict(spm)
        return cls(stages=stages, spm=spm, **doc)

    def to_dict(self) -> dict:
        doc = {
            'kind': MVIT,
            'name': self.name,
            'input': list(self.input),
            'num_classes': self.num_classes,
            'stem_kernel': list(self.stem_kernel),
            'stem_stride': list(self.stem_stride),
            'stages': [s.to_dict() for s in self.stages],
            'kernel_q': list(self.kernel_q),
            'kernel_kv': list(self.kernel_kv),
            'mlp_ratio': self.mlp_ratio,
            'semantic_attention_period': self.semantic_attention_period,
        }
        if self.spm is not None:
            doc['spm'] = self.spm.to_dict()
        return doc


ModelConfig = Union[ViTConfig, MViTConfig]


def model_from_dict(doc: dict, source: str = '<document>') -> ModelConfig:
    validate_document(doc, 'model', source)
    try:
        return ViTConfig.from_dict(doc) if doc['kind'] == VIT else MViTConfig.from_dict(doc)
    except TypeError as e:
        raise ConfigError(f"{source}: {e}")


def load_model_config(path: str) -> ModelConfig:
    return model_from_dict(load_document(path, 'model'), source=path)
