"""
Analytical cost ledger.

Counts multiply-accumulates with 1 MAC = 1 FLOP. Only contractions are
counted (linear layers, attention products, convolutions, pooling sums);
softmax, normalization, activations and max pooling are free. Every term
mirrors one ``matmul``/``linear``/``grouped_conv3d`` call of the forward pass,
so on any config the ledger equals the MACs a MacCounter records.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ArgumentError
from ..models.config import SPM, BlockPlan, ModelConfig, MViTConfig, ViTConfig
from ..models.mvit import pooling_active
from ..spm.config import SPMConfig

logger = logging.getLogger(__name__)

GIGA = 1e9


@dataclass(frozen=True)
class FlopRow:
    layer: str
    kind: str
    tokens_in: int
    tokens_out: int
    macs: int
    params: int


@dataclass
class FlopReport:
    model: str
    input: Tuple[int, ...]
    rows: List[FlopRow] = field(default_factory=list)
    views: Tuple[int, int] = (1, 1)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def gflops(self) -> float:
        """Per-view GFLOPs."""
        return self.total_macs / GIGA

    @property
    def view_count(self) -> int:
        return self.views[0] * self.views[1]

    @property
    def total_gflops(self) -> float:
        return self.gflops * self.view_count

    @property
    def final_tokens(self) -> int:
        body = [r for r in self.rows if r.kind != 'head']
        return body[-1].tokens_out if body else 0

    def add(self, layer: str, kind: str, tokens_in: int, tokens_out: int, macs: int, params: int) -> None:
        self.rows.append(FlopRow(layer, kind, int(tokens_in), int(tokens_out), int(macs), int(params)))

    def label(self) -> str:
        return f"{self.gflops:.0f}x{self.views[0]}x{self.views[1]}"


@dataclass(frozen=True)
class Comparison:
    report: FlopReport
    baseline: FlopReport

    @property
    def reduction(self) -> float:
        """1 - flops / baseline flops."""
        return 1.0 - self.report.total_macs / self.baseline.total_macs

    @property
    def saved_gflops(self) -> float:
        return self.baseline.gflops - self.report.gflops


def _linear(n: int, c_in: int, c_out: int) -> int:
    return n * c_in * c_out


def _spm_cost(spm: SPMConfig, n: int, width: int, n_out: int) -> Tuple[int, int]:
    """Scoring plus pooling are M * N * C each over all heads, projection N_r * C^2."""
    macs = 2 * spm.num_prototypes * n * width
    params = spm.num_prototypes * width
    if spm.output_projection:
        macs += _linear(n_out, width, width)
        params += width * width + width
    return macs, params


def _audit_vit(cfg: ViTConfig, report: FlopReport) -> None:
    c, n0 = cfg.embed_dim, cfg.num_tokens
    tube = int(np.prod(cfg.patch)) * cfg.input[3]
    report.add('patch_embed', 'patch_embed', n0, n0, _linear(n0, tube, c), tube * c + c + n0 * c)
    hidden = int(c * cfg.mlp_ratio)
    block_params = (3 * c * c + 3 * c) + (c * c + c) + (c * hidden + hidden + hidden * c + c) + 4 * c
    for plan in cfg.layer_plan():
        n = plan.n_in
        macs = _linear(n, c, 3 * c) + 2 * n * n * c + _linear(n, c, c) + _linear(n, c, hidden) + _linear(n, hidden, c)
        report.add(f'block{plan.layer}', 'attention', n, n, macs, block_params)
        entry = plan.reducer
        if entry is None:
            continue
        if entry.reducer == SPM:
            macs, params = _spm_cost(entry.spm, n, c, plan.n_out)
            report.add(f'spm{plan.layer}', f'spm_{entry.spm.variant}', n, plan.n_out, macs, params)
        else:
            report.add(f'{entry.reducer}{plan.layer}', entry.reducer, n, plan.n_out, 0, 0)
    final = cfg.layer_plan()[-1].n_out if cfg.depth else n0
    report.add('head', 'head', final, 1, _linear(1, c, cfg.num_classes), c * cfg.num_classes + cfg.num_classes)


def _mvit_block(cfg: MViTConfig, plan: BlockPlan) -> Tuple[int, int]:
    c, c_out = plan.dim_in, plan.dim_out
    n, n_q = plan.n_in, plan.n_q
    kq, kkv = int(np.prod(cfg.kernel_q)), int(np.prod(cfg.kernel_kv))
    hidden = int(c * cfg.mlp_ratio)
    relpos = sum(2 * e - 1 for e in plan.grid_in) * plan.heads
    macs = _linear(n, c, c) + _linear(n_q, c, c)                      # fc_q, fc_o
    params = 4 * (c * c + c) + relpos + 4 * c
    q_on = pooling_active(cfg.kernel_q, plan.q_stride)
    if q_on:
        macs += n_q * kq * c
        params += kq * c
    if plan.semantic:
        spm = plan.spm
        m = spm.num_prototypes
        n_kv = plan.n_kv
        spm_macs, spm_params = _spm_cost(spm, n, c, n_kv)
        macs += spm_macs + 2 * _linear(n_kv, c, c)
        params += spm_params
        if pooling_active(cfg.kernel_kv, (1, 1, 1)):
            n_win = n_kv // m
            macs += 2 * n_win * kkv * m * c
            params += 2 * kkv * m * c
    else:
        n_kv = plan.n_kv
        macs += 2 * _linear(n, c, c)
        if pooling_active(cfg.kernel_kv, plan.kv_stride):
            macs += 2 * n_kv * kkv * c
            params += 2 * kkv * c
        else:
            n_kv = n
    macs += 2 * n_q * n_kv * c                                        # q k^T and attn v
    macs += _linear(n_q, c, hidden) + _linear(n_q, hidden, c_out)
    params += c * hidden + hidden + hidden * c_out + c_out
    if c != c_out:
        macs += _linear(n_q, c, c_out)
        params += c * c_out + c_out
    return macs, params


def _audit_mvit(cfg: MViTConfig, report: FlopReport) -> None:
    ch, dim = cfg.input[3], cfg.stages[0].dim
    grid = cfg.stem_grid
    n0 = int(np.prod(grid))
    kvol = int(np.prod(cfg.stem_kernel))
    pixels = int(np.prod(cfg.input[:3]))
    report.add('stem', 'stem', pixels, n0, n0 * kvol * ch * dim, kvol * ch * dim + dim)
    for plan in cfg.block_plan():
        macs, params = _mvit_block(cfg, plan)
        kind = 'semantic_attention' if plan.semantic else 'pooling_attention'
        report.add(f'block{plan.index}', kind, plan.n_in, plan.n_q, macs, params)
    plans = cfg.block_plan()
    width = cfg.stages[-1].dim
    report.add('head', 'head', plans[-1].n_q, 1, _linear(1, width, cfg.num_classes),
               2 * width + width * cfg.num_classes + cfg.num_classes)


def audit(cfg: ModelConfig, input: Optional[Sequence[int]] = None, views: Sequence[int] = (1, 1)) -> FlopReport:
    """
    Per-layer MAC and parameter ledger of ``cfg``.

    Args:
        cfg: Model configuration.
        input: Optional (frames, height, width, channels) replacing the configured clip size.
        views: (temporal, spatial) test-time view counts, reported as a multiplier only.
    """
    if input is not None and tuple(input) != cfg.input:
        cfg = dataclasses.replace(cfg, input=tuple(int(i) for i in input))
    views = tuple(int(v) for v in views)
    if len(views) != 2 or min(views) < 1:
        raise ArgumentError(f"views must be two positive counts, got {views}")
    report = FlopReport(cfg.name, cfg.input, views=views)
    if isinstance(cfg, ViTConfig):
        _audit_vit(cfg, report)
    else:
        _audit_mvit(cfg, report)
    logger.info(f"Audited {cfg.name}: {report.gflops:.2f} GFLOPs per view, {report.total_params:,} params")
    return report


def compare(cfg: ModelConfig, baseline: ModelConfig, input: Optional[Sequence[int]] = None,
            views: Sequence[int] = (1, 1)) -> Comparison:
    if input is None and cfg.input != baseline.input:
        raise ArgumentError(f"cannot compare {cfg.name} at {cfg.input} with {baseline.name} at {baseline.input}")
    comparison = Comparison(audit(cfg, input, views), audit(baseline, input, views))
    logger.info(f"{cfg.name} vs {baseline.name}: {100 * comparison.reduction:.1f}% fewer FLOPs")
    return comparison
