"""
Training and evaluation loop.

One Tape per batch, clips forwarded one at a time and their logits stacked
before the softmax cross-entropy. Batches are drawn from a generator seeded
by the run seed alone, so a fixed seed determines every number written.
"""
import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..audit import audit
from ..core import ops
from ..core.module import Module
from ..core.tensor import DArray, Tape
from ..errors import NumericalAbort
from ..models import build_model
from ..models.checkpoint import save_checkpoint
from ..models.config import ModelConfig
from .dataset import Split, generate_dataset
from .experiment import Experiment
from .optim import TrainConfig, clip_grad_norm, lr_at, make_optimizer

logger = logging.getLogger(__name__)

METRIC_FIELDS = ['step', 'split', 'loss', 'top1', 'flops_g', 'tokens_final']
METRICS_FILE = 'metrics.csv'
CHECKPOINT_FILE = 'checkpoint.svt'


@dataclass
class TrainResult:
    metrics: List[Dict[str, object]] = field(default_factory=list)
    checkpoint: Optional[str] = None
    val_loss: float = float('nan')
    val_top1: float = float('nan')


def init_rng(seed: int) -> np.random.Generator:
    """Generator used for parameter initialization."""
    return np.random.default_rng([seed, 0])


def batch_logits(model: Module, videos: np.ndarray) -> DArray:
    return ops.concat([model(v) for v in videos], axis=0)


def top1(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate(model: Module, split: Split, batch_size: int = 16) -> Tuple[float, float]:
    """Mean loss and top-1 accuracy over a whole split, without recording a tape."""
    total_loss, correct = 0.0, 0
    for start in range(0, len(split), batch_size):
        videos = split.videos[start:start + batch_size]
        labels = split.labels[start:start + batch_size]
        logits = batch_logits(model, videos)
        total_loss += ops.cross_entropy(logits, labels).item() * len(labels)
        correct += int(np.sum(np.argmax(logits.data, axis=1) == labels))
    n = len(split)
    return total_loss / n, correct / n


def _abort(tape: Tape, step: int) -> NumericalAbort:
    found = tape.first_nonfinite()
    if found is None:
        return NumericalAbort(f"step {step}: non-finite loss, no recorded op produced it")
    index, op = found
    return NumericalAbort(f"step {step}: non-finite loss; first non-finite value produced by op '{op}' "
                          f"(#{index} of {len(tape.records)} on the tape)", op=op)


def metrics_row(step: int, split: str, loss: float, acc: float, flops_g: float, tokens: int) -> Dict[str, object]:
    return {'step': step, 'split': split, 'loss': format(loss, '.17g'), 'top1': format(acc, '.6f'),
            'flops_g': format(flops_g, '.6f'), 'tokens_final': tokens}


def write_metrics(rows: List[Dict[str, object]], path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=METRIC_FIELDS, lineterminator='\n')
        writer.writeheader()
        writer.writerows(rows)


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, splits: Dict[str, Split],
          out_dir: Optional[str] = None, model: Optional[Module] = None) -> TrainResult:
    """
    Train ``model_cfg`` on ``splits['train']`` and evaluate on ``splits['val']``.

    Args:
        model_cfg: Backbone configuration.
        train_cfg: Optimizer, schedule, budget and seed.
        splits: Output of generate_dataset.
        out_dir: When given, receives ``metrics.csv`` and ``checkpoint.svt``.
        model: Pre-built model to continue from; built from the seed otherwise.

    Returns:
        TrainResult with every metrics row and the final validation numbers.

    Raises:
        NumericalAbort: The loss became NaN or infinite.
    """
    if model is None:
        model = build_model(model_cfg, init_rng(train_cfg.seed))
    report = audit(model_cfg)
    flops_g, tokens = report.gflops, report.final_tokens
    optimizer = make_optimizer(list(model.named_parameters()), train_cfg)
    params = model.parameters()
    train_split, val_split = splits['train'], splits['val']
    rng = np.random.default_rng([train_cfg.seed, 1])
    n = len(train_split)
    result = TrainResult()
    logger.info(f"Training {model_cfg.name}: {train_cfg.steps} steps, batch {train_cfg.batch_size}, "
                f"{train_cfg.optimizer} lr {train_cfg.lr}, {flops_g:.4f} GFLOPs per clip")

    for step in range(train_cfg.steps):
        idx = rng.choice(n, size=train_cfg.batch_size, replace=train_cfg.batch_size > n)
        labels = train_split.labels[idx]
        model.zero_grad()
        with Tape() as tape:
            logits = batch_logits(model, train_split.videos[idx])
            loss = ops.cross_entropy(logits, labels)
        value = loss.item()
        if not np.isfinite(value):
            raise _abort(tape, step)
        tape.backward(loss)
        if train_cfg.clip_norm is not None:
            clip_grad_norm(params, train_cfg.clip_norm)
        optimizer.step(lr_at(step, train_cfg))
        acc = top1(logits.data, labels)
        result.metrics.append(metrics_row(step, 'train', value, acc, flops_g, tokens))
        logger.debug(f"step {step}: loss {value:.4f} top1 {acc:.3f}")
        if train_cfg.eval_every and (step + 1) % train_cfg.eval_every == 0 and step + 1 < train_cfg.steps:
            val_loss, val_acc = evaluate(model, val_split, train_cfg.batch_size)
            result.metrics.append(metrics_row(step, 'val', val_loss, val_acc, flops_g, tokens))
            logger.info(f"step {step}: train loss {value:.4f}, val loss {val_loss:.4f}, val top1 {val_acc:.3f}")

    result.val_loss, result.val_top1 = evaluate(model, val_split, train_cfg.batch_size)
    result.metrics.append(metrics_row(train_cfg.steps, 'val', result.val_loss, result.val_top1, flops_g, tokens))
    logger.info(f"Finished {model_cfg.name}: val loss {result.val_loss:.4f}, val top1 {result.val_top1:.3f}")
    if out_dir is not None:
        write_metrics(result.metrics, os.path.join(out_dir, METRICS_FILE))
        result.checkpoint = os.path.join(out_dir, CHECKPOINT_FILE)
        save_checkpoint(model, result.checkpoint)
    return result


def run_experiment(exp: Experiment, out_dir: Optional[str] = None) -> TrainResult:
    """Regenerate the experiment's dataset from its spec and train on it."""
    return train(exp.model, exp.train, generate_dataset(exp.dataset), out_dir)
