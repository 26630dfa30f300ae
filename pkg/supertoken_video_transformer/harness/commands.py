"""
Handlers behind the ``app.py`` subcommands.

Each handler takes the parsed argparse namespace, logs what it does and
returns an exit code. Library errors propagate so ``app.py`` can map them to
exit codes; they are logged here first with their traceback.
"""
import functools
import logging
import os
import sys
from typing import List, Optional, Tuple

from ..audit import audit, compare
from ..audit.report import format_table, write_ledger_csv
from ..errors import ArgumentError, ConfigError
from ..models import build_model
from ..models.checkpoint import load_checkpoint
from ..models.config import ModelConfig, model_from_dict
from ..models.schema import read_json
from .ablation import run_ablation
from .dataset import generate_dataset, save_dataset
from .experiment import Experiment, experiment_from_dict, load_experiment
from .export import export_pool_membership, export_score_heatmaps, export_token_embeddings
from .training import evaluate, init_rng, metrics_row, run_experiment, write_metrics

logger = logging.getLogger(__name__)


def logged(name: str):
    def wrap(handler):
        @functools.wraps(handler)
        def run(args) -> int:
            try:
                return handler(args)
            except Exception as e:
                logger.error(f"{name} failed: {e}", exc_info=True)
                raise
        return run
    return wrap


def parse_views(text: str) -> Tuple[int, int]:
    """``'3x7'`` -> (3, 7)."""
    try:
        temporal, spatial = (int(v) for v in text.lower().split('x'))
    except ValueError:
        raise ArgumentError(f"views must look like 3x7, got '{text}'")
    return temporal, spatial


def parse_layers(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ArgumentError(f"layers must be comma-separated integers, got '{text}'")


def load_model_or_experiment(path: str) -> ModelConfig:
    """A model document, or the model of an experiment document."""
    doc = read_json(path)
    if isinstance(doc, dict) and 'kind' in doc:
        return model_from_dict(doc, source=path)
    return experiment_from_dict(doc, os.path.dirname(os.path.abspath(path)), source=path).model


def _model(exp: Experiment, checkpoint: Optional[str]):
    model = build_model(exp.model, init_rng(exp.seed))
    if checkpoint:
        load_checkpoint(model, checkpoint)
    return model


def hosts_pooling(model, layer: int) -> bool:
    spms = getattr(model, 'spms', None)
    if spms is not None:
        return layer in spms
    return 1 <= layer <= len(model.plan) and model.plan[layer - 1].semantic


@logged('generate')
def cmd_generate(args) -> int:
    exp = load_experiment(args.config, args.seed)
    save_dataset(exp.dataset, generate_dataset(exp.dataset), args.out)
    return 0


@logged('train')
def cmd_train(args) -> int:
    exp = load_experiment(args.config, args.seed)
    result = run_experiment(exp, args.out)
    print(f"{exp.name}: val top1 {result.val_top1:.4f}, val loss {result.val_loss:.4f}, checkpoint {result.checkpoint}")
    return 0


@logged('eval')
def cmd_eval(args) -> int:
    exp = load_experiment(args.config, args.seed)
    model = _model(exp, args.checkpoint)
    loss, acc = evaluate(model, generate_dataset(exp.dataset)['val'], exp.train.batch_size)
    report = audit(exp.model)
    write_metrics([metrics_row(exp.train.steps, 'val', loss, acc, report.gflops, report.final_tokens)],
                  os.path.join(args.out, 'eval.csv'))
    print(f"{exp.name}: val top1 {acc:.4f}, val loss {loss:.4f}")
    return 0


@logged('audit')
def cmd_audit(args) -> int:
    cfg = load_model_or_experiment(args.config)
    views = parse_views(args.views)
    comparison = None
    if args.baseline:
        comparison = compare(cfg, load_model_or_experiment(args.baseline), views=views)
        report = comparison.report
    else:
        report = audit(cfg, views=views)
    sys.stdout.write(format_table(report, comparison))
    if args.out:
        write_ledger_csv(report, os.path.join(args.out, f"{cfg.name}_ledger.csv"))
    return 0


@logged('ablate')
def cmd_ablate(args) -> int:
    print(run_ablation(args.config, args.out, args.seed))
    return 0


@logged('export-maps')
def cmd_export_maps(args) -> int:
    exp = load_experiment(args.config, args.seed)
    model = _model(exp, args.checkpoint)
    split = generate_dataset(exp.dataset)['val']
    if not 0 <= args.clip < len(split):
        raise ArgumentError(f"clip {args.clip} is outside the {len(split)} validation clips")
    clip = split.videos[args.clip]
    prefix = f"clip{args.clip:04d}"
    export_score_heatmaps(model, clip, args.layer, os.path.join(args.out, 'heatmaps'), prefix)
    if hosts_pooling(model, args.layer):
        export_pool_membership(model, clip, args.layer, os.path.join(args.out, 'membership'), prefix)
    return 0


@logged('export-embeddings')
def cmd_export_embeddings(args) -> int:
    exp = load_experiment(args.config, args.seed)
    model = _model(exp, args.checkpoint)
    split = generate_dataset(exp.dataset)['val']
    layers = parse_layers(args.layers) if args.layers else list(range(len(model.blocks) + 1))
    n = min(args.clips, len(split))
    export_token_embeddings(model, split.videos[:n], split.labels[:n], layers,
                            os.path.join(args.out, 'embeddings.csv'))
    return 0


HANDLERS = {
    'generate': cmd_generate,
    'train': cmd_train,
    'eval': cmd_eval,
    'audit': cmd_audit,
    'ablate': cmd_ablate,
    'export-maps': cmd_export_maps,
    'export-embeddings': cmd_export_embeddings,
}


def seed_or_none(value: Optional[str]) -> Optional[int]:
    """Seed from --seed, SVT_SEED or config.ini; blank means the document seed."""
    if value is None or str(value).strip() == '':
        return None
    try:
        seed = int(str(value).strip())
    except ValueError:
        raise ConfigError(f"seed must be an integer, got {value!r}") from None
    if not 0 <= seed < 2 ** 64:
        raise ConfigError(f"seed must fit an unsigned 64-bit integer, got {seed}")
    return seed

