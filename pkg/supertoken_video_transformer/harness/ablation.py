"""
Ablation sweeps: one base experiment, a list of labelled dotted-path overrides.

Every variant is resolved and validated before the first one trains, so a
typo in the last variant aborts the sweep instead of an hour into it.
"""
import copy
import csv
import logging
import os
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

from ..audit import audit
from ..errors import ConfigError
from ..models.schema import load_document, read_json
from .experiment import Experiment, experiment_from_dict
from .training import TrainResult, run_experiment

logger = logging.getLogger(__name__)

RESULT_FIELDS = ['variant', 'model', 'val_top1', 'val_loss', 'gflops', 'params', 'tokens']


@dataclass
class Variant:
    label: str
    experiment: Experiment


def apply_override(doc: Dict[str, Any], dotted: str, value: Any) -> None:
    """Set ``doc[a][b][0]...`` for ``dotted = 'a.b.0...'``; every segment but the last must exist."""
    keys = dotted.split('.')
    node = doc
    for depth, key in enumerate(keys):
        last = depth == len(keys) - 1
        where = '.'.join(keys[:depth + 1])
        if isinstance(node, list):
            if not key.isdigit() or int(key) >= len(node):
                raise ConfigError(f"override '{dotted}': no list entry at '{where}'")
            key = int(key)
        elif isinstance(node, dict):
            if not last and key not in node:
                raise ConfigError(f"override '{dotted}': no key at '{where}'")
        else:
            raise ConfigError(f"override '{dotted}': '{'.'.join(keys[:depth])}' is not a container")
        if last:
            node[key] = copy.deepcopy(value)
        else:
            node = node[key]


def resolve_variants(path: str, seed: Optional[int] = None) -> List[Variant]:
    """Load an ablation document and build every variant's Experiment, failing on the first invalid one."""
    doc = load_document(path, 'ablation')
    base_dir = os.path.dirname(os.path.abspath(path))
    base_path = os.path.join(base_dir, doc['base'])
    base = read_json(base_path)
    base_dir = os.path.dirname(base_path)
    if isinstance(base.get('model'), str):
        base['model'] = read_json(os.path.join(base_dir, base['model']))
    variants = []
    for entry in doc['variants']:
        label = entry['label']
        resolved = copy.deepcopy(base)
        for dotted, value in entry.get('overrides', {}).items():
            apply_override(resolved, dotted, value)
        try:
            exp = experiment_from_dict(resolved, base_dir, source=f"{path} [{label}]", seed=seed)
        except ConfigError as e:
            raise ConfigError(f"ablation {doc['name']} aborted before training: {e}")
        variants.append(Variant(label, exp))
    logger.info(f"Ablation {doc['name']}: {len(variants)} variants validated")
    return variants


def result_row(variant: Variant, result: TrainResult) -> Dict[str, Any]:
    report = audit(variant.experiment.model)
    counts = [r.tokens_out for r in report.rows if r.kind != 'head']
    changes = [counts[0]] + [b for a, b in zip(counts, counts[1:]) if b != a]
    return {'variant': variant.label, 'model': variant.experiment.model.name,
            'val_top1': format(result.val_top1, '.6f'), 'val_loss': format(result.val_loss, '.17g'),
            'gflops': format(report.gflops, '.6f'), 'params': report.total_params,
            'tokens': '/'.join(str(c) for c in changes)}


def run_ablation(path: str, out_dir: str, seed: Optional[int] = None,
                 runner: Callable[[Experiment, Optional[str]], TrainResult] = run_experiment) -> str:
    """
    Train every variant under the same seed and budget, write ``results.csv``.

    Each variant's metrics and checkpoint land in ``out_dir/<label>/``.
    Returns the results path.
    """
    variants = resolve_variants(path, seed)
    rows = []
    for variant in variants:
        logger.info(f"Ablation variant {variant.label}")
        result = runner(variant.experiment, os.path.join(out_dir, variant.label))
        rows.append(result_row(variant, result))
    os.makedirs(out_dir, exist_ok=True)
    results = os.path.join(out_dir, 'results.csv')
    with open(results, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=RESULT_FIELDS, lineterminator='\n')
        writer.writeheader()
        writer.writerows(rows)
    logger.info(f"Ablation results written to {results}")
    return results
