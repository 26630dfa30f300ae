import logging
import os
from dataclasses import dataclass
from typing import Optional

from ..errors import ConfigError
from ..models.config import ModelConfig, load_model_config, model_from_dict
from ..models.schema import load_document, validate_document
from .dataset import SyntheticVideoSpec
from .optim import TrainConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Experiment:
    name: str
    seed: int
    model: ModelConfig
    dataset: SyntheticVideoSpec
    train: TrainConfig


def experiment_from_dict(doc: dict, base_dir: str = '.', source: str = '<document>',
                         seed: Optional[int] = None) -> Experiment:
    """
    Build an Experiment from a parsed document.

    Args:
        doc: Experiment document; ``model`` is an inline model document or a
            path relative to ``base_dir``.
        base_dir: Directory model paths are resolved against.
        source: Name used in error messages.
        seed: Overrides the document's seed when given.
    """
    validate_document(doc, 'experiment', source)
    seed = int(doc.get('seed', 0) if seed is None else seed)
    model_doc = doc['model']
    if isinstance(model_doc, str):
        model = load_model_config(os.path.join(base_dir, model_doc))
    else:
        model = model_from_dict(model_doc, source=f"{source}: model")
    try:
        dataset = SyntheticVideoSpec.from_dict(doc['dataset'], seed=seed)
        train = TrainConfig.from_dict(doc['train'], seed=seed)
    except TypeError as e:
        raise ConfigError(f"{source}: {e}")
    clip = dataset.clip_shape
    if clip != model.input:
        raise ConfigError(f"{source}: dataset clips {clip} do not match model input {model.input}")
    if dataset.num_classes != model.num_classes:
        raise ConfigError(f"{source}: dataset has {dataset.num_classes} classes, model predicts {model.num_classes}")
    return Experiment(doc['name'], seed, model, dataset, train)


def load_experiment(path: str, seed: Optional[int] = None) -> Experiment:
    doc = load_document(path, 'experiment')
    exp = experiment_from_dict(doc, os.path.dirname(os.path.abspath(path)), source=path, seed=seed)
    logger.info(f"Loaded experiment {exp.name} ({exp.model.name}, seed {exp.seed})")
    return exp
