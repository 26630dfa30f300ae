"""Synthetic data, training, exports, ablation sweeps and the CLI command handlers."""
from .dataset import SyntheticVideoSpec, generate_dataset
from .experiment import Experiment, load_experiment
from .optim import TrainConfig
from .training import TrainResult, evaluate, train

__all__ = ['Experiment', 'SyntheticVideoSpec', 'TrainConfig', 'TrainResult', 'evaluate', 'generate_dataset',
           'load_experiment', 'train']
