import json

import pytest

from supertoken_video_transformer.errors import ConfigError
from supertoken_video_transformer.harness.experiment import experiment_from_dict, load_experiment
from tests.helpers import config_path, micro_experiment_doc

EXPERIMENTS = ['smoke', 'tiny_vit_binary', 'tiny_vit_8class', 'tiny_vit_spm_8class', 'tiny_vit_spm_hier_8class',
               'tiny_mvit_8class', 'tiny_mvit_spm_8class']


@pytest.mark.parametrize('name', EXPERIMENTS)
def test_shipped_experiments_load(name):
    exp = load_experiment(config_path('experiments', f'{name}.json'))
    assert exp.dataset.clip_shape == exp.model.input
    assert exp.dataset.num_classes == exp.model.num_classes


def test_seed_override_reaches_dataset_and_training():
    exp = experiment_from_dict(micro_experiment_doc(), seed=11)
    assert exp.seed == exp.dataset.seed == exp.train.seed == 11
    assert experiment_from_dict(micro_experiment_doc()).seed == 3


def test_model_path_is_relative_to_document(tmp_path):
    (tmp_path / 'models').mkdir()
    doc = micro_experiment_doc()
    (tmp_path / 'models' / 'micro.json').write_text(json.dumps(doc['model']))
    doc['model'] = 'models/micro.json'
    path = tmp_path / 'exp.json'
    path.write_text(json.dumps(doc))
    assert load_experiment(str(path)).model.name == 'micro'


def test_clip_shape_mismatch():
    doc = micro_experiment_doc()
    doc['dataset']['frames'] = 4
    with pytest.raises(ConfigError, match='do not match model input'):
        experiment_from_dict(doc)


def test_class_count_mismatch():
    doc = micro_experiment_doc()
    doc['dataset']['num_classes'] = 4
    with pytest.raises(ConfigError, match='classes'):
        experiment_from_dict(doc)


def test_unknown_train_key():
    doc = micro_experiment_doc()
    doc['train']['momentumm'] = 0.9
    with pytest.raises(ConfigError, match='momentumm'):
        experiment_from_dict(doc)
