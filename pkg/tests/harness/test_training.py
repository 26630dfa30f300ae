import csv
import json
import os
import time

import numpy as np
import pytest

from supertoken_video_transformer.audit import compare
from supertoken_video_transformer.errors import NumericalAbort
from supertoken_video_transformer.harness.dataset import generate_dataset
from supertoken_video_transformer.harness.experiment import experiment_from_dict, load_experiment
from supertoken_video_transformer.harness.training import (METRIC_FIELDS, evaluate, init_rng, run_experiment,
                                                           train)
from supertoken_video_transformer.models import build_model
from supertoken_video_transformer.models.checkpoint import load_checkpoint
from tests.helpers import CONFIGS, config_path, micro_experiment_doc

# Full-size runs on the tiny presets take minutes each; opt in with SVT_SLOW_TESTS=1.
slow = pytest.mark.skipif(not os.getenv('SVT_SLOW_TESTS'), reason='set SVT_SLOW_TESTS=1 to train the tiny presets')
RUN_BUDGET_S = 30 * 60
BASELINE_FILE = os.path.join(CONFIGS, 'baselines', 'tiny_vit_8class.json')


@pytest.fixture
def exp():
    return experiment_from_dict(micro_experiment_doc())


def read_rows(path):
    with open(path, newline='') as f:
        return list(csv.DictReader(f))


def test_same_seed_gives_identical_files(exp, tmp_path):
    a = run_experiment(exp, str(tmp_path / 'a'))
    b = run_experiment(exp, str(tmp_path / 'b'))
    for name in ('metrics.csv', 'checkpoint.svt'):
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()
    assert a.val_loss == b.val_loss


def test_metrics_layout(exp, tmp_path):
    result = run_experiment(exp, str(tmp_path))
    rows = read_rows(tmp_path / 'metrics.csv')
    assert list(rows[0]) == METRIC_FIELDS
    assert [(r['step'], r['split']) for r in rows] == [('0', 'train'), ('1', 'train'), ('1', 'val'),
                                                      ('2', 'train'), ('3', 'val')]
    assert float(rows[-1]['loss']) == result.val_loss
    assert {r['tokens_final'] for r in rows} == {'4'}
    assert all(np.isfinite(float(r['loss'])) for r in rows)


def test_seed_changes_run(tmp_path):
    a = run_experiment(experiment_from_dict(micro_experiment_doc()), str(tmp_path / 'a'))
    b = run_experiment(experiment_from_dict(micro_experiment_doc(), seed=4), str(tmp_path / 'b'))
    assert a.val_loss != b.val_loss


def test_checkpoint_reproduces_final_evaluation(exp, tmp_path):
    result = run_experiment(exp, str(tmp_path))
    model = build_model(exp.model, init_rng(exp.seed + 1))
    load_checkpoint(model, result.checkpoint)
    loss, acc = evaluate(model, generate_dataset(exp.dataset)['val'], exp.train.batch_size)
    assert (loss, acc) == (result.val_loss, result.val_top1)


def test_zero_steps_only_evaluates(tmp_path):
    exp = experiment_from_dict(micro_experiment_doc(steps=0))
    result = run_experiment(exp, None)
    assert [r['split'] for r in result.metrics] == ['val']
    assert result.checkpoint is None


def test_non_finite_loss_names_the_op(exp):
    model = build_model(exp.model, init_rng(exp.seed))
    model.patch_embed.pos_embed.data[0, 0] = np.nan
    with pytest.raises(NumericalAbort, match="op 'add'") as info:
        train(exp.model, exp.train, generate_dataset(exp.dataset), model=model)
    assert info.value.op == 'add'
    assert info.value.exit_code == 3


def test_training_lowers_the_loss_on_a_fixed_batch():
    exp = experiment_from_dict(micro_experiment_doc(optimizer='adamw', lr=0.01, steps=30, batch_size=8,
                                                    eval_every=0))
    splits = generate_dataset(exp.dataset)
    splits['val'] = splits['train']
    model = build_model(exp.model, init_rng(exp.seed))
    before, _ = evaluate(model, splits['train'])
    result = train(exp.model, exp.train, splits, model=model)
    assert result.val_loss < before


@pytest.mark.parametrize('optimizer', ['sgd', 'adamw'])
def test_zero_learning_rate_changes_nothing(optimizer):
    exp = experiment_from_dict(micro_experiment_doc(optimizer=optimizer, lr=0.0, steps=4, batch_size=8,
                                                    eval_every=1))
    model = build_model(exp.model, init_rng(exp.seed))
    before = {name: p.data.copy() for name, p in model.named_parameters()}
    result = train(exp.model, exp.train, generate_dataset(exp.dataset), model=model)
    for name, p in model.named_parameters():
        np.testing.assert_array_equal(p.data, before[name], err_msg=name)
    val = [r['loss'] for r in result.metrics if r['split'] == 'val']
    assert len(val) == 4 and len(set(val)) == 1
    # every step draws the whole training split, only in a different order
    train_losses = [float(r['loss']) for r in result.metrics if r['split'] == 'train']
    np.testing.assert_allclose(train_losses, train_losses[0], rtol=0, atol=1e-12)


def timed_run(path, out_dir):
    exp = load_experiment(config_path('experiments', path))
    start = time.perf_counter()
    result = run_experiment(exp, out_dir)
    elapsed = time.perf_counter() - start
    assert elapsed < RUN_BUDGET_S, f"{exp.name} took {elapsed:.0f}s"
    return exp, result


def frozen_baseline(out_dir):
    """Validation numbers of tiny_vit_8class; the first run writes them and later runs only read them."""
    if os.path.exists(BASELINE_FILE):
        with open(BASELINE_FILE) as f:
            return json.load(f)
    exp, result = timed_run('tiny_vit_8class.json', out_dir)
    record = {'experiment': exp.name, 'seed': exp.seed, 'val_top1': result.val_top1, 'val_loss': result.val_loss}
    os.makedirs(os.path.dirname(BASELINE_FILE), exist_ok=True)
    with open(BASELINE_FILE, 'w') as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write('\n')
    return record


@slow
def test_pooling_keeps_accuracy_at_a_third_fewer_flops(tmp_path):
    baseline = frozen_baseline(str(tmp_path / 'baseline'))
    assert (baseline['experiment'], baseline['seed']) == ('tiny_vit_8class', 0)
    exp, result = timed_run('tiny_vit_spm_8class.json', str(tmp_path / 'spm'))
    assert result.val_top1 >= baseline['val_top1'] - 0.05
    reference = load_experiment(config_path('experiments', 'tiny_vit_8class.json'))
    assert compare(exp.model, reference.model).reduction >= 0.30


@slow
def test_static_versus_moving_is_learned(tmp_path):
    _, result = timed_run('tiny_vit_binary.json', str(tmp_path))
    assert result.val_top1 >= 0.95
