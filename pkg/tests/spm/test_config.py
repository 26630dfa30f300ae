import numpy as np
import pytest

from supertoken_video_transformer.core.tensor import DArray
from supertoken_video_transformer.errors import ConfigError
from supertoken_video_transformer.spm import SPMConfig, TokenGrid, neighbor_grouping_forward, spm_forward


@pytest.mark.parametrize('theta', [0.0, 1.0, -0.2, 1.5])
def test_theta_must_lie_inside_unit_interval(theta):
    with pytest.raises(ConfigError):
        SPMConfig(num_prototypes=4, theta=theta)


def test_keep_cannot_exceed_tokens():
    with pytest.raises(ConfigError, match='cannot keep'):
        SPMConfig(num_prototypes=2, keep=9).output_count(8, None)


def test_neighbor_groups_must_divide_window():
    cfg = SPMConfig(num_prototypes=2, variant='neighbor', groups=3, window=(1, 2, 2))
    with pytest.raises(ConfigError, match='equal groups'):
        cfg.output_count(16, (1, 4, 4))


def test_groups_need_neighbor_variant():
    with pytest.raises(ConfigError):
        SPMConfig(num_prototypes=2, groups=2)


def test_width_must_split_across_heads():
    x = TokenGrid(DArray(np.zeros((4, 5))))
    with pytest.raises(ConfigError):
        spm_forward(x, [DArray(np.zeros((2, 2))), DArray(np.zeros((2, 2)))], SPMConfig(num_prototypes=2, heads=2))


def test_prototype_width_mismatch():
    x = TokenGrid(DArray(np.zeros((4, 5))))
    with pytest.raises(ConfigError):
        spm_forward(x, DArray(np.zeros((2, 4))), SPMConfig(num_prototypes=2))


def test_projection_weights_required():
    x = TokenGrid(DArray(np.zeros((4, 2))))
    with pytest.raises(ConfigError):
        spm_forward(x, DArray(np.ones((1, 2))), SPMConfig(num_prototypes=1, output_projection=True))


def test_neighbor_entry_point_checks_variant():
    x = TokenGrid(DArray(np.zeros((4, 2))))
    with pytest.raises(ConfigError):
        neighbor_grouping_forward(x, DArray(np.ones((1, 2))), SPMConfig(num_prototypes=1))


def test_dict_round_trip():
    cfg = SPMConfig(num_prototypes=32, theta=0.5, window=(2, 14, 14), keep=896, heads=2)
    assert SPMConfig.from_dict(cfg.to_dict()) == cfg
    assert SPMConfig.from_dict({'num_prototypes': 4, 'window': 'global'}).is_global
