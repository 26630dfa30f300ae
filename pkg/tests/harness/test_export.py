import hashlib

import numpy as np
import pytest
from PIL import Image

from supertoken_video_transformer.core.tensor import DArray
from supertoken_video_transformer.errors import ArgumentError, ContractViolation
from supertoken_video_transformer.harness.export import (export_pool_membership, export_score_heatmaps,
                                                         export_token_embeddings, load_token_embeddings,
                                                         membership_images, normalize_heatmap, write_pgm)
from supertoken_video_transformer.models import build_model
from supertoken_video_transformer.models.config import load_model_config, model_from_dict
from supertoken_video_transformer.spm import SPMConfig, TokenGrid, spm_forward
from tests.helpers import config_path, micro_model_doc


@pytest.fixture
def micro():
    return build_model(model_from_dict(micro_model_doc()), np.random.default_rng(0))


def clips(n, seed=0):
    return np.random.default_rng(seed).uniform(size=(n, 2, 8, 8, 1))


def pool(x, grid, cfg, protos):
    return spm_forward(TokenGrid(DArray(x), grid), DArray(protos), cfg)


def test_constant_map_is_mid_gray():
    assert np.all(normalize_heatmap(np.full((2, 3, 3), 0.25)) == 128)


def test_spike_is_the_only_white_token():
    values = np.zeros(18)
    values[7] = 3.0
    pixels = normalize_heatmap(values)
    assert pixels[7] == 255 and np.count_nonzero(pixels) == 1


def test_pgm_round_trip(tmp_path):
    pixels = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    path = tmp_path / 'img.pgm'
    write_pgm(str(path), pixels)
    assert path.read_bytes().startswith(b'P5')
    np.testing.assert_array_equal(np.array(Image.open(path)), pixels)


def test_singleton_windows_give_single_full_pixel():
    rng = np.random.default_rng(0)
    pooled = pool(rng.normal(size=(8, 3)), (2, 2, 2), SPMConfig(num_prototypes=2, window=(1, 1, 1)),
                  rng.normal(size=(2, 3)))
    images = membership_images(pooled)
    assert len(images) == 2 * 8
    for img in images:
        assert img.pixels.shape == (2, 4)
        assert np.count_nonzero(img.pixels) == 1 and img.pixels.max() == 255


def test_dominant_token_is_white_and_others_dim():
    x = np.zeros((8, 2))
    x[5] = [20.0, 0.0]
    pooled = pool(x, (2, 2, 2), SPMConfig(num_prototypes=1, theta=0.3), np.array([[1.0, 0.0]]))
    (img,) = membership_images(pooled)
    flat = img.pixels.reshape(2, 2, 2).transpose(1, 0, 2).reshape(-1)
    assert flat[5] == 255
    assert np.all(np.delete(flat, 5) == 1)


def test_fallback_lights_every_token_of_the_window():
    rng = np.random.default_rng(1)
    pooled = pool(rng.normal(size=(16, 2)), (1, 4, 4), SPMConfig(num_prototypes=2, theta=0.99, window=(1, 2, 2)),
                  0.01 * rng.normal(size=(2, 2)))
    assert pooled.heads[0].active.fallback_applied.all()
    for img in membership_images(pooled):
        assert np.count_nonzero(img.pixels) == 4


def test_broken_weights_are_reported():
    rng = np.random.default_rng(2)
    pooled = pool(rng.normal(size=(8, 2)), (2, 2, 2), SPMConfig(num_prototypes=1), rng.normal(size=(1, 2)))
    pooled.heads[0].weights[0, 0] *= 2.0
    with pytest.raises(ContractViolation):
        membership_images(pooled)


def test_neighbor_pooling_has_no_membership_images():
    rng = np.random.default_rng(3)
    pooled = pool(rng.normal(size=(8, 2)), (2, 2, 2), SPMConfig(num_prototypes=1, variant='neighbor', groups=2),
                  rng.normal(size=(1, 2)))
    with pytest.raises(ArgumentError):
        membership_images(pooled)


def test_membership_export_writes_one_file_per_pool(micro, tmp_path):
    images = export_pool_membership(micro, clips(1)[0], 1, str(tmp_path), prefix='c')
    assert len(images) == 2
    assert sorted(p.name for p in tmp_path.iterdir()) == ['c_layer1_h0_p000_w000.pgm', 'c_layer1_h0_p001_w000.pgm']
    with pytest.raises(ArgumentError, match='no semantic pooling'):
        export_pool_membership(micro, clips(1)[0], 2)


def test_heatmaps_follow_the_grid(micro, tmp_path):
    paths = export_score_heatmaps(micro, clips(1)[0], 1, str(tmp_path))
    assert [p.rsplit('/', 1)[-1] for p in paths] == ['clip_layer1_t00.pgm', 'clip_layer1_t01.pgm']
    assert np.array(Image.open(paths[0])).shape == (2, 2)


def test_heatmap_after_pooling_has_no_grid(micro, tmp_path):
    with pytest.raises(ArgumentError, match='grid'):
        export_score_heatmaps(micro, clips(1)[0], 2, str(tmp_path))


def test_heatmap_layer_out_of_range(micro, tmp_path):
    with pytest.raises(ArgumentError):
        export_score_heatmaps(micro, clips(1)[0], 3, str(tmp_path))


def test_mvit_semantic_layer_heatmaps(tmp_path):
    cfg = load_model_config(config_path('models', 'tiny_mvit_spm.json'))
    model = build_model(cfg, np.random.default_rng(0))
    clip = np.random.default_rng(1).uniform(size=cfg.input)
    assert len(export_score_heatmaps(model, clip, 5, str(tmp_path))) == 4
    assert len(export_score_heatmaps(model, clip, 1, str(tmp_path / 'attn'))) == 4


def test_embedding_row_count_and_round_trip(micro, tmp_path):
    path = str(tmp_path / 'embeddings.csv')
    videos = clips(3)
    rows = export_token_embeddings(micro, videos, [0, 1, 1], [0, 1, 2], path)
    assert rows == 3 * (8 + 4 + 4)
    loaded = load_token_embeddings(path)
    assert len(loaded) == rows
    first = loaded[0]
    assert (first.clip, first.label, first.layer, first.token) == (0, 0, 0, 0)
    assert first.values.shape == (8,)
    assert open(path).readline().strip() == 'clip,class,layer,token,' + ','.join(f'e{i}' for i in range(8))


def test_embedding_layers_are_checked(micro, tmp_path):
    with pytest.raises(ArgumentError):
        export_token_embeddings(micro, clips(1), [0], [5], str(tmp_path / 'e.csv'))


def neutralize_prototypes(model):
    for name, p in model.named_parameters():
        if name.endswith('prototypes'):
            p.data[...] = 0.0


def test_neutral_prototypes_export_known_bytes(micro, tmp_path):
    """Zero prototypes score every token 0.5, so every pool falls back to a uniform average."""
    neutralize_prototypes(micro)
    clip = clips(1)[0]
    images = export_pool_membership(micro, clip, 1, str(tmp_path / 'pools'))
    heatmaps = export_score_heatmaps(micro, clip, 1, str(tmp_path / 'maps'))
    assert len(images) == 2 and len(heatmaps) == 2
    for img in images:
        assert open(img.path, 'rb').read() == b'P5\n4 2\n255\n' + b'\xff' * 8
    for path in heatmaps:
        assert open(path, 'rb').read() == b'P5\n2 2\n255\n' + b'\x80' * 4


def digests(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


def test_exports_are_byte_identical_across_runs(tmp_path):
    clip = clips(1)[0]
    for run in ('a', 'b'):
        model = build_model(model_from_dict(micro_model_doc()), np.random.default_rng(0))
        export_pool_membership(model, clip, 1, str(tmp_path / run))
        export_score_heatmaps(model, clip, 1, str(tmp_path / run))
    first = digests(tmp_path / 'a')
    assert len(first) == 4
    assert first == digests(tmp_path / 'b')
