import os

import numpy as np

from supertoken_video_transformer.core import ops
from supertoken_video_transformer.core.conv import output_grid
from supertoken_video_transformer.core.tensor import DArray

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, 'configs')


def config_path(*parts: str) -> str:
    return os.path.join(CONFIGS, *parts)


def param(rng: np.random.Generator, *shape, scale: float = 1.0) -> DArray:
    return DArray(rng.normal(0.0, scale, size=shape), requires_grad=True)


def scalarize(out: DArray, weights: np.ndarray) -> DArray:
    """Weighted mean so every output entry gets a distinct adjoint."""
    return ops.mean(ops.mul(out, DArray(weights)))


def naive_conv(x, w, groups, stride, bias=None):
    kernel = w.shape[:3]
    c_in, c_out = x.shape[3], w.shape[4]
    cin_g, cout_g = c_in // groups, c_out // groups
    pads = [k // 2 for k in kernel]
    xp = np.pad(x, [(p, p) for p in pads] + [(0, 0)])
    out_grid = output_grid(x.shape[:3], kernel, stride)
    out = np.zeros(out_grid + (c_out,))
    for t in range(out_grid[0]):
        for h in range(out_grid[1]):
            for v in range(out_grid[2]):
                for o in range(c_out):
                    g = o // cout_g
                    acc = 0.0
                    for dt in range(kernel[0]):
                        for dh in range(kernel[1]):
                            for dw in range(kernel[2]):
                                for c in range(cin_g):
                                    acc += (xp[t * stride[0] + dt, h * stride[1] + dh, v * stride[2] + dw,
                                               g * cin_g + c] * w[dt, dh, dw, c, o])
                    out[t, h, v, o] = acc + (0.0 if bias is None else bias[o])
    return out


def randomize(module, rng: np.random.Generator, scale: float = 0.5) -> None:
    """Overwrite every parameter so identity-initialised kernels and zero biases take part."""
    for p in module.parameters():
        p.data[...] = rng.normal(0.0, scale, size=p.shape)


def micro_model_doc(**overrides) -> dict:
    """Two-block ViT over 2x8x8 grayscale clips: 8 tokens, pooled to 4 after block 1."""
    doc = {'kind': 'vit', 'name': 'micro', 'depth': 2, 'embed_dim': 8, 'num_heads': 2, 'mlp_ratio': 2.0,
           'patch': [1, 4, 4], 'input': [2, 8, 8, 1], 'num_classes': 2,
           'spm_schedule': [{'layer': 1, 'num_prototypes': 2, 'keep': 2}]}
    doc.update(overrides)
    return doc


def micro_experiment_doc(**train) -> dict:
    settings = {'optimizer': 'sgd', 'lr': 0.05, 'steps': 3, 'batch_size': 4, 'eval_every': 2}
    settings.update(train)
    return {'name': 'micro', 'seed': 3, 'model': micro_model_doc(),
            'dataset': {'frames': 2, 'height': 8, 'width': 8, 'channels': 1, 'num_classes': 2,
                        'train_size': 8, 'val_size': 4},
            'train': settings}
