import hypothesis.strategies as st
import numpy as np
from hypothesis import assume, given, settings
from scipy.special import expit

from supertoken_video_transformer.core.tensor import DArray
from supertoken_video_transformer.spm import (SPMConfig, TokenGrid, compute_scores, elitism_filter, make_partition,
                                               spm_forward)

EXAMPLES = 60

geometry = st.tuples(st.integers(1, 2), st.integers(1, 2), st.integers(1, 2),
                     st.integers(1, 2), st.integers(1, 2), st.integers(1, 2))


def build(seed, geo, m, c, scale=1.0):
    rng = np.random.default_rng(seed)
    window, counts = geo[:3], geo[3:]
    grid = tuple(w * k for w, k in zip(window, counts))
    n = int(np.prod(grid))
    x = TokenGrid(DArray(rng.normal(size=(n, c))), grid)
    e = DArray(rng.normal(0.0, scale, size=(m, c)))
    return x, e, tuple(window)


@settings(max_examples=EXAMPLES, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), geo=geometry, m=st.integers(1, 4), keep=st.integers(0, 3),
       variant=st.sampled_from(['elitism', 'neighbor']))
def test_count_law(seed, geo, m, keep, variant):
    x, e, window = build(seed, geo, m, 3)
    per_window = int(np.prod(window))
    groups = per_window if variant == 'neighbor' else 1
    keep = min(keep, x.n)
    cfg = SPMConfig(num_prototypes=m, window=window, keep=keep, variant=variant, groups=groups)
    out = spm_forward(x, e, cfg)
    n_win = x.n // per_window
    assert out.n == m * groups * n_win + keep == cfg.output_count(x.n, x.grid)


@settings(max_examples=EXAMPLES, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), geo=geometry, m=st.integers(1, 4),
       theta=st.floats(0.05, 0.95), scale=st.sampled_from([0.1, 1.0, 5.0]))
def test_supertokens_stay_inside_their_window_envelope(seed, geo, m, theta, scale):
    x, e, window = build(seed, geo, m, 4, scale)
    cfg = SPMConfig(num_prototypes=m, theta=theta, window=window)
    out = spm_forward(x, e, cfg)
    z = out.supertokens.data.reshape(out.partition.n_windows, m, 4)
    tokens = x.tokens.data[out.partition.index]                  # (N_win, P, C)
    lo, hi = tokens.min(axis=1)[:, None, :], tokens.max(axis=1)[:, None, :]
    assert np.all(z >= lo - 1e-12) and np.all(z <= hi + 1e-12)


def exact_inputs(rng, n, m):
    """Dyadic tokens and prototypes: every score is exact wherever the token sits."""
    x = rng.integers(-512, 513, size=(n, 4)) / 64.0
    e = rng.integers(-4, 5, size=(m, 4)) / 8.0
    return x, e


def tie_free(x, e, part):
    s = e @ x.T
    ranked = np.sort(s[:, part.index], axis=-1)
    averages = np.sort(expit(s).mean(axis=0))
    return bool(np.all(np.diff(ranked, axis=-1) != 0) and np.all(np.diff(averages) != 0))


@settings(max_examples=EXAMPLES, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), geo=geometry, whole=st.booleans(), m=st.integers(1, 3),
       keep=st.integers(0, 3), theta=st.sampled_from([0.3, 0.5, 0.7]),
       variant=st.sampled_from(['elitism', 'neighbor']))
def test_permuting_one_window_is_bit_exact(seed, geo, whole, m, keep, theta, variant):
    rng = np.random.default_rng(seed)
    window, counts = geo[:3], geo[3:]
    grid = tuple(w * k for w, k in zip(window, counts))
    n = int(np.prod(grid))
    x, e = exact_inputs(rng, n, m)
    cfg = SPMConfig(num_prototypes=m, theta=theta, window=None if whole else window, keep=min(keep, n),
                    variant=variant)
    part = make_partition(n, grid, cfg)
    assume(tie_free(x, e, part))
    ids = part.index[int(rng.integers(part.n_windows))]
    perm = np.arange(n)
    perm[ids] = rng.permutation(ids)
    a = spm_forward(TokenGrid(DArray(x), grid), DArray(e), cfg)
    b = spm_forward(TokenGrid(DArray(x[perm]), grid), DArray(e), cfg)
    np.testing.assert_array_equal(a.supertokens.data, b.supertokens.data)
    np.testing.assert_array_equal(np.sort(perm[b.kept_indices]), a.kept_indices)
    if cfg.keep:
        order = np.argsort(perm[b.kept_indices])
        np.testing.assert_array_equal(b.kept.data[order], a.kept.data)


@settings(max_examples=EXAMPLES, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), geo=geometry, m=st.integers(1, 4),
       low=st.floats(0.01, 0.98), gap=st.floats(0.0, 0.5))
def test_raising_threshold_shrinks_passing_set(seed, geo, m, low, gap):
    x, e, window = build(seed, geo, m, 3)
    high = min(low + gap, 0.99)
    scores = compute_scores(x, e)
    loose = elitism_filter(scores, SPMConfig(num_prototypes=m, theta=low, window=window))
    strict = elitism_filter(scores, SPMConfig(num_prototypes=m, theta=high, window=window))
    assert not np.any(strict.passed & ~loose.passed)


@settings(max_examples=EXAMPLES, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), geo=geometry, m=st.integers(1, 4), theta=st.floats(0.01, 0.99),
       scale=st.sampled_from([0.1, 1.0, 5.0]), adopt=st.booleans())
def test_fallback_totality_and_mask_law(seed, geo, m, theta, scale, adopt):
    x, e, window = build(seed, geo, m, 3, scale)
    cfg = SPMConfig(num_prototypes=m, theta=theta, window=window, adopt_orphans=adopt)
    part = make_partition(x.n, x.grid, cfg)
    scores = compute_scores(x, e)
    active = elitism_filter(scores, cfg, part)
    windowed = active.mask[:, part.index]
    assert windowed.any(axis=-1).all()
    assert windowed[active.fallback_applied].all()
    untouched = ~active.fallback_applied[:, part.window_of()] & ~active.adopted
    np.testing.assert_array_equal(active.mask[untouched], (scores.compressed > theta)[untouched])
    if adopt:
        assert active.mask.any(axis=0).all()


@settings(max_examples=EXAMPLES, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), geo=geometry, m=st.integers(1, 4), theta=st.floats(0.01, 0.99))
def test_pooling_weights_are_normalized_over_active_tokens(seed, geo, m, theta):
    x, e, window = build(seed, geo, m, 3)
    out = spm_forward(x, e, SPMConfig(num_prototypes=m, theta=theta, window=window))
    head = out.heads[0]
    np.testing.assert_allclose(head.weights.sum(axis=-1), 1.0, atol=1e-12)
    inactive = ~np.take_along_axis(head.active.mask, head.members.reshape(m, -1), axis=1).reshape(head.members.shape)
    assert np.all(head.weights[inactive] == 0.0)
