import numpy as np
import pytest
from scipy.special import expit, log_softmax

from supertoken_video_transformer.core import ops
from supertoken_video_transformer.core.gradcheck import check_gradients
from supertoken_video_transformer.core.tensor import DArray, Tape
from supertoken_video_transformer.errors import ArgumentError, ContractViolation, ShapeError, TapeError
from tests.helpers import param, scalarize

GRAD_TOL = 1e-4
CASES = 100


def test_sigmoid_and_gelu_forward():
    x = np.linspace(-6.0, 6.0, 25)
    np.testing.assert_allclose(ops.sigmoid(DArray(x)).data, expit(x), rtol=0, atol=1e-15)
    from scipy.special import erf
    np.testing.assert_allclose(ops.gelu(DArray(x)).data, 0.5 * x * (1 + erf(x / np.sqrt(2))), atol=1e-15)


def test_masked_softmax_zeroes_masked_entries():
    rng = np.random.default_rng(0)
    x = DArray(rng.normal(size=(3, 5)))
    mask = rng.random((3, 5)) > 0.4
    mask[:, 0] = True
    y = ops.masked_softmax(x, mask).data
    assert np.all(y[~mask] == 0.0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


def test_masked_softmax_rejects_empty_slice():
    mask = np.ones((2, 4), dtype=bool)
    mask[1] = False
    with pytest.raises(ContractViolation):
        ops.masked_softmax(DArray(np.zeros((2, 4))), mask)


def test_masked_softmax_rejects_mask_shape():
    with pytest.raises(ShapeError):
        ops.masked_softmax(DArray(np.zeros((2, 4))), np.ones((4, 2), dtype=bool))


def test_topk_ties_go_to_lower_index():
    values = np.array([0.5, 0.9, 0.5, 0.9, 0.1])
    np.testing.assert_array_equal(ops.topk_indices(values, 3), [1, 3, 0])


def test_topk_rejects_k_past_axis():
    with pytest.raises(ArgumentError):
        ops.topk_indices(np.zeros(4), 5)


def test_masked_softmax_matches_exp_over_sum():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 6))
    mask = rng.random((4, 6)) > 0.3
    mask[:, 2] = True
    e = np.where(mask, np.exp(x), 0.0)
    want = e / e.sum(axis=-1, keepdims=True)
    np.testing.assert_allclose(ops.masked_softmax(DArray(x), mask).data, want, rtol=0, atol=1e-12)


def test_masked_softmax_small_cases():
    one = ops.masked_softmax(DArray(np.array([[7.0, -3.0, 2.0]])), np.array([[False, True, False]]))
    np.testing.assert_array_equal(one.data, [[0.0, 1.0, 0.0]])
    pair = ops.masked_softmax(DArray(np.array([[1.5, 1.5, 9.0]])), np.array([[True, True, False]]))
    np.testing.assert_array_equal(pair.data, [[0.5, 0.5, 0.0]])


def test_matmul_examples():
    a = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(ops.matmul(DArray(np.eye(3)), DArray(a)).data, a)
    out = ops.matmul(DArray(np.array([[1.0, 2.0]])), DArray(np.array([[3.0], [4.0]])))
    np.testing.assert_array_equal(out.data, [[11.0]])


def test_layernorm_examples():
    gamma, beta = DArray(np.ones(2)), DArray(np.zeros(2))
    flat = ops.layernorm(DArray(np.array([[4.0, 4.0]])), gamma, beta)
    np.testing.assert_array_equal(flat.data, [[0.0, 0.0]])
    spread = ops.layernorm(DArray(np.array([[1.0, 3.0]])), gamma, beta, eps=1e-12)
    np.testing.assert_allclose(spread.data, [[-1.0, 1.0]], rtol=0, atol=1e-9)


def test_sigmoid_at_zero():
    assert ops.sigmoid(DArray(np.zeros(1))).data[0] == 0.5


def test_topk_tie_at_the_top():
    np.testing.assert_array_equal(ops.topk_indices(np.array([5.0, 5.0, 1.0]), 1), [0])


def test_cross_entropy_matches_log_softmax():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(4, 6))
    labels = np.array([0, 5, 2, 2])
    expected = -np.mean(log_softmax(logits, axis=1)[np.arange(4), labels])
    assert ops.cross_entropy(DArray(logits), labels).item() == pytest.approx(expected, abs=1e-14)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r'\(2, 3\).*\(4, 5\)'):
        ops.matmul(DArray(np.zeros((2, 3))), DArray(np.zeros((4, 5))))


def test_take_rejects_out_of_range():
    with pytest.raises(ArgumentError):
        ops.take(DArray(np.zeros((3, 2))), np.array([0, 3]))


def test_second_backward_needs_reset():
    x = DArray(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ops.mean(ops.mul(x, x))
    tape.backward(y)
    with pytest.raises(TapeError):
        tape.backward(y)
    tape.reset()
    assert tape.records == []


def test_backward_accumulates_over_reuse():
    x = DArray(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    with Tape() as tape:
        y = ops.mean(ops.add(ops.mul(x, x), x))
    tape.backward(y)
    np.testing.assert_allclose(x.grad, (2 * x.data + 1) / 3)


def test_first_nonfinite_names_producing_op():
    x = DArray(np.array([1.0, -1.0]), requires_grad=True)
    with Tape() as tape:
        y = ops.scale(x, 2.0)
        z = ops.mul(y, DArray(np.array([np.inf, 1.0])))
        ops.mean(z)
    assert tape.first_nonfinite() == (1, 'mul')


def test_ops_outside_a_tape_record_nothing():
    x = DArray(np.ones(2), requires_grad=True)
    ops.mul(x, x)
    assert Tape.current() is None


def random_shape(rng, ndim=None, low=2):
    """Two or three axes (or ``ndim``) of extent low..4."""
    ndim = ndim or int(rng.integers(2, 4))
    return tuple(int(s) for s in rng.integers(low, 5, size=ndim))


def _unary_cases():
    return [
        ('sigmoid', ops.sigmoid),
        ('gelu', ops.gelu),
        ('softmax', lambda x: ops.softmax(x, axis=-1)),
        ('log_softmax', lambda x: ops.log_softmax(x, axis=0)),
        ('mean', lambda x: ops.mean(x, axis=1, keepdims=True)),
        ('amax', lambda x: ops.amax(x, axis=1)),
        ('transpose', lambda x: ops.transpose(x)),
        ('reshape', lambda x: ops.reshape(x, (x.size,))),
        ('take', lambda x: ops.take(x, np.array([[x.shape[0] - 1, 0], [x.shape[0] - 1, x.shape[0] // 2]]))),
        ('scale', lambda x: ops.scale(x, -1.7)),
    ]


@pytest.mark.parametrize('name,fn', _unary_cases())
def test_unary_gradients(name, fn):
    rng = np.random.default_rng(len(name))
    for case in range(CASES):
        x = param(rng, *random_shape(rng))
        w = rng.normal(size=fn(x).shape)
        assert check_gradients(lambda: scalarize(fn(x), w), [x], max_coords=12, rng=rng) < GRAD_TOL, (name, case)


def test_masked_softmax_gradient():
    rng = np.random.default_rng(11)
    for case in range(CASES):
        shape = random_shape(rng)
        x = param(rng, *shape)
        mask = rng.random(shape) > 0.5
        first = rng.integers(0, shape[-1], size=shape[:-1])
        np.put_along_axis(mask, first[..., None], True, axis=-1)
        w = rng.normal(size=shape)
        assert check_gradients(lambda: scalarize(ops.masked_softmax(x, mask), w), [x]) < GRAD_TOL, case


def test_binary_gradients():
    rng = np.random.default_rng(12)
    for case in range(CASES):
        shape = random_shape(rng, ndim=3, low=1)
        a, b = param(rng, *shape), param(rng, *shape[int(rng.integers(0, 2)):])
        w = rng.normal(size=shape)
        for fn in (ops.add, ops.sub, ops.mul):
            assert check_gradients(lambda: scalarize(fn(a, b), w), [a, b]) < GRAD_TOL, case


def test_matmul_linear_layernorm_gradients():
    rng = np.random.default_rng(13)
    for case in range(CASES):
        batch = random_shape(rng, ndim=int(rng.integers(1, 3)), low=1)
        q, r = int(rng.integers(3, 6)), int(rng.integers(1, 5))
        a, b = param(rng, *batch, q), param(rng, q, r)
        w = rng.normal(size=batch + (r,))
        assert check_gradients(lambda: scalarize(ops.matmul(a, b), w), [a, b]) < GRAD_TOL, case
        bias = param(rng, r)
        assert check_gradients(lambda: scalarize(ops.linear(a, b, bias), w), [a, b, bias]) < GRAD_TOL, case
        gamma, beta = param(rng, q), param(rng, q)
        wn = rng.normal(size=batch + (q,))
        assert check_gradients(lambda: scalarize(ops.layernorm(a, gamma, beta), wn), [a, gamma, beta]) < GRAD_TOL


def test_concat_and_cross_entropy_gradients():
    rng = np.random.default_rng(14)
    for case in range(CASES):
        classes = int(rng.integers(2, 6))
        a, b = param(rng, int(rng.integers(1, 4)), classes), param(rng, int(rng.integers(1, 4)), classes)
        labels = rng.integers(0, classes, size=a.shape[0] + b.shape[0])
        assert check_gradients(lambda: ops.cross_entropy(ops.concat([a, b]), labels), [a, b]) < GRAD_TOL, case
