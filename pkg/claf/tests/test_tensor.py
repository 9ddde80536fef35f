import numpy as np
import pytest

from claf import tensor as T
from claf.errors import (BindingError, DegenerateNormalization, GradientError,
                         ShapeError)


def naive_conv2d(x, w, stride, padding):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for k in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride:i * stride + kh,
                               j * stride:j * stride + kw]
                    out[b, k, i, j] = (patch * w[k]).sum()
    return out


class TestDiffTensor(object):

    def test_values_are_read_only(self):
        x = T.DiffTensor([1.0, 2.0])
        with pytest.raises(ValueError):
            x.data[0] = 5.0

    def test_constructor_copies(self):
        source = np.array([1.0, 2.0])
        x = T.DiffTensor(source)
        source[0] = 9.0
        assert x.data[0] == 1.0

    def test_float64(self):
        assert T.DiffTensor([1, 2]).data.dtype == np.float64

    def test_operators_with_numpy_on_the_left(self):
        x = T.DiffTensor([1.0, 2.0])
        out = np.array([2.0, 2.0]) * x
        assert isinstance(out, T.DiffTensor)
        np.testing.assert_array_equal(out.data, [2.0, 4.0])

    def test_no_recording_without_tape(self):
        x = T.parameter([1.0, 2.0])
        y = (x * x).sum()
        assert y.requires_grad
        with T.Tape() as tape:
            pass
        assert len(tape) == 0

    def test_constants_are_not_recorded(self):
        with T.Tape() as tape:
            T.DiffTensor([1.0]) + T.DiffTensor([2.0])
        assert len(tape) == 0


class TestBackward(object):

    def test_product_rule(self):
        x = T.parameter([1.0, 2.0, 3.0])
        with T.Tape() as tape:
            y = (x * x).sum()
        np.testing.assert_allclose(tape.backward(y).of(x), [2.0, 4.0, 6.0])

    def test_fan_out_gradients_are_summed(self):
        x = T.parameter(3.0)
        with T.Tape() as tape:
            y = x * 2.0 + x * 5.0 + x
        assert tape.backward(y).of(x) == pytest.approx(8.0)

    def test_broadcast_gradient_is_reduced(self):
        a = T.parameter(np.ones((3, 4)))
        b = T.parameter(np.ones(4))
        with T.Tape() as tape:
            y = (a + b).sum()
        grads = tape.backward(y)
        np.testing.assert_array_equal(grads.of(b), np.full(4, 3.0))
        np.testing.assert_array_equal(grads.of(a), np.ones((3, 4)))

    def test_non_scalar_seed(self):
        x = T.parameter([1.0, 2.0])
        with T.Tape() as tape:
            y = x * 2.0
        with pytest.raises(GradientError):
            tape.backward(y)

    def test_output_not_on_tape(self):
        x = T.parameter([1.0, 2.0])
        y = (x * x).sum()
        with T.Tape() as tape:
            pass
        with pytest.raises(GradientError):
            tape.backward(y)

    def test_unused_leaf_gets_zero_gradient(self):
        x = T.parameter([1.0, 2.0])
        unused = T.parameter([[1.0]])
        with T.Tape() as tape:
            y = (x * unused).sum()
            z = x.sum()
        grads = tape.backward(z)
        np.testing.assert_array_equal(grads.of(unused), [[0.0]])
        assert y.requires_grad

    def test_module_level_backward(self):
        x = T.parameter(2.0)
        with T.Tape() as tape:
            y = T.exp(x)
        assert T.backward(tape, y).of(x) == pytest.approx(np.exp(2.0))

    def test_nested_tapes_record_on_innermost(self):
        x = T.parameter(1.0)
        with T.Tape() as outer:
            with T.Tape() as inner:
                y = x * 3.0
        assert len(inner) == 1
        assert len(outer) == 0
        assert inner.backward(y).of(x) == pytest.approx(3.0)


class TestEvaluate(object):

    def test_returns_named_outputs_and_tape(self):
        out = T.evaluate(lambda a, b: {'sum': a + b, 'prod': a * b},
                         {'a': 2.0, 'b': 3.0})
        assert out['sum'].item() == 5.0
        assert out['prod'].item() == 6.0
        assert isinstance(out.tape, T.Tape)

    def test_single_output(self):
        out = T.evaluate(lambda x: x * 2.0, {'x': [1.0]})
        np.testing.assert_array_equal(out['output'].data, [2.0])

    def test_gradient_through_evaluate(self):
        x = T.parameter([1.0, -2.0])
        out = T.evaluate(lambda x: (x * x).sum(), {'x': x})
        np.testing.assert_allclose(out.tape.backward(out['output']).of(x),
                                   [2.0, -4.0])

    def test_missing_binding(self):
        with pytest.raises(BindingError):
            T.evaluate(lambda a, b: a + b, {'a': 1.0})

    def test_unexpected_binding(self):
        with pytest.raises(BindingError):
            T.evaluate(lambda a: a, {'a': 1.0, 'c': 2.0})


class TestPrimitives(object):

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError) as e:
            T.matmul(np.ones((2, 3)), np.ones((2, 3)))
        assert e.value.op == 'matmul'
        assert e.value.shapes == ((2, 3), (2, 3))

    def test_add_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.add(np.ones((2, 3)), np.ones((4,)))

    def test_reshape_mismatch(self):
        with pytest.raises(ShapeError):
            T.reshape(np.ones(6), (4, 2))

    def test_relu_subgradient_at_zero(self):
        x = T.parameter([-1.0, 0.0, 2.0])
        with T.Tape() as tape:
            y = T.relu(x).sum()
        np.testing.assert_array_equal(tape.backward(y).of(x), [0.0, 0.0, 1.0])

    def test_logsumexp_is_stable(self):
        x = T.DiffTensor([[1000.0, 1000.0]])
        assert T.logsumexp(x, axis=1).data[0] == pytest.approx(1000.0 + np.log(2))

    def test_logsumexp_mask(self):
        x = T.DiffTensor([[0.0, 5.0, 0.0]])
        mask = np.array([[True, False, True]])
        assert T.logsumexp(x, axis=1, mask=mask).data[0] == \
            pytest.approx(np.log(2.0))

    def test_logsumexp_empty_mask(self):
        with pytest.raises(ShapeError):
            T.logsumexp(np.zeros((2, 2)), axis=1,
                        mask=np.array([[True, True], [False, False]]))

    def test_softmax_rows_sum_to_one(self):
        out = T.softmax(np.random.default_rng(0).normal(size=(3, 5)), axis=1)
        np.testing.assert_allclose(out.data.sum(axis=1), np.ones(3))

    def test_l2_normalize_unit_rows(self):
        out = T.l2_normalize(np.array([[3.0, 4.0], [1e-3, 0.0]]), axis=1)
        np.testing.assert_allclose(np.linalg.norm(out.data, axis=1), [1.0, 1.0],
                                   atol=1e-12)

    def test_l2_normalize_zero_row(self):
        with pytest.raises(DegenerateNormalization):
            T.l2_normalize(np.array([[1.0, 0.0], [0.0, 0.0]]), axis=1)

    def test_sign_has_no_gradient(self):
        x = T.parameter([-2.0, 3.0])
        assert not T.sign(x).requires_grad
        np.testing.assert_array_equal(T.sign(x).data, [-1.0, 1.0])

    def test_clamp(self):
        x = T.parameter([-1.0, 0.5, 2.0])
        with T.Tape() as tape:
            y = T.clamp(x, 0.0, 1.0)
            total = y.sum()
        np.testing.assert_array_equal(y.data, [0.0, 0.5, 1.0])
        np.testing.assert_array_equal(tape.backward(total).of(x), [0, 1, 0])

    def test_concatenate_gradient_splits(self):
        a = T.parameter(np.ones((2, 3)))
        b = T.parameter(np.ones((1, 3)))
        with T.Tape() as tape:
            y = (T.concatenate([a, b], axis=0) * np.arange(3.0)).sum()
        grads = tape.backward(y)
        np.testing.assert_array_equal(grads.of(b), [[0.0, 1.0, 2.0]])
        assert grads.of(a).shape == (2, 3)

    @pytest.mark.parametrize('stride,padding', [(1, 0), (1, 1), (2, 1)])
    def test_conv2d_matches_loops(self, stride, padding):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3, 6, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        out = T.conv2d(x, w, stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, naive_conv2d(x, w, stride, padding),
                                   atol=1e-12)

    def test_conv2d_channel_mismatch(self):
        with pytest.raises(ShapeError):
            T.conv2d(np.ones((1, 3, 4, 4)), np.ones((2, 2, 3, 3)))

    def test_max_pool(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        np.testing.assert_array_equal(T.max_pool2d(x).data,
                                      [[[[5.0, 7.0], [13.0, 15.0]]]])

    def test_max_pool_routes_gradient_to_winner(self):
        x = T.parameter(np.arange(16.0).reshape(1, 1, 4, 4))
        with T.Tape() as tape:
            y = T.max_pool2d(x).sum()
        grad = tape.backward(y).of(x)
        assert grad.sum() == 4.0
        assert grad[0, 0, 1, 1] == 1.0 and grad[0, 0, 0, 0] == 0.0

    def test_max_pool_odd_size(self):
        with pytest.raises(ShapeError):
            T.max_pool2d(np.ones((1, 1, 3, 4)))

    def test_global_avg_pool(self):
        x = np.arange(8.0).reshape(1, 2, 2, 2)
        np.testing.assert_array_equal(T.global_avg_pool(x).data, [[1.5, 5.5]])


class TestProperties(object):

    def test_fan_out_of_three(self):
        x = T.parameter(1.5)
        with T.Tape() as tape:
            y = x + x + x
        assert tape.backward(y).of(x) == 3.0

    def test_softmax_shift_invariance(self):
        v = np.array([[0.3, -1.2, 2.0]])
        np.testing.assert_allclose(T.softmax(v + 1e4, axis=1).data,
                                   T.softmax(v, axis=1).data, atol=1e-12)

    def test_logsumexp_gradient_is_softmax(self):
        v = T.parameter([0.3, -1.2, 2.0])
        with T.Tape() as tape:
            y = T.logsumexp(v, axis=0)
        np.testing.assert_allclose(tape.backward(y).of(v),
                                   T.softmax(v.data, axis=0).data)

    def test_evaluate_is_pure(self):
        program = lambda x, w: T.sum_(T.relu(T.matmul(x, w)))
        bindings = {'x': np.arange(6.0).reshape(2, 3),
                    'w': np.linspace(-1, 1, 12).reshape(3, 4)}
        first = T.evaluate(program, bindings)['output'].data
        second = T.evaluate(program, bindings)['output'].data
        assert first.tobytes() == second.tobytes()
