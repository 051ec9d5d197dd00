"""Tests for the reverse-mode differentiation engine and Adam."""

import numpy as np
import pytest

from assign_surrogate import autodiff as ad
from assign_surrogate.errors import AutodiffError, DatasetError, ShapeError, ValidationError


def away_from_zero(rng, shape):
    return rng.uniform(0.2, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)


# -- forward values -----------------------------------------------------------

def test_sigmoid_of_zero():
    assert ad.sigmoid(np.array(0.0)) == pytest.approx(0.5)


def test_mean_absolute_error_value():
    assert float(ad.mean_absolute_error(np.array([1.0, 3.0]), np.array([2.0, 5.0]))) == pytest.approx(1.5)


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    expected = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                expected[i, j] += a[i, k] * b[k, j]
    out = ad.matmul(ad.Tensor(a), b)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_plain_arrays_evaluate_eagerly():
    out = ad.tanh(np.zeros(3))
    assert isinstance(out, np.ndarray)
    assert isinstance(ad.tanh(ad.Tensor(np.zeros(3))), ad.Tensor)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(1)
    out = ad.softmax(rng.normal(size=(4, 5)) * 50)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0)


def test_softplus_is_stable_for_large_inputs():
    np.testing.assert_allclose(ad.softplus(np.array([-800.0, 0.0, 800.0])), [0.0, np.log(2.0), 800.0])


@pytest.mark.parametrize("op, a, b", [
    (ad.add, np.zeros((2, 3)), np.zeros((4,))),
    (ad.sub, np.zeros((2, 3)), np.zeros((3, 2))),
    (ad.mul, np.zeros(3), np.zeros(2)),
    (ad.matmul, np.zeros((2, 3)), np.zeros((2, 3))),
    (ad.mean_absolute_error, np.zeros(3), np.zeros(4)),
])
def test_shape_mismatch_names_op_and_shapes(op, a, b):
    with pytest.raises(ShapeError) as info:
        op(ad.Tensor(a), b)
    assert info.value.op in str(info.value)
    assert str(a.shape) in str(info.value)


def test_concat_shape_mismatch():
    with pytest.raises(ShapeError, match="concat"):
        ad.concat([np.zeros((2, 3)), np.zeros((3, 3))], axis=-1)


def test_transpose_needs_a_permutation():
    with pytest.raises(ShapeError):
        ad.transpose(np.zeros((2, 3)), (0, 0))


# -- backward ---------------------------------------------------------------

def test_sum_gives_all_ones():
    theta = ad.parameter(np.arange(6.0).reshape(2, 3))
    ad.sum(theta).backward()
    np.testing.assert_array_equal(theta.grad, np.ones((2, 3)))


def test_sigmoid_slope_at_zero():
    w = ad.parameter(np.array([[0.0]]))
    loss = ad.sum(ad.sigmoid(ad.matmul(w, np.array([[1.0]]))))
    loss.backward()
    assert w.grad[0, 0] == pytest.approx(0.25)


def test_fan_out_accumulates():
    x = ad.parameter(np.array([2.0, -1.0]))
    ad.sum(ad.add(ad.mul(x, x), x)).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_gradients_accumulate_until_reset():
    x = ad.parameter(np.ones(3))
    ad.sum(x).backward()
    ad.sum(x).backward()
    np.testing.assert_array_equal(x.grad, 2 * np.ones(3))
    x.zero_grad()
    np.testing.assert_array_equal(x.grad, np.zeros(3))


def test_double_backward_is_rejected():
    x = ad.parameter(np.ones(3))
    loss = ad.sum(ad.tanh(x))
    loss.backward()
    with pytest.raises(AutodiffError):
        loss.backward()


def test_backward_needs_scalar():
    x = ad.parameter(np.ones(3))
    with pytest.raises(AutodiffError, match="scalar"):
        ad.tanh(x).backward()


def test_backward_needs_a_parameter():
    with pytest.raises(AutodiffError):
        ad.sum(ad.Tensor(np.ones(3))).backward()


def test_ops_do_not_mutate_inputs():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4,))
    snapshot = a.copy(), b.copy()
    x = ad.parameter(a)
    loss = ad.mean_absolute_error(ad.relu(ad.add(x, b)), np.zeros((3, 4)))
    loss.backward()
    np.testing.assert_array_equal(x.data, snapshot[0])
    np.testing.assert_array_equal(b, snapshot[1])


def test_deep_chain_does_not_recurse():
    x = ad.parameter(np.array(0.5))
    y = x
    for _ in range(5000):
        y = ad.add(y, 0.0)
    ad.sum(y).backward()
    assert x.grad == pytest.approx(1.0)


UNARY = {
    "sigmoid": ad.sigmoid,
    "tanh": ad.tanh,
    "relu": ad.relu,
    "softplus": ad.softplus,
    "softmax": ad.softmax,
    "softmax_axis0": lambda x: ad.softmax(x, axis=0),
    "slice": lambda x: x[1:, ::2],
    "fancy_index": lambda x: x[np.array([0, 2, 0])],
    "reshape": lambda x: ad.reshape(x, (4, 3)),
    "transpose": lambda x: ad.transpose(x, (1, 0)),
    "sum_axis": lambda x: ad.sum(x, axis=1),
    "mean_axis": lambda x: ad.mean(x, axis=0, keepdims=True),
    "neg_div": lambda x: -x / 3.0,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    rng = np.random.default_rng(sorted(UNARY).index(name))
    x = ad.parameter(away_from_zero(rng, (3, 4)))
    weights_rng = np.random.default_rng(7)
    weights = weights_rng.normal(size=ad._value(UNARY[name](x.data)).shape)
    assert ad.gradcheck(lambda: ad.sum(ad.mul(UNARY[name](x), weights)), {"x": x}) < 1e-4


BINARY = {
    "add": (ad.add, (3, 4), (3, 4)),
    "bias_add": (ad.bias_add, (2, 3, 4), (4,)),
    "sub_broadcast": (ad.sub, (3, 1), (1, 4)),
    "mul": (ad.mul, (2, 3), (2, 3)),
    "matmul": (ad.matmul, (3, 4), (4, 2)),
    "batched_matmul": (ad.matmul, (2, 3, 4), (4, 5)),
    "batched_both": (ad.matmul, (2, 3, 4), (2, 4, 2)),
    "concat": (lambda a, b: ad.concat([a, b], axis=-1), (2, 3), (2, 5)),
    "stack": (lambda a, b: ad.stack([a, b], axis=1), (2, 3), (2, 3)),
    "mae": (ad.mean_absolute_error, (3, 4), (3, 4)),
    "mse": (ad.mean_squared_error, (3, 4), (3, 4)),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients(name):
    op, shape_a, shape_b = BINARY[name]
    rng = np.random.default_rng(len(name))
    a = ad.parameter(away_from_zero(rng, shape_a))
    b = ad.parameter(away_from_zero(rng, shape_b))
    weights = rng.normal(size=np.shape(ad._value(op(a.data, b.data))))
    assert ad.gradcheck(lambda: ad.sum(ad.mul(op(a, b), weights)), {"a": a, "b": b}) < 1e-4


def test_bce_gradient():
    rng = np.random.default_rng(4)
    logits = ad.parameter(rng.normal(size=(5, 3)))
    target = (rng.random((5, 3)) > 0.5).astype(float)
    assert ad.gradcheck(lambda: ad.binary_cross_entropy_with_logits(logits, target), {"logits": logits}) < 1e-4


def test_bce_value_is_finite_for_extreme_logits():
    loss = ad.binary_cross_entropy_with_logits(np.array([1000.0, -1000.0]), np.array([1.0, 0.0]))
    assert float(loss) == pytest.approx(0.0)


def test_composite_matches_torch():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(5)
    w_value, x_value, y_value = rng.normal(size=(4, 3)), rng.normal(size=(2, 4)), rng.normal(size=(2, 3))
    w = ad.parameter(w_value)
    loss = ad.mean_absolute_error(ad.softmax(ad.tanh(ad.matmul(x_value, w))), y_value)
    loss.backward()

    tw = torch.tensor(w_value, requires_grad=True)
    out = torch.softmax(torch.tanh(torch.tensor(x_value) @ tw), dim=-1)
    reference = torch.mean(torch.abs(out - torch.tensor(y_value)))
    reference.backward()
    assert float(loss.data) == pytest.approx(reference.item(), rel=1e-12)
    np.testing.assert_allclose(w.grad, tw.grad.numpy(), rtol=1e-10, atol=1e-12)


# -- optimisation -----------------------------------------------------------

def test_adam_zero_gradient_keeps_parameters():
    theta = ad.parameter(np.array([1.0, -2.0]))
    state = ad.AdamState()
    ad.adam_step({"t": theta}, {"t": np.zeros(2)}, state)
    np.testing.assert_array_equal(theta.data, [1.0, -2.0])


def test_adam_first_step_moves_by_learning_rate():
    theta = ad.parameter(np.array([0.0]))
    ad.adam_step({"t": theta}, {"t": np.array([1.0])}, ad.AdamState(learning_rate=0.001))
    assert theta.data[0] == pytest.approx(-0.001, rel=1e-6)


def test_adam_rejects_mismatched_gradient():
    with pytest.raises(ShapeError):
        ad.adam_step({"t": ad.parameter(np.zeros(2))}, {"t": np.zeros(3)}, ad.AdamState())


def test_adam_descends_a_quadratic_bowl():
    theta = ad.parameter(np.array([1.5, -2.0, 3.0]))
    optimiser = ad.Adam({"t": theta}, learning_rate=0.005)
    losses = []
    for _ in range(200):
        optimiser.zero_grad()
        loss = ad.sum(ad.mul(theta, theta))
        losses.append(float(loss.data))
        loss.backward()
        optimiser.step()
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_clip_grad_norm():
    a = ad.parameter(np.zeros(2))
    b = ad.parameter(np.zeros(1))
    a.grad = np.array([3.0, 0.0])
    b.grad = np.array([4.0])
    assert ad.clip_grad_norm({"a": a, "b": b}, 1.0) == pytest.approx(5.0)
    assert ad.grad_norm({"a": a, "b": b}) == pytest.approx(1.0)


# -- checkpoints --------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    params = {"w": rng.normal(size=(3, 2)), "b": rng.normal(size=(2,)), "scale": np.array(0.1), "empty": np.zeros((0, 4))}
    ad.save_checkpoint(tmp_path / "p.ckpt", params)
    loaded = ad.load_checkpoint(tmp_path / "p.ckpt")
    assert list(loaded) == list(params)
    for name, value in params.items():
        assert loaded[name].shape == value.shape
        np.testing.assert_array_equal(loaded[name], value)


def test_checkpoint_rejects_bad_names(tmp_path):
    with pytest.raises(ValidationError):
        ad.save_checkpoint(tmp_path / "p.ckpt", {"a;b": np.zeros(1)})


def test_corrupt_checkpoint(tmp_path):
    (tmp_path / "p.ckpt").write_text("w;2;2,2\n1.0,2.0,3.0\n", encoding="utf-8")
    with pytest.raises(DatasetError, match="line 1"):
        ad.load_checkpoint(tmp_path / "p.ckpt")
    with pytest.raises(DatasetError):
        ad.load_checkpoint(tmp_path / "missing.ckpt")
