import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from aisfish import nncore as nn
from aisfish.errors import NumericFault, StateError
from oracles import model_gradcheck


def param(a):
    return nn.Parameter(np.asarray(a, dtype=np.float32))


def test_identity_matmul():
    b = nn.Tensor(np.arange(6).reshape(2, 3))
    np.testing.assert_array_equal((nn.Tensor(np.eye(2)) @ b).data, b.data)


def test_activation_values():
    assert nn.sigmoid(nn.Tensor([0.0])).data[0] == 0.5
    assert nn.tanh(nn.Tensor([0.0])).data[0] == 0.0
    assert nn.relu(nn.Tensor([-3.0])).data[0] == 0.0


@pytest.mark.parametrize("training", [True, False])
def test_dropout_rate_zero_is_identity(training):
    x = nn.Tensor(np.ones((3, 4)))
    assert nn.dropout(x, 0.0, training, rng=1) is x


def test_dropout_inverted_scaling():
    x = nn.Tensor(np.ones((200, 200)))
    out = nn.dropout(x, 0.25, True, rng=0).data
    assert set(np.unique(out)) <= {0.0, np.float32(1 / 0.75)}
    assert out.mean() == pytest.approx(1.0, abs=0.02)
    assert nn.dropout(x, 0.25, False) is x


def test_shape_mismatch_names_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
        nn.matmul(nn.Tensor(np.ones((2, 3))), nn.Tensor(np.ones((4, 5))))
    with pytest.raises(ValueError):
        nn.add(nn.Tensor(np.ones((2, 3))), nn.Tensor(np.ones((2, 1))))


def test_bias_broadcast_allowed():
    out = nn.add(nn.Tensor(np.zeros((2, 3))), nn.Tensor([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(out.data, [[1, 2, 3], [1, 2, 3]])


def test_linear_map_gradient():
    W = param(np.ones((2, 3)))
    x = nn.Tensor(np.array([[1.0], [2.0], [3.0]]))
    with nn.Tape() as tape:
        out = nn.sum(W @ x)
        tape.backward(out)
    np.testing.assert_array_equal(W.grad, [[1, 2, 3], [1, 2, 3]])


def test_sigmoid_derivative_at_zero():
    z = param([0.0])
    with nn.Tape() as tape:
        tape.backward(nn.sum(nn.sigmoid(z)))
    assert z.grad[0] == pytest.approx(0.25)


def test_backward_without_forward():
    with pytest.raises(StateError):
        nn.Tape().backward(nn.Tensor(1.0))


def test_backward_on_foreign_loss():
    a = param([1.0, 2.0])
    with nn.Tape() as tape:
        nn.sum(a)
        with pytest.raises(StateError):
            tape.backward(nn.Tensor(3.0, requires_grad=True))


def test_non_finite_trips_fault():
    with pytest.raises(NumericFault):
        nn.mul(nn.Tensor([np.inf]), nn.Tensor([1.0]))


def test_non_parameter_leaves_ignored():
    W = param([[2.0]])
    x = nn.Tensor([[3.0]], requires_grad=True)
    with nn.Tape() as tape:
        tape.backward(nn.sum(W @ x))
    assert W.grad[0, 0] == 3.0


def test_grads_accumulate_additively():
    W = param(np.full((2, 2), 0.5))
    x = nn.Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]))
    with nn.Tape() as tape:
        tape.backward(nn.add(nn.sum(nn.tanh(W @ x)), nn.mean(nn.sigmoid(W @ x))))
    joint = W.grad.copy()
    W.zero_grad()
    for f in (lambda: nn.sum(nn.tanh(W @ x)), lambda: nn.mean(nn.sigmoid(W @ x))):
        with nn.Tape() as tape:
            tape.backward(f())
    np.testing.assert_allclose(W.grad, joint, rtol=1e-6)


def test_reused_tensor_gradient():
    a = param([3.0])
    with nn.Tape() as tape:
        tape.backward(nn.sum(nn.mul(a, a)))
    assert a.grad[0] == 6.0


def test_bce_matches_formula():
    z, y = np.array([2.0, -1.0, 0.0]), np.array([1.0, 0.0, 1.0])
    ref = -np.mean(y * np.log(1 / (1 + np.exp(-z))) + (1 - y) * np.log(1 - 1 / (1 + np.exp(-z))))
    assert float(nn.bce_with_logits(nn.Tensor(z), y).data) == pytest.approx(ref, rel=1e-6)


def test_bce_extreme_logits_finite():
    v = nn.bce_with_logits(nn.Tensor([80.0, -80.0]), np.array([0.0, 1.0]))
    assert v.data == pytest.approx(80.0)


def test_center_loss_value():
    emb = nn.Tensor([[1.0, 0.0], [0.0, 2.0]])
    centers = nn.Tensor([[0.0, 0.0], [0.0, 0.0]])
    assert float(nn.center_loss(emb, centers, [0, 1]).data) == pytest.approx(0.5 * (1 + 4) / 2)


def test_precision_context():
    with nn.precision(np.float64):
        assert nn.Tensor([1.0]).data.dtype == np.float64
    assert nn.Tensor([1.0]).data.dtype == np.float32


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-5, 5)),
       hnp.arrays(np.float64, (4, 2), elements=st.floats(-5, 5)))
def test_matmul_inference_and_tape_agree(a, b):
    A, B = nn.Tensor(a), param(b)
    plain = (A @ B).data
    with nn.Tape():
        recorded = (A @ B).data
    np.testing.assert_allclose(plain, recorded, rtol=1e-5, atol=1e-5)


def test_inference_matmul_is_row_invariant():
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(300, 128)), rng.normal(size=(128, 128))
    full = (nn.Tensor(A) @ nn.Tensor(B)).data
    for i in (0, 17, 299):
        np.testing.assert_array_equal((nn.Tensor(A[i : i + 1]) @ nn.Tensor(B)).data[0], full[i])


@pytest.mark.parametrize("cell", ["elman", "gru", "lstm"])
def test_gradient_check(cell):
    assert model_gradcheck(cell, seed=0) < 1e-4


def test_gradient_check_catches_a_wrong_backward(monkeypatch):
    def sloppy_tanh(x):
        y = np.tanh(x.data)
        return nn._finish(y, (x,), lambda g: (g * (1 - y),), "tanh")

    monkeypatch.setattr(nn, "tanh", sloppy_tanh)
    assert model_gradcheck("elman", seed=0) > 1e-3
