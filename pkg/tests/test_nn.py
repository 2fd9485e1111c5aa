import math

import numpy as np
import pytest

import gradcases as G
from arl import nn
from arl.tensorize import encode_batch, lift
from conftest import obj, scene


@pytest.mark.parametrize("name", sorted(G.OPS))
def test_op_gradients(name):
    fn, params = G.OPS[name]()
    assert nn.grad_check(fn, params, h=1e-4, n_coords=50) < 1e-4


@pytest.mark.parametrize("name", sorted(G.LOSSES))
def test_full_loss_gradients(name):
    fn, params = G.LOSSES[name]()
    assert nn.grad_check(fn, params, h=1e-4, n_coords=50) < 1e-4


def test_grad_check_flags_corrupted_backward():
    base, params = G.dense()

    def broken():
        loss, g = base()
        g["W"] = g["W"] * 1.5
        return loss, g
    assert nn.grad_check(broken, params) > 1e-1


def test_grad_check_on_linear_function():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    c = np.array([0.5, 0.25, -4.0])
    assert nn.grad_check(lambda: (float(p["w"] @ c), {"w": c}), p) < 1e-9


def test_dense_identity():
    x = np.arange(6.0).reshape(2, 3)
    y, _ = nn.dense_forward(np.eye(3), np.zeros(3), x)
    np.testing.assert_array_equal(y, x)
    with pytest.raises(nn.ShapeError):
        nn.dense_forward(np.eye(3), np.zeros(2), x)


def test_embedding_index_range():
    with pytest.raises(IndexError):
        nn.embedding_forward(np.zeros((4, 2)), np.array([[4]]))


def test_pad_positions_do_not_change_the_state():
    r = np.random.default_rng(0)
    D, H = 3, 4
    Wx, Wh, b = r.normal(size=(D, 4 * H)), r.normal(size=(H, 4 * H)), r.normal(size=4 * H)
    x = r.normal(size=(1, 3, D))
    h_short, _ = nn.lstm_forward(Wx, Wh, b, x, np.ones((1, 3)))
    padded = np.concatenate([x, np.zeros((1, 2, D))], axis=1)
    h_pad, _ = nn.lstm_forward(Wx, Wh, b, padded, np.array([[1, 1, 1, 0, 0.0]]))
    np.testing.assert_array_equal(h_short, h_pad)


def test_softmax_ce_uniform_is_log_k():
    loss, _ = nn.softmax_ce(np.zeros(5), 2)
    assert loss == pytest.approx(math.log(5), abs=1e-12)
    with pytest.raises(ValueError):
        nn.softmax_ce(np.zeros((1, 3)), np.array([3]))


def test_softmax_sums_to_one():
    p = nn.softmax(np.random.default_rng(0).normal(scale=20, size=(50, 8)))
    assert np.abs(p.sum(axis=1) - 1).max() < 1e-12


def test_bce_saturates():
    loss, _ = nn.bce(np.array([60.0]), np.array([1.0]))
    assert 0 <= loss < 1e-20
    with pytest.raises(ValueError):
        nn.bce(np.zeros(2), np.array([0.5, 1]))


def test_scene_loss_of_perfect_prediction():
    s = scene(obj(0, x=0.2, y=0.3), obj(1, color="blue", size="small", x=0.2, y=0.3, support=0),
              obj(4, shape="sphere", x=0.8, y=0.1))
    t = encode_batch([s])
    loss, _ = nn.scene_loss(lift(t[0], margin=30.0)[None], t)
    assert 0 <= loss < 1e-6


def test_adam_quadratic_bowl():
    store = nn.ParamStore()
    store.add("w", np.array([1.0]))
    for _ in range(200):
        nn.adam_step(store, {"w": 2 * store["w"]}, lr=0.1)
    assert abs(store["w"][0]) < 1e-2


def test_adam_zero_gradient_and_frozen():
    store = nn.ParamStore()
    store.add("a", np.ones(3))
    store.add("b", np.ones(3))
    store.freeze("b")
    nn.adam_step(store, {"a": np.zeros(3), "b": np.ones(3)})
    np.testing.assert_array_equal(store["a"], np.ones(3))
    np.testing.assert_array_equal(store["b"], np.ones(3))
    with pytest.raises(nn.ShapeError):
        nn.adam_step(store, {"a": np.zeros(2)})


def test_glorot_bounds():
    W = nn.glorot(np.random.default_rng(0), 30, 20)
    assert np.abs(W).max() <= math.sqrt(6 / 50)


def test_checkpoint_round_trip(tmp_path):
    store = nn.ParamStore()
    store.add("x.W", np.random.default_rng(0).normal(size=(3, 4)))
    store.add("x.b", np.zeros(4))
    store.freeze("x.b")
    store.step = 17
    nn.save_checkpoint(tmp_path / "c.npz", store, {"note": "hi"})
    back, extra = nn.load_checkpoint(tmp_path / "c.npz")
    assert back.fingerprint() == store.fingerprint()
    assert back.step == 17 and back.frozen == {"x.b"} and extra == {"note": "hi"}
