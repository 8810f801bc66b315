import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppgstress.dataset import hot_row_images
from ppgstress.model import Conv2D, Dense, build_default_model, build_model
from ppgstress.train import (
    AdamState, TrainConfig, adam_step, backward, crossentropy, loss_and_gradients,
    stratified_split, train,
)

from oracles import finite_difference

SMALL_SPEC = [("conv", 3), ("conv", 4), ("pool",), ("flatten",), ("dense", 5, "relu"),
              ("dense", 2, "softmax")]


def small_model(seed=1):
    return build_model((8, 8, 1), SMALL_SPEC, seed=seed, dtype=np.float64)


def test_crossentropy_examples():
    assert crossentropy([0.5, 0.5], 0) == pytest.approx(np.log(2), abs=1e-12)
    assert crossentropy([0.5, 0.5], 1) == pytest.approx(0.693147, abs=1e-6)
    assert crossentropy([1.0, 0.0], 0) == 0.0
    assert crossentropy([0.0, 1.0], 0) == pytest.approx(-np.log(1e-12))
    assert crossentropy([0.0, 1.0], 0) == pytest.approx(27.631, abs=1e-3)
    with pytest.raises(ValueError):
        crossentropy([0.5, 0.5], 2)


def test_gradients_match_finite_differences(rng):
    m = small_model()
    x = rng.random((4, 8, 8, 1))
    y = np.array([0, 1, 1, 0])
    got = backward(m, x, y)
    want = finite_difference(m, x, y)
    assert len(got) == len(m.parameters()) == 8
    for g, w in zip(got, want):
        assert g.shape == w.shape
        assert np.max(np.abs(g - w)) / max(np.max(np.abs(w)), 1e-12) <= 1e-4


def test_symmetric_zero_model_bias_gradient(rng):
    m = build_default_model(0)
    for layer in m.layers:
        if isinstance(layer, (Conv2D, Dense)):
            layer.weights[...] = 0
    grads = backward(m, rng.random((4, 64, 64)), [0, 1, 0, 1])
    assert np.array_equal(grads[-1], np.zeros(2))


def test_gradients_invariant_to_batch_duplication(rng):
    m = small_model(4)
    x = rng.random((3, 8, 8, 1))
    y = np.array([1, 0, 1])
    g1 = backward(m, x, y)
    g2 = backward(m, np.concatenate([x, x]), np.concatenate([y, y]))
    for a, b in zip(g1, g2):
        assert np.max(np.abs(a - b)) <= 1e-9


def test_backward_shape_mismatch(rng):
    with pytest.raises(ValueError):
        backward(small_model(), rng.random((3, 8, 8, 1)), [0, 1])


def test_adam_first_step_closed_form():
    p = [np.array([1.0])]
    new, state = adam_step(p, [np.array([0.5])], AdamState.zeros_like(p, lr=0.001))
    assert state.t == 1
    assert new[0][0] - 1.0 == pytest.approx(-0.001 * 0.5 / (0.5 + 1e-8), abs=1e-15)
    assert p[0][0] == 1.0


def test_adam_zero_gradient_is_a_no_op():
    p = [np.arange(4.0)]
    new, _ = adam_step(p, [np.zeros(4)], AdamState.zeros_like(p))
    assert np.array_equal(new[0], p[0])


def test_adam_three_step_trace():
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    theta, m, v = 0.3, 0.0, 0.0
    for t in (1, 2, 3):
        m = b1 * m + (1 - b1) * 1.0
        v = b2 * v + (1 - b2) * 1.0
        theta -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    p = [np.array([0.3])]
    state = AdamState.zeros_like(p)
    for _ in range(3):
        p, state = adam_step(p, [np.array([1.0])], state)
    assert abs(p[0][0] - theta) <= 1e-12


def test_adam_rejects_non_finite():
    p = [np.zeros(2), np.zeros(3)]
    with pytest.raises(FloatingPointError, match="w2"):
        adam_step(p, [np.zeros(2), np.array([0.0, np.inf, 0.0])], AdamState.zeros_like(p),
                  names=["w1", "w2"])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-100, max_value=100).filter(lambda g: abs(g) >= 1e-3),
                min_size=1, max_size=8))
def test_adam_first_step_is_sign_of_gradient(gs):
    g = np.array(gs)
    p = [np.zeros_like(g)]
    lr = 1e-3
    new, _ = adam_step(p, [g], AdamState.zeros_like(p, lr=lr))
    assert np.all(np.abs(new[0] + lr * np.sign(g)) <= lr * 1e-3)


def test_stratified_split_keeps_classes():
    labels = np.array([0] * 50 + [1] * 30)
    tr, va = stratified_split(labels, 0.2, seed=0)
    assert np.bincount(labels[va]).tolist() == [10, 6]
    assert set(tr) | set(va) == set(range(80)) and not set(tr) & set(va)


def test_train_is_deterministic_and_history_length():
    x, y = hot_row_images(16, seed=2)
    cfg = TrainConfig(epochs=2, seed=3)
    m1, h1 = train(build_default_model(0), x, y, cfg)
    m2, h2 = train(build_default_model(0), x, y, cfg)
    assert len(h1) == 2 and len(h1.val_acc) == 2
    for p, q in zip(m1.parameters(), m2.parameters()):
        assert np.array_equal(p, q)
    assert h1.rows() == h2.rows()


def test_separable_toy_set_reaches_full_training_accuracy():
    x, y = hot_row_images(64, seed=3)
    _, hist = train(build_default_model(0), x, y, TrainConfig(epochs=5, seed=1))
    assert max(hist.train_acc) == 1.0
    assert hist.loss[-1] < hist.loss[0]


def test_train_rejects_single_class():
    x, _ = hot_row_images(8)
    with pytest.raises(ValueError, match="two classes"):
        train(build_default_model(0), x, np.zeros(8, int), TrainConfig(epochs=1))


def test_history_exports():
    x, y = hot_row_images(16, seed=2)
    _, h = train(build_default_model(0), x, y, TrainConfig(epochs=1, seed=0, augment=None))
    lines = h.to_csv().splitlines()
    assert lines[0] == "epoch,train_acc,val_acc,loss"
    assert len(lines) == 2 and lines[1].startswith("1,")
    assert '"epochs"' in h.to_json()
