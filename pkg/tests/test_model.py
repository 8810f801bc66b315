import numpy as np
import pytest

from ppgstress.fileformat import (
    BadMagicError, TruncatedPayloadError, VersionMismatchError, deserialize, load_model,
    save_model, serialize,
)
from ppgstress.model import (
    DEFAULT_BOUNDARIES, Conv2D, Dense, build_default_model, build_model, conv2d, dense,
    forward, forward_logits, maxpool2, relu, softmax,
)

from oracles import conv2d_loops, dense_loops, maxpool_loops, rel_err


def test_identity_kernel(rng):
    x = rng.normal(size=(5, 6, 1))
    assert np.array_equal(conv2d(x, np.ones((1, 1, 1, 1)), np.zeros(1)), x)


def test_sum_kernel():
    out = conv2d(np.ones((3, 3, 1)), np.ones((3, 3, 1, 1)), np.zeros(1))
    assert out.shape == (1, 1, 1) and out[0, 0, 0] == 9


def test_conv_matches_loops(rng):
    x = rng.normal(size=(8, 8, 2))
    k = rng.normal(size=(3, 3, 2, 3))
    b = rng.normal(size=3)
    assert rel_err(conv2d(x, k, b), conv2d_loops(x, k, b)) < 1e-6


def test_conv_shape_mismatch():
    with pytest.raises(ValueError):
        conv2d(np.ones((5, 5, 2)), np.ones((3, 3, 1, 4)), np.zeros(4))


def test_maxpool_examples():
    assert maxpool2(np.array([[1.0, 2.0], [3.0, 4.0]])[..., None]).ravel().tolist() == [4.0]
    assert maxpool2(np.zeros((29, 29, 3))).shape == (14, 14, 3)
    const = np.full((6, 8, 2), 2.5)
    assert np.array_equal(maxpool2(const), np.full((3, 4, 2), 2.5))
    with pytest.raises(ValueError):
        maxpool2(np.zeros((1, 4, 1)))


def test_maxpool_matches_loops(rng):
    x = rng.normal(size=(7, 9, 3))
    assert np.array_equal(maxpool2(x), maxpool_loops(x))


def test_dense_examples(rng):
    x = rng.normal(size=4)
    assert np.array_equal(dense(x, np.eye(4), np.zeros(4)), x)
    assert dense(x, np.zeros((2, 4)), np.array([1.0, 2.0])).tolist() == [1.0, 2.0]
    W, b, v = rng.normal(size=(3, 5)), rng.normal(size=3), rng.normal(size=5)
    assert rel_err(dense(v, W, b), dense_loops(v, W, b)) < 1e-6
    with pytest.raises(ValueError):
        dense(np.ones(3), W, b)


def test_softmax_examples(rng):
    assert softmax(np.array([0.0, 0.0])).tolist() == [0.5, 0.5]
    assert np.allclose(softmax(np.array([0.0, np.log(3.0)])), [0.25, 0.75], atol=1e-15)
    z = rng.normal(size=5) * 10
    for c in (-1e3, 3.7, 1e3):
        assert np.max(np.abs(softmax(z) - softmax(z + c))) <= 1e-12
    p = softmax(np.array([1e4, -1e4, 0.0]))
    assert abs(p.sum() - 1) < 1e-9 and np.all(p >= 0)


def test_default_parameter_count_and_payload():
    m = build_default_model(0)
    assert m.param_count() == 4_836_866
    sizes = [p.size for p in m.parameters()]
    assert sizes == [288, 32, 18_432, 64, 4_816_896, 384, 768, 2]
    assert m.payload_bytes() == 19_347_464
    assert m.boundary_shapes() == DEFAULT_BOUNDARIES


def test_build_deterministic_and_he_init():
    a, b = build_default_model(7), build_default_model(7)
    for p, q in zip(a.parameters(), b.parameters()):
        assert np.array_equal(p, q)
    assert not np.array_equal(a.parameters()[0], build_default_model(8).parameters()[0])
    dense1 = a.layers[5].weights
    assert dense1.std() == pytest.approx(np.sqrt(2.0 / 12544), rel=0.01)
    assert all(np.all(layer.bias == 0) for layer in a.layers if hasattr(layer, "bias"))


def test_forward_shape_and_simplex(rng):
    m = build_default_model(0)
    x = rng.random((3, 64, 64))
    p = forward(m, x)
    assert p.shape == (3, 2)
    assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-6)
    assert forward(m, x).tobytes() == p.tobytes()
    assert forward(m, x[0]).shape == (1, 2)


def test_zero_weight_model_is_uniform(rng):
    m = build_default_model(0)
    for layer in m.layers:
        if isinstance(layer, (Conv2D, Dense)):
            layer.weights[...] = 0
    assert np.array_equal(forward(m, rng.random((4, 64, 64))), np.full((4, 2), 0.5))


def test_forward_equals_hand_composition(rng):
    m = build_model((10, 10, 1), [("conv", 2), ("pool",), ("conv", 3), ("flatten",),
                                  ("dense", 4, "relu"), ("dense", 2, "softmax")], seed=3,
                    dtype=np.float64)
    x = rng.random((10, 10, 1))
    c1, _, c2, _, d1, d2 = m.layers
    h = relu(conv2d_loops(x, c1.weights, c1.bias))
    h = maxpool_loops(h)
    h = relu(conv2d_loops(h, c2.weights, c2.bias)).reshape(-1)
    h = relu(dense_loops(h, d1.weights, d1.bias))
    want = softmax(dense_loops(h, d2.weights, d2.bias))
    assert rel_err(forward(m, x)[0], want) < 1e-9


def test_shape_mismatch_rejected(rng):
    with pytest.raises(ValueError):
        forward(build_default_model(0), rng.random((2, 32, 32)))


def test_save_load_bit_exact(tmp_path, rng):
    m = build_model((12, 12, 1), [("conv", 4), ("pool",), ("flatten",), ("dense", 6, "relu"),
                                  ("dense", 2, "softmax")], seed=5)
    m.layers[0].bias[:] = rng.normal(size=4)
    save_model(m, tmp_path / "m.sdm")
    back = load_model(tmp_path / "m.sdm")
    for p, q in zip(m.parameters(), back.parameters()):
        assert p.dtype == q.dtype and np.array_equal(p, q)
    x = rng.random((3, 12, 12))
    assert forward(m, x).tobytes() == forward(back, x).tobytes()
    assert [type(layer) for layer in back.layers] == [type(layer) for layer in m.layers]


def test_load_errors_are_distinct(tmp_path):
    m = build_model((6, 6, 1), [("conv", 2), ("flatten",), ("dense", 2, "softmax")], seed=1)
    data = serialize(m)
    with pytest.raises(BadMagicError, match="bad magic"):
        deserialize(b"XDM1" + data[4:])
    with pytest.raises(VersionMismatchError):
        deserialize(data[:4] + (2).to_bytes(4, "little") + data[8:])
    with pytest.raises(TruncatedPayloadError) as exc:
        deserialize(data[:-7])
    assert str(len(data)) in str(exc.value) and str(len(data) - 7) in str(exc.value)
