import numpy as np
import pytest

from topodetect import nn
from topodetect.nn import Conv, Dense, CrossEntropy

from oracles import central_difference, conv_same_loops


def tiny_model(seed, conv=True, size=6):
    stride = 1 + seed % 2
    out = -(-size // stride)
    specs = [Conv(2, 3, stride=stride)] if conv else []
    specs += [Dense(2 * out * out if conv else size * size, 5), Dense(5, 3, relu=False)]
    return nn.build_model((size, size), specs, seed=seed, std=0.5)


def test_softmax_of_constant_logits():
    p = nn.softmax(np.zeros((1, 10)))
    assert np.allclose(p, 0.1)


def test_probabilities_sum_to_one():
    model = nn.scaled_model(seed=3)
    rng = np.random.default_rng(0)
    for _ in range(5):
        trace = nn.forward(model, rng.random((28, 28)))
        assert abs(trace.probabilities.sum() - 1.0) <= 1e-9
        assert trace.predicted == int(np.argmax(trace.probabilities))
        assert len(trace.pre) == len(model.layers) == len(trace.post)


def test_forward_matches_loop_oracle():
    """Conv by explicit loops, dense layers by plain matrix products."""
    model = nn.build_model((8, 8), [Conv(3, 3), Dense(3 * 64, 7), Dense(7, 4, relu=False)], seed=11)
    x = np.random.default_rng(1).random((8, 8))
    conv, d1, d2 = model.layers
    h, _ = conv_same_loops(x[None], conv.weight, conv.bias, conv.stride)
    h = np.maximum(h, 0).reshape(-1)
    h = np.maximum(h @ d1.weight + d1.bias, 0)
    z = h @ d2.weight + d2.bias
    assert np.allclose(nn.forward(model, x).logits, z, atol=1e-12)


def test_forward_rejects_bad_shape_and_range():
    model = nn.scaled_model()
    with pytest.raises(nn.RejectedInputError):
        nn.forward(model, np.zeros((27, 28)))
    with pytest.raises(nn.RejectedInputError):
        nn.forward(model, np.full((28, 28), 1.5))
    with pytest.raises(nn.RejectedInputError):
        nn.forward(model, np.full((28, 28), np.nan))


def test_same_padding_convention():
    assert nn.same_padding(28, 5, 1) == (28, 2, 2)
    assert nn.same_padding(6, 3, 2) == (3, 0, 1)


def test_vertex_numbering():
    model = nn.scaled_model()
    offs = model.vertex_offsets
    assert offs[0] == 0 and offs[1] == 784
    assert offs[2] == 784 + 8 * 28 * 28
    assert model.neuron_count == 784 + 8 * 784 + 128 + 10


class ConstantLoss:
    def value_and_grad(self, logits):
        return np.zeros(len(logits)), np.zeros_like(logits)


def test_constant_loss_has_zero_gradient():
    g = nn.input_gradient(tiny_model(0), np.full((6, 6), 0.3), ConstantLoss())
    assert np.all(g == 0)


def test_cross_entropy_logit_gradient():
    z = np.array([[1.0, -2.0, 0.5]])
    _, g = CrossEntropy(np.array([2])).value_and_grad(z)
    assert np.allclose(g, nn.softmax(z) - np.eye(3)[[2]])


@pytest.mark.parametrize("seed", range(5))
def test_input_gradient_finite_differences(seed):
    model = tiny_model(seed)
    x = np.random.default_rng(seed).uniform(0.05, 0.95, (6, 6))
    loss = CrossEntropy(np.array([seed % 3]))
    g = nn.input_gradient(model, x, loss)
    fd = central_difference(lambda v: float(loss.value_and_grad(nn.logits_batch(model, v[None]))[0]),
                            x, eps=1e-5)
    scale = np.maximum(np.abs(fd), 1e-8)
    big = np.abs(fd) > 1e-6
    assert np.all(np.abs(g - fd)[big] / scale[big] < 1e-4)


def test_train_zero_epochs_is_identity():
    model = tiny_model(1, conv=False)
    rng = np.random.default_rng(0)
    trained = nn.train(model, rng.random((10, 6, 6)), rng.integers(0, 3, 10), epochs=0)
    for a, b in zip(model.layers, trained.layers):
        assert np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)


def test_train_separable_toy_set():
    rng = np.random.default_rng(0)
    x = rng.random((400, 4, 4))
    gap = x[:, :2].mean(axis=(1, 2)) - x[:, 2:].mean(axis=(1, 2))
    keep = np.abs(gap) > 0.05  # separable with a margin
    x, y = x[keep], (gap[keep] > 0).astype(int)
    model = nn.build_model((4, 4), [Dense(16, 16), Dense(16, 2, relu=False)], seed=0, std=0.3)
    trained = nn.train(model, x, y, epochs=50, batch_size=16, learning_rate=0.2)
    assert nn.accuracy(trained, x, y) >= 0.99


def test_train_rejects_bad_data():
    model = tiny_model(0, conv=False)
    with pytest.raises(ValueError):
        nn.train(model, np.zeros((0, 6, 6)), np.zeros(0, dtype=int))
    with pytest.raises(ValueError):
        nn.train(model, np.zeros((2, 6, 6)), np.array([0, 7]))


@pytest.mark.slow
def test_scaled_model_heldout_accuracy(desk_model, desk_run, mnist):
    from topodetect.pipeline import make_split
    split = make_split(len(mnist), desk_run[0])
    held = split.source_pool[:1000]
    acc = nn.accuracy(desk_model, mnist.images[held], mnist.labels[held])
    assert acc >= 0.90, acc


def test_save_load_roundtrip(tmp_path):
    model = nn.scaled_model(seed=5)
    path = tmp_path / "m.tdnn"
    nn.save_model(model, path, {"note": "x"})
    back = nn.load_model(path)
    for a, b in zip(model.layers, back.layers):
        assert a.weight.tobytes() == b.weight.tobytes()
        assert a.bias.tobytes() == b.bias.tobytes()
    assert back.input_shape == model.input_shape


def test_load_rejects_truncated_and_bad_magic(tmp_path):
    path = tmp_path / "m.tdnn"
    nn.save_model(tiny_model(0), path)
    raw = path.read_bytes()
    (tmp_path / "short").write_bytes(raw[:-9])
    with pytest.raises(nn.ModelFormatError, match="truncated"):
        nn.load_model(tmp_path / "short")
    (tmp_path / "magic").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(nn.ModelFormatError, match="magic"):
        nn.load_model(tmp_path / "magic")
