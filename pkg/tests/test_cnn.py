import math

import numpy as np
import pytest

from qlfnet.cnn import (
    ArchSpec, TrainConfig, analytic_gradient, build_model, forward, grad_check,
    load_model, numeric_gradient, predict, save_model, softmax, softmax_cross_entropy, train,
)
from qlfnet.errors import ParseError, ShapeError
from qlfnet.metrics import f1_macro

from oracles import conv_layer_loop

TINY = ArchSpec(input_channels=1, input_height=4, input_width=4, stem_maps=2,
                blocks=((2, True),), dense_hidden=4, classes=2)


def _zero_head(model):
    model.out.weights[...] = 0.0
    model.out.bias[...] = 0.0
    return model


def test_build_is_deterministic():
    arch = ArchSpec(3, 16, 16)
    assert build_model(arch, 5).parameter_bytes() == build_model(arch, 5).parameter_bytes()
    assert build_model(arch, 5).parameter_bytes() != build_model(arch, 6).parameter_bytes()


def test_invalid_arch():
    with pytest.raises(ValueError):
        ArchSpec(classes=1)
    with pytest.raises(ValueError):
        ArchSpec(blocks=())
    with pytest.raises(ValueError):
        ArchSpec(input_height=18)  # two pools need a multiple of 4


def test_head_size_by_shape_propagation():
    # 16x16 -> pool -> 8x8 -> pool -> 4x4 with 16 maps in the last block
    arch = ArchSpec(3, 16, 16, blocks=((8, True), (16, True)))
    model = build_model(arch, 0)
    assert model.hidden.weights.shape[1] == 16 * 4 * 4
    arch = ArchSpec(3, 16, 16, blocks=((8, True), (12, False)))
    assert build_model(arch, 0).hidden.weights.shape[1] == 12 * 8 * 8


def test_zero_head_gives_uniform_softmax_and_class_zero():
    model = _zero_head(build_model(ArchSpec(3, 16, 16), 1))
    x = np.random.default_rng(0).uniform(size=(5, 3, 16, 16))
    logits = forward(model, x[0])
    assert np.all(logits == logits[0])
    np.testing.assert_allclose(softmax(logits), 1 / 3)
    assert list(predict(model, x)) == [0] * 5


def test_forward_matches_layer_composition():
    rng = np.random.default_rng(2)
    model = build_model(TINY, 3)
    for layer in model.linear_layers():
        layer.bias[...] = rng.normal(size=layer.bias.shape) * 0.1
    x = rng.normal(size=(1, 4, 4))
    relu = lambda v: np.maximum(v, 0)
    stem = relu(conv_layer_loop(x, model.stem.weights, model.stem.bias))
    blk = model.blocks[0]
    inner = relu(conv_layer_loop(stem, blk.conv_a.weights, blk.conv_a.bias))
    res = relu(conv_layer_loop(inner, blk.conv_b.weights, blk.conv_b.bias) + stem)
    pooled = res.reshape(2, 2, 2, 2, 2).max(axis=(2, 4))
    hidden = relu(model.hidden.weights @ pooled.ravel() + model.hidden.bias)
    expected = model.out.weights @ hidden + model.out.bias
    np.testing.assert_allclose(forward(model, x), expected, atol=1e-12)


def test_forward_wrong_channels():
    with pytest.raises(ShapeError):
        forward(build_model(ArchSpec(3, 16, 16), 0), np.zeros((1, 16, 16)))


def test_softmax_cross_entropy_examples():
    loss, grad = softmax_cross_entropy(np.zeros(4), 1)
    assert loss == pytest.approx(math.log(4), abs=1e-15)
    np.testing.assert_allclose(grad, [0.25, -0.75, 0.25, 0.25])
    loss, _ = softmax_cross_entropy(np.array([1000.0, 0.0]), 0)
    assert math.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-300)
    loss, _ = softmax_cross_entropy(np.array([1.0, 2.0, 3.0]), 2)
    direct = -math.log(math.exp(3) / (math.exp(1) + math.exp(2) + math.exp(3)))
    assert loss == pytest.approx(direct, abs=1e-14)
    assert loss == pytest.approx(0.40761, abs=1e-5)
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros(3), 3)


def test_softmax_sums_to_one():
    rng = np.random.default_rng(3)
    for _ in range(200):
        z = rng.uniform(-1e3, 1e3, size=rng.integers(2, 10))
        assert abs(softmax(z).sum() - 1.0) < 1e-12


def test_predict_shift_invariance_and_empty():
    rng = np.random.default_rng(4)
    model = build_model(TINY, 0)
    x = rng.normal(size=(10, 1, 4, 4))
    before = predict(model, x)
    model.out.bias[...] += 7.5
    np.testing.assert_array_equal(predict(model, x), before)
    assert predict(model, np.zeros((0, 1, 4, 4))).shape == (0,)


def _toy_set(n=24, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.uniform(0, 0.3, size=(n, 1, 4, 4))
    x[y == 0, :, :, :2] += 0.6
    x[y == 1, :, :, 2:] += 0.6
    return x, y


def test_zero_learning_rate_keeps_loss():
    x, y = _toy_set()
    _, hist = train(build_model(TINY, 0), (x, y), (x, y), TrainConfig(learning_rate=0.0, epochs=1, l2=0.0))
    assert hist["train_loss"][1] == hist["train_loss"][0]


def test_separable_toy_reaches_perfect_f1_and_is_deterministic():
    x, y = _toy_set()
    cfg = TrainConfig(learning_rate=0.05, epochs=200, batch_size=8, seed=3)
    model, hist = train(build_model(TINY, 1), (x, y), (x, y), cfg)
    assert f1_macro(y, predict(model, x)) == 1.0
    np.testing.assert_array_equal(predict(model, x), y)
    _, hist2 = train(build_model(TINY, 1), (x, y), (x, y), cfg)
    assert hist == hist2


def test_flips_are_seeded_and_change_training():
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, (16, 1, 4, 4))
    y = (x.mean(axis=(1, 2, 3)) > 0.5).astype(int)
    base = TrainConfig(learning_rate=0.05, epochs=5, batch_size=4, seed=2)
    flipped = TrainConfig(learning_rate=0.05, epochs=5, batch_size=4, seed=2, flips=True)
    _, h0 = train(build_model(TINY, 1), (x, y), (x, y), base)
    _, h1 = train(build_model(TINY, 1), (x, y), (x, y), flipped)
    _, h2 = train(build_model(TINY, 1), (x, y), (x, y), flipped)
    assert h1 == h2
    assert h1["train_loss"][1:] != h0["train_loss"][1:]


def test_flips_leave_symmetric_images_alone():
    x = np.ones((8, 1, 4, 4)) * np.arange(8)[:, None, None, None] / 8
    y = (np.arange(8) >= 4).astype(int)
    base = TrainConfig(learning_rate=0.05, epochs=3, batch_size=4, seed=2)
    _, h0 = train(build_model(TINY, 1), (x, y), (x, y), base)
    _, h1 = train(build_model(TINY, 1), (x, y), (x, y), TrainConfig(**{**base.__dict__, "flips": True}))
    assert h0 == h1


def test_residual_branch_starts_small():
    arch = ArchSpec(input_channels=3, input_height=16, input_width=16)
    model = build_model(arch, 0)
    for block in model.blocks:
        assert np.abs(block.conv_b.weights).max() < 0.2 * np.abs(block.conv_a.weights).max()


def test_train_rejects_empty():
    x, y = _toy_set()
    with pytest.raises(ValueError):
        train(build_model(TINY, 0), (x[:0], y[:0]), (x, y), TrainConfig())


def test_single_sgd_step_decreases_loss():
    rng = np.random.default_rng(5)
    for trial in range(20):
        model = build_model(TINY, trial)
        x = rng.normal(size=(1, 1, 4, 4))
        label = int(rng.integers(2))
        before, _ = softmax_cross_entropy(forward(model, x[0]), label)
        g = analytic_gradient(model, x[0], label)
        for lr in (1e-4, 1e-5):
            stepped = model.copy()
            offset = 0
            for p in stepped.params:
                p -= lr * g[offset:offset + p.size].reshape(p.shape)
                offset += p.size
            after, _ = softmax_cross_entropy(forward(stepped, x[0]), label)
            if after < before:
                break
        assert after < before


def test_numeric_gradient_agrees_with_literal_perturbation():
    rng = np.random.default_rng(6)
    arch = ArchSpec(2, 4, 4, stem_maps=2, blocks=((3, True),), dense_hidden=3, classes=3)
    model = build_model(arch, 2)
    x = rng.uniform(size=(2, 4, 4))
    label = 1
    fast = numeric_gradient(model, x, label, 1e-5)
    literal = []
    for p in model.params:
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + 1e-5
            lp, _ = softmax_cross_entropy(forward(model, x), label)
            p[idx] = old - 1e-5
            lm, _ = softmax_cross_entropy(forward(model, x), label)
            p[idx] = old
            literal.append((lp - lm) / 2e-5)
    np.testing.assert_allclose(fast, literal, rtol=0, atol=1e-9)


def test_numeric_gradient_secant_across_kink():
    # park hidden unit 0 exactly on its ReLU kink: the central difference of
    # its bias then spans one active and one inactive side, i.e. half the slope
    arch = ArchSpec(1, 2, 2, stem_maps=1, blocks=((1, False),), dense_hidden=2, classes=2)
    model = build_model(arch, 0)
    x = np.ones((1, 2, 2))
    logits = forward(model, x)
    h_in = model.hidden._x[0]
    model.hidden.bias[0] = -model.hidden.weights[0] @ h_in
    logits = forward(model, x)
    p = softmax(logits)
    slope = (p - np.array([1.0, 0.0])) @ model.out.weights[:, 0]
    g_num = numeric_gradient(model, x, 0, 1e-5)
    n_before = sum(l.weights.size + l.bias.size for l in model.linear_layers()[:-2]) + model.hidden.weights.size
    assert g_num[n_before] == pytest.approx(0.5 * slope, rel=1e-6)
    g_an = analytic_gradient(model, x, 0)
    n_out = model.out.weights.size + model.out.bias.size
    np.testing.assert_allclose(g_num[-n_out:], g_an[-n_out:], rtol=1e-7, atol=1e-12)


def test_grad_check_tiny_model():
    rng = np.random.default_rng(7)
    model = build_model(ArchSpec(1, 4, 4, stem_maps=2, blocks=((2, True),), dense_hidden=4, classes=3), 0)
    x = rng.uniform(size=(1, 4, 4))
    err = grad_check(model, x, 2, 1e-5)
    assert math.isfinite(err) and err < 1e-5
    assert grad_check(model, x, 2, 1e-5) == err


def test_checkpoint_round_trip(tmp_path):
    model = build_model(ArchSpec(3, 8, 8, blocks=((4, True), (6, False))), 9)
    path = tmp_path / "m.ckpt"
    save_model(model, path)
    back = load_model(path)
    assert back.arch == model.arch
    assert back.parameter_bytes() == model.parameter_bytes()
    assert path.read_bytes()[:8] == b"QLFNCNN\0"
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(ParseError, match="bad.ckpt"):
        load_model(bad)
    short = tmp_path / "short.ckpt"
    short.write_bytes(path.read_bytes()[:-9])
    with pytest.raises(ParseError):
        load_model(short)
