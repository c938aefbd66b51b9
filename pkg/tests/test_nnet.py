import numpy as np
import pytest

import oracles
from ttsnet.nnet import serialize
from ttsnet.nnet.gradcheck import gradient_check
from ttsnet.nnet.layers import (AvgPool2d, BatchNorm2d, Conv2d, Dropout, ELU, Flatten, Linear,
                                NonFiniteError, Parameter, ReLU, Sequential, ShapeError,
                                ZeroPad2d)
from ttsnet.nnet.nets import FusedNet, classifier_head, temporal_decoder
from ttsnet.nnet.optim import Adam, cross_entropy
from ttsnet.nnet.train import TrainConfig, predict_logits, train_network


def decoder_shapes(B, C, T, K):
    """Expected activation shapes of the decoder, written out by hand."""
    return [(B, 1, C, T),
            (B, 1, C, T + 63), (B, 8, C, T), (B, 8, C, T), (B, 16, 1, T), (B, 16, 1, T),
            (B, 16, 1, T), (B, 16, 1, T // 4), (B, 16, 1, T // 4),
            (B, 16, 1, T // 4 + 15), (B, 16, 1, T // 4), (B, 16, 1, T // 4), (B, 16, 1, T // 4),
            (B, 16, 1, T // 4), (B, 16, 1, T // 32), (B, 16, 1, T // 32),
            (B, 16 * (T // 32)), (B, K)]


@pytest.mark.parametrize("C,T,K", [(3, 256, 2), (6, 512, 2), (11, 768, 7), (11, 512, 2),
                                   (6, 192, 2), (4, 100, 3)])
def test_decoder_shapes(rng, C, T, K):
    net = temporal_decoder(C, T, K, rng)
    assert net.shapes((2, 1, C, T)) == decoder_shapes(2, C, T, K)
    x = rng.standard_normal((2, 1, C, T)).astype(np.float32)
    # the executed activations follow the same shapes, layer by layer
    net.fused = False
    for layer, shape in zip(net.layers, decoder_shapes(2, C, T, K)[1:]):
        x = layer.forward(x)
        assert x.shape == shape


def test_decoder_layer_list(rng):
    net = temporal_decoder(11, 512, 2, rng)
    kinds = [type(l).__name__ for l in net.layers]
    assert kinds == ["ZeroPad2d", "Conv2d", "BatchNorm2d", "Conv2d", "BatchNorm2d", "ELU",
                     "AvgPool2d", "Dropout", "ZeroPad2d", "Conv2d", "Conv2d", "BatchNorm2d",
                     "ELU", "AvgPool2d", "Dropout", "Flatten", "Linear"]
    L = net.layers
    assert L[0].pad == (31, 32, 0, 0) and L[8].pad == (7, 8, 0, 0)
    assert (L[1].out_ch, L[1].kernel, L[1].groups) == (8, (1, 64), 1)
    assert (L[3].out_ch, L[3].kernel, L[3].groups) == (16, (11, 1), 8)
    assert (L[9].kernel, L[9].groups) == ((1, 16), 16)
    assert (L[10].kernel, L[10].groups) == ((1, 1), 1)
    assert L[6].k == 4 and L[13].k == 8 and L[7].p == L[14].p == 0.25
    assert (L[16].n_in, L[16].n_out) == (256, 2)
    assert all(len(l.params) == 1 for l in L if isinstance(l, (Linear, Conv2d)))


@pytest.mark.parametrize("K,F,widths", [(2, 10, (20, 40, 10, 2)), (7, 10, (70, 140, 35, 7))])
def test_head_widths(rng, K, F, widths):
    head = classifier_head(K, F, rng)
    assert head.shapes((5, K, F)) == [(5, K, F), (5, widths[0]), (5, widths[1]), (5, widths[1]),
                                      (5, widths[2]), (5, widths[2]), (5, widths[3])]
    assert not head.forward(np.zeros((5, K, F), np.float32)).any()


def test_decoder_examples(rng):
    net = temporal_decoder(11, 512, 2, rng)
    assert net.forward(rng.standard_normal((50, 1, 11, 512)).astype(np.float32)).shape == (50, 2)
    net = temporal_decoder(11, 768, 7, rng)
    assert net.shapes((1, 1, 11, 768))[-4] == (1, 16, 1, 24)


def test_zero_weights_zero_logits(rng):
    net = temporal_decoder(3, 64, 2, rng)
    for p in net.params:
        p.data[...] = 0
    assert not net.forward(rng.standard_normal((4, 1, 3, 64)).astype(np.float32)).any()


def test_shape_error_names_layer(rng):
    net = temporal_decoder(3, 64, 2, rng)
    with pytest.raises(ShapeError, match="layer"):
        net.shapes((1, 1, 4, 64))
    with pytest.raises(ShapeError):
        temporal_decoder(3, 16, 2, rng)


def test_nonfinite_diagnostic(rng):
    net = Sequential([Linear(3, 2, rng=rng), ReLU()])
    with pytest.raises(NonFiniteError, match="layer 0"):
        net.forward(np.array([[np.inf, 0.0, 0.0]]))


def test_zero_upstream_gives_zero_grads(rng):
    net = temporal_decoder(3, 64, 2, rng, dtype=np.float64)
    net.forward(rng.standard_normal((4, 1, 3, 64)), training=True)
    for p in net.params:
        p.zero_grad()
    net.backward(np.zeros((4, 2)))
    assert all(not p.grad.any() for p in net.params)


# gradients ---------------------------------------------------------------------------------

@pytest.mark.parametrize("layer,shape,training", [
    (lambda r: ELU(), (2, 3, 2, 6), False),
    (lambda r: BatchNorm2d(3), (4, 3, 2, 5), True),
    (lambda r: Conv2d(4, 8, (2, 3), groups=2, rng=r, dtype=np.float64), (2, 4, 3, 7), False),
    (lambda r: AvgPool2d(3), (2, 2, 1, 11), False),
])
def test_layer_gradients(rng, layer, shape, training):
    errs = gradient_check(layer(rng), rng.standard_normal(shape), training=training)
    assert max(errs.values()) < 1e-4


def test_grouped_conv_equals_dense_groups(rng):
    """A grouped conv is the per-group dense convs stacked, in outputs and gradients."""
    G, cin, cout = 2, 4, 6
    conv = Conv2d(cin, cout, (2, 3), groups=G, rng=rng, dtype=np.float64)
    x = rng.standard_normal((2, cin, 3, 8))
    dy = rng.standard_normal((2, cout, 2, 6))
    y = conv.forward(x)
    dx = conv.backward(dy)
    gi, go = cin // G, cout // G
    for g in range(G):
        dense = Conv2d(gi, go, (2, 3), rng=rng, dtype=np.float64)
        dense.weight.data = conv.weight.data[g * go:(g + 1) * go].copy()
        yg = dense.forward(x[:, g * gi:(g + 1) * gi])
        np.testing.assert_allclose(y[:, g * go:(g + 1) * go], yg, atol=1e-12)
        ref = oracles.dense_conv2d(x[0, g * gi:(g + 1) * gi].tolist(), dense.weight.data.tolist())
        np.testing.assert_allclose(yg[0], ref, atol=1e-12)
        dxg = dense.backward(dy[:, g * go:(g + 1) * go])
        np.testing.assert_allclose(dx[:, g * gi:(g + 1) * gi], dxg, atol=1e-12)
        np.testing.assert_allclose(conv.weight.grad[g * go:(g + 1) * go], dense.weight.grad,
                                   atol=1e-12)


@pytest.mark.parametrize("strategy", ["auto", "im2col"])
def test_conv_strategies_agree(rng, strategy):
    x = rng.standard_normal((2, 1, 3, 80))
    a = Conv2d(1, 8, (1, 64), rng=np.random.default_rng(1), dtype=np.float64, strategy=strategy)
    b = Conv2d(1, 8, (1, 64), rng=np.random.default_rng(1), dtype=np.float64, strategy="im2col")
    np.testing.assert_allclose(a.forward(x), b.forward(x), atol=1e-12)


@pytest.mark.parametrize("training", [False, True])
def test_fused_front_matches_layers(rng, training):
    ref = temporal_decoder(5, 96, 2, np.random.default_rng(7), dtype=np.float64)
    fused = temporal_decoder(5, 96, 2, np.random.default_rng(7), dtype=np.float64)
    for net in (ref, fused):
        net.layers[2].gamma.data[:] = np.linspace(0.5, 1.5, 8)
        net.layers[2].beta.data[:] = np.linspace(-0.3, 0.3, 8)
    ref.fused = False
    x = rng.standard_normal((6, 1, 5, 96))
    dy = rng.standard_normal((6, 2))
    outs = []
    for net in (ref, fused):
        net.layers[7].p = net.layers[14].p = 0.0
        y = net.forward(x, training)
        dx = net.backward(dy)
        outs.append((y, dx, [p.grad.copy() for p in net.params], net.layers[2].running_var))
    np.testing.assert_allclose(outs[0][0], outs[1][0], atol=1e-10)
    np.testing.assert_allclose(outs[0][1], outs[1][1], atol=1e-10)
    for a, b in zip(outs[0][2], outs[1][2]):
        # some gradients vanish exactly (a shift before batch norm); compare absolutely
        np.testing.assert_allclose(a, b, atol=1e-10)
    np.testing.assert_allclose(outs[0][3], outs[1][3], atol=1e-12)


def test_first_conv_shift_equivariance(rng):
    conv = Conv2d(1, 8, (1, 64), rng=rng, dtype=np.float64)
    pad = ZeroPad2d(31, 32)
    x = rng.standard_normal((1, 1, 3, 200))
    for s in (1, 3, 8):
        shifted = np.roll(x, s, axis=-1)
        a = conv.forward(pad.forward(x))
        b = conv.forward(pad.forward(shifted))
        # away from the padded borders the output moves with the input
        np.testing.assert_allclose(b[..., 40 + s:160 + s], a[..., 40:160], atol=1e-12)


# optimizer and loss ------------------------------------------------------------------------

def scalar_param(v=1.0):
    return Parameter("p", np.array([v]))


def test_adam_hand_recurrence():
    p = scalar_param(0.7)
    grads = [0.3, -1.2, 0.05]
    opt = Adam([p], lr=1e-3, weight_decay=0.1)
    got = []
    for g in grads:
        p.grad[:] = g
        opt.step()
        got.append(float(p.data[0]))
    np.testing.assert_allclose(got, oracles.adam_scalar(0.7, grads, wd=0.1), atol=1e-12, rtol=0)


def test_adam_descends_and_rests():
    p = scalar_param()
    opt = Adam([p])
    values = []
    for _ in range(5):
        p.grad[:] = 1.0
        opt.step()
        values.append(float(p.data[0]))
    assert all(b < a for a, b in zip([1.0] + values, values))
    q = scalar_param(2.0)
    opt = Adam([q])
    q.grad[:] = 0.0
    opt.step()
    assert q.data[0] == 2.0


def test_cross_entropy_values(rng):
    loss, grad = cross_entropy(np.zeros((3, 2)), np.array([0, 1, 1]))
    assert loss == pytest.approx(np.log(2), abs=1e-12)
    loss, _ = cross_entropy(np.array([[800.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-300)
    logits = rng.standard_normal((6, 4)) * 3
    labels = rng.integers(0, 4, 6)
    loss, grad = cross_entropy(logits, labels)
    assert loss == pytest.approx(oracles.cross_entropy(logits, labels), abs=1e-10)
    soft = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(grad, (soft - np.eye(4)[labels]) / 6, atol=1e-14)
    with pytest.raises(ValueError):
        cross_entropy(logits, np.array([0, 1, 2, 3, 4, 0]))


# training --------------------------------------------------------------------------------------

def toy_data(rng, n=60, C=2, T=64):
    y = np.arange(n) % 2
    t = np.arange(T)
    bump = np.exp(-((t - T / 2) / 6) ** 2)
    X = 0.5 * rng.standard_normal((n, 1, C, T))
    X[:, 0, 0] += np.where(y == 1, 1.5, -1.5)[:, None] * bump
    return X.astype(np.float32), y


def test_training_separable_toy(rng):
    X, y = toy_data(rng)
    net = temporal_decoder(2, 64, 2, np.random.default_rng(0))
    train_network(net, X, y, TrainConfig(epochs=200, seed=0))
    acc = np.mean(predict_logits(net, X).argmax(axis=1) == y)
    assert acc >= 0.95


def test_training_deterministic(rng):
    X, y = toy_data(rng)
    losses = []
    for _ in range(2):
        net = temporal_decoder(2, 64, 2, np.random.default_rng(0))
        hist = train_network(net, X, y, TrainConfig(epochs=3, seed=5))
        losses.append((hist.loss[-1], serialize.encode_state(serialize.state_dict(net))))
    assert losses[0] == losses[1]


def test_training_lr_zero(rng):
    X, y = toy_data(rng)
    net = temporal_decoder(2, 64, 2, np.random.default_rng(0))
    before = [p.data.copy() for p in net.params]
    train_network(net, X, y, TrainConfig(epochs=2, lr=0.0, seed=1))
    assert all(np.array_equal(a, p.data) for a, p in zip(before, net.params))


def test_inference_independent_of_batching(rng):
    net = temporal_decoder(4, 96, 3, np.random.default_rng(2))
    X, y = toy_data(rng, n=30, C=4, T=96)
    train_network(net, X, y, TrainConfig(epochs=1, seed=0))
    full = predict_logits(net, X)
    for bs in (1, 7, 30):
        assert np.array_equal(predict_logits(net, X, batch_size=bs), full)


# serialization -------------------------------------------------------------------------------

def test_weights_round_trip(tmp_path, rng):
    a = FusedNet([temporal_decoder(3, 64, 2, rng) for _ in range(2)], classifier_head(2, 2, rng))
    a.decoders[0].layers[2].running_mean[:] = 0.25
    b = FusedNet([temporal_decoder(3, 64, 2, rng) for _ in range(2)], classifier_head(2, 2, rng))
    serialize.save_weights(a, tmp_path / "w.nnw")
    serialize.load_weights(b, tmp_path / "w.nnw")
    sa, sb = serialize.state_dict(a), serialize.state_dict(b)
    assert list(sa) == list(sb)
    assert all(np.array_equal(sa[k], sb[k]) and sa[k].dtype == sb[k].dtype for k in sa)
    assert (tmp_path / "w.nnw").read_bytes()[:4] == b"NNW1"
    with pytest.raises(ValueError):
        serialize.decode_state(b"XXXX" + bytes(8))
