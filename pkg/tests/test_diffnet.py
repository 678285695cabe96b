import math

import numpy as np
import pytest

from avrl.diffnet import (CHECKPOINT_MAGIC, AdamState, CheckpointError, Conv2D, Dense,
                          DualHeadNet, Flatten, MultiHeadNet, ReLU, RewardNet, Sequential,
                          ToChannelsLast, adam_step, build_encoder, conv_output_size, grad_check,
                          gradcheck_suite, identity_encoder, load_checkpoint,
                          read_checkpoint_hash, save_checkpoint, softmax,
                          softmax_cross_entropy, squared_error)


def naive_conv(x, w, b, stride):
    """Direct NCHW convolution loop."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    oh, ow = (h - k) // stride + 1, (wd - k) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = x[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3])) + b
    return out


def mse(target):
    def fn(outputs):
        loss, g = squared_error(outputs[0], target)
        return loss, (g,)
    return fn


# -- forward ------------------------------------------------------------------

def test_scalar_conv():
    conv = Conv2D(1, 1, 1, 1, dtype=np.float64)
    conv.params["weight"][:] = 2.0
    out = conv.forward(np.full((1, 1, 1, 1), 3.0))
    assert out.item() == 6.0


@pytest.mark.parametrize("k,s", [(8, 4), (4, 2), (3, 1), (3, 2), (5, 3)])
def test_conv_matches_naive(k, s):
    rng = np.random.default_rng(k * 10 + s)
    conv = Conv2D(3, 5, k, s, rng=rng, dtype=np.float64)
    conv.params["bias"][:] = rng.normal(size=5)
    x = rng.normal(size=(2, 3, 17, 19))
    out = conv.forward(x.transpose(0, 2, 3, 1)).transpose(0, 3, 1, 2)
    ref = naive_conv(x, conv.params["weight"], conv.params["bias"], s)
    assert np.allclose(out, ref, atol=1e-12)


def test_zero_weights_propagate_bias():
    enc, fdim = build_encoder(4, 36, rng=np.random.default_rng(0), dtype=np.float64)
    net = MultiHeadNet(enc, fdim, {"a": 3}, rng=np.random.default_rng(0), dtype=np.float64)
    for _, p in net.named_parameters():
        p[...] = 0.0
    net.heads["a"].params["bias"][:] = [1.0, -2.0, 0.5]
    enc.layers[1][1].params["bias"][:] = -1.0  # dead after the first ReLU
    out = net.forward(np.zeros((2, 4, 36, 36)))[0]
    assert np.array_equal(out, np.tile([1.0, -2.0, 0.5], (2, 1)))


def test_dual_head_shapes_and_stride_arithmetic():
    net = DualHeadNet(4, 3, 16, rng=np.random.default_rng(0))
    sizes = [84]
    for _, k, s in ((32, 8, 4), (64, 4, 2), (64, 3, 1)):
        sizes.append(conv_output_size(sizes[-1], k, s))
    assert sizes == [84, 20, 9, 7]
    qm, qs = net.forward(np.random.default_rng(1).random((2, 4, 84, 84)))
    assert qm.shape == (2, 3) and qs.shape == (2, 16)
    expected = (32 * 4 * 64 + 32) + (64 * 32 * 16 + 64) + (64 * 64 * 9 + 64) \
        + (64 * 7 * 7 * 512 + 512) + (512 * 3 + 3) + (512 * 16 + 16)
    assert net.num_parameters() == expected == 1_693_875


def test_forward_deterministic():
    net = DualHeadNet(4, 3, 16, input_size=42, rng=np.random.default_rng(0))
    x = np.random.default_rng(1).random((3, 4, 42, 42))
    a = net.forward(x)
    b = net.forward(x)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))


def test_relu_nonnegative():
    enc, _ = build_encoder(2, 36, rng=np.random.default_rng(0))
    feats = enc.forward(np.random.default_rng(1).normal(size=(2, 2, 36, 36)))
    assert feats.min() >= 0


# -- backward -----------------------------------------------------------------

def test_dense_closed_form_gradient():
    rng = np.random.default_rng(0)
    layer = Dense(5, 3, rng=rng, dtype=np.float64)
    x, y = rng.normal(size=(1, 5)), rng.normal(size=(1, 3))
    out = layer.forward(x)
    layer.backward(2 * (out - y))
    W = layer.params["weight"]
    assert np.allclose(layer.grads["weight"], 2 * np.outer(W @ x[0] - y[0], x[0]))


def test_dead_path_has_zero_gradient():
    rng = np.random.default_rng(0)
    enc = Sequential([("fc", Dense(4, 3, rng=rng, dtype=np.float64)), ("relu", ReLU())])
    enc.layers[0][1].params["bias"][:] = [-100.0, 0.0, 0.0]
    net = MultiHeadNet(enc, 3, {"o": 2}, rng=rng, dtype=np.float64)
    out = net.forward(rng.normal(size=(6, 4)) * 0.1)
    net.backward([np.ones_like(out[0])])
    assert np.all(enc.layers[0][1].grads["weight"][0] == 0)


def test_backward_without_forward_raises():
    with pytest.raises(RuntimeError):
        Dense(2, 2).backward(np.ones((1, 2)))
    net = DualHeadNet(1, 2, 2, input_size=36)
    with pytest.raises(RuntimeError):
        net.backward([np.ones((1, 2)), None])


def test_gradient_shapes():
    net = DualHeadNet(2, 3, 5, input_size=36, rng=np.random.default_rng(0))
    qm, qs = net.forward(np.random.default_rng(1).random((2, 2, 36, 36)))
    net.backward([np.ones_like(qm), np.ones_like(qs)])
    for (name, p), (gname, g) in zip(net.named_parameters(), net.named_gradients()):
        assert name == gname and p.shape == g.shape


def test_input_gradient_of_conv():
    rng = np.random.default_rng(2)
    conv = Conv2D(2, 3, 3, 2, rng=rng, dtype=np.float64)
    x = rng.normal(size=(1, 7, 7, 2))
    out = conv.forward(x)
    dx = conv.backward(np.ones_like(out), input_grad=True)
    eps = 1e-6
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        num[idx] = (conv.forward(xp).sum() - conv.forward(xm).sum()) / (2 * eps)
    assert np.allclose(dx, num, atol=1e-7)


def test_linear_net_gradcheck_tight():
    rng = np.random.default_rng(0)
    net = MultiHeadNet(*identity_encoder(6), {"o": 4}, rng=rng, dtype=np.float64)
    rep = grad_check(net, rng.normal(size=(3, 6)), mse(rng.normal(size=(3, 4))),
                     tolerance=1e-6, n_params=28)
    assert rep.passed and rep.max_rel_error < 1e-6


def test_full_encoder_gradcheck():
    rng = np.random.default_rng(1)
    net = DualHeadNet(2, 3, 4, input_size=36, rng=rng, dtype=np.float64)
    target = rng.normal(size=(2, 3))

    def loss(outputs):
        l, g = squared_error(outputs[0], target)
        return l, (g, None)
    rep = grad_check(net, rng.random((2, 2, 36, 36)), loss, n_params=100)
    assert rep.passed and rep.n_checked >= 100


def test_corrupted_backward_detected():
    rng = np.random.default_rng(0)
    net = MultiHeadNet(*identity_encoder(6), {"o": 4}, rng=rng, dtype=np.float64)

    def broken(head_grads, input_grad=False):
        net.backward(head_grads, input_grad)
        net.heads["o"].grads["weight"] *= 1.5
    rep = grad_check(net, rng.normal(size=(3, 6)), mse(rng.normal(size=(3, 4))),
                     backward=broken)
    assert not rep.passed


def test_gradcheck_suite_passes():
    for name, rep in gradcheck_suite(n_params=30):
        assert rep.passed, (name, rep)


# -- losses -------------------------------------------------------------------

def test_cross_entropy_cases():
    loss, p, _ = softmax_cross_entropy(np.zeros((1, 6)), [0])
    assert p[0] == pytest.approx(1 / 6) and loss == pytest.approx(math.log(6))
    loss, p, _ = softmax_cross_entropy(np.array([[0.0, 0.0, 200.0]]), [2])
    assert loss == pytest.approx(0, abs=1e-12) and p[0] == pytest.approx(1)
    _, p, _ = softmax_cross_entropy(np.array([[1.0, 2.0, 3.0]]), [2])
    assert p[0] == pytest.approx(math.e ** 3 / (math.e + math.e ** 2 + math.e ** 3))
    assert p[0] == pytest.approx(0.6652, abs=1e-4)
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((1, 3)), [3])


def test_cross_entropy_gradient_fd():
    rng = np.random.default_rng(0)
    logits, labels = rng.normal(size=(4, 5)), rng.integers(5, size=4)
    _, _, g = softmax_cross_entropy(logits, labels)
    num = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        lp, lm = logits.copy(), logits.copy()
        lp[idx] += 1e-6
        lm[idx] -= 1e-6
        num[idx] = (softmax_cross_entropy(lp, labels)[0] - softmax_cross_entropy(lm, labels)[0]) / 2e-6
    assert np.allclose(g, num, atol=1e-8)


def test_softmax_sums_to_one():
    p = softmax(np.random.default_rng(0).normal(size=(50, 7)) * 20)
    assert np.allclose(p.sum(axis=1), 1, atol=1e-9)
    assert p.min() >= 0 and p.max() <= 1


# -- adam ---------------------------------------------------------------------

def test_adam_zero_grad_no_change():
    p = [np.array([1.0, -2.0])]
    state = AdamState.for_params(p)
    adam_step(p, [np.zeros(2)], state)
    assert np.array_equal(p[0], [1.0, -2.0])


def test_adam_first_step_is_lr_sign():
    for g in (0.5, -3.0):
        p = [np.array([0.0])]
        state = AdamState.for_params(p, lr=1e-3)
        adam_step(p, [np.array([g])], state)
        assert p[0][0] == pytest.approx(-1e-3 * np.sign(g), rel=1e-6)


def test_adam_pure_given_snapshot():
    rng = np.random.default_rng(0)
    p0 = [rng.normal(size=(3, 2))]
    g = [rng.normal(size=(3, 2))]
    state = AdamState.for_params(p0)
    adam_step([p0[0].copy()], g, state)
    snap = state.copy()
    a, b = [p0[0].copy()], [p0[0].copy()]
    adam_step(a, g, state)
    adam_step(b, g, snap)
    assert np.array_equal(a[0], b[0])


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState.for_params([np.zeros(2)]))


# -- checkpoints --------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    net = DualHeadNet(2, 3, 16, input_size=36, rng=np.random.default_rng(0))
    other = DualHeadNet(2, 3, 16, input_size=36, rng=np.random.default_rng(1))
    path = tmp_path / "n.ckpt"
    save_checkpoint(path, net, tag="abc")
    data = path.read_bytes()
    assert data.startswith(CHECKPOINT_MAGIC)
    assert read_checkpoint_hash(path) == net.spec_hash("abc")
    load_checkpoint(path, other, tag="abc")
    assert other.checksum() == net.checksum()
    save_checkpoint(tmp_path / "m.ckpt", other, tag="abc")
    assert (tmp_path / "m.ckpt").read_bytes() == data


def test_checkpoint_errors(tmp_path):
    net = DualHeadNet(2, 3, 16, input_size=36, rng=np.random.default_rng(0))
    path = tmp_path / "n.ckpt"
    save_checkpoint(path, net)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, DualHeadNet(2, 3, 5, input_size=36))
    with pytest.raises(CheckpointError):
        load_checkpoint(path, net, tag="other-config")
    data = path.read_bytes()
    (tmp_path / "t.ckpt").write_bytes(data[:-4])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "t.ckpt", net)
    (tmp_path / "x.ckpt").write_bytes(data + b"\0")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.ckpt", net)
    (tmp_path / "b.ckpt").write_bytes(b"NOPE" + data[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "b.ckpt", net)


def test_copy_and_astype_are_independent():
    net = DualHeadNet(1, 2, 3, input_size=36, rng=np.random.default_rng(0))
    twin = net.astype(np.float64)
    assert twin.dtype == np.float64
    twin.parameters()[0][...] = 0
    assert net.parameters()[0].any()


def test_reward_net_pairs_channels():
    net = RewardNet(4, 3, input_size=36, rng=np.random.default_rng(0))
    a = np.zeros((2, 4, 36, 36))
    assert net.logits(a, a).shape == (2, 3)
    assert net.encoder.layers[1][1].in_channels == 8
    assert isinstance(net.encoder.layers[0][1], ToChannelsLast)
    assert isinstance(identity_encoder(3)[0].layers[0][1], Flatten)
