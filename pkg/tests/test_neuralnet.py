import numpy as np
import pytest

from coughscreen.neuralnet import (
    AdamState,
    ArchitectureMismatch,
    Conv2D,
    Dense,
    Dropout,
    EmptyDataset,
    Flatten,
    LabelOutOfRange,
    MaxPool2x2,
    Network,
    NoForwardState,
    ReLU,
    ShapeMismatch,
    Softmax,
    TrainConfig,
    adam_step,
    cross_entropy,
    load_network,
    save_network,
    train,
    transfer_from,
)


def small_net(seed=42):
    """Every layer kind, small enough for exhaustive finite differences."""
    return Network(
        [
            MaxPool2x2(),
            Conv2D(3, 3),
            ReLU(),
            Conv2D(2, 3),
            ReLU(),
            MaxPool2x2(),
            Dropout(0.2),
            Flatten(),
            Dense(7),
            ReLU(),
            Dropout(0.3),
            Dense(3),
            Softmax(),
        ],
        (8, 12, 1),
        3,
    ).build(seed=seed)


def gradcheck_net(seed=42):
    """small_net with biases pushed off zero so ReLU kinks sit farther than
    the finite-difference step from the evaluation point."""
    net = small_net(seed=seed)
    nudge = np.random.default_rng(seed + 1000)
    for layer in net.layers:
        if layer.kind in ("conv2d", "dense") and layer.bias is not None:
            layer.bias[...] = nudge.uniform(0.25, 0.6, size=layer.bias.shape)
    return net


def loss_with_fixed_masks(net, x, y, mask_seed):
    probs = net.forward(x, training=True, rng=np.random.default_rng(mask_seed))
    loss, _ = cross_entropy(probs, y)
    return loss


def finite_difference_check(net, x, y, mask_seed=123, h=1e-4, per_param=30):
    """Fraction of sampled coordinates whose analytic gradient matches
    central differences within 1e-4 relative error."""
    probs = net.forward(x, training=True, rng=np.random.default_rng(mask_seed))
    _, dprobs = cross_entropy(probs, y)
    net.backward(dprobs)
    grads = [g.copy() for g in net.gradients()]
    good = total = 0
    pick = np.random.default_rng(0)
    for p, g in zip(net.parameters(), grads):
        flat_p, flat_g = p.ravel(), g.ravel()
        for i in pick.choice(p.size, size=min(per_param, p.size), replace=False):
            orig = flat_p[i]
            flat_p[i] = orig + h
            up = loss_with_fixed_masks(net, x, y, mask_seed)
            flat_p[i] = orig - h
            down = loss_with_fixed_masks(net, x, y, mask_seed)
            flat_p[i] = orig
            numeric = (up - down) / (2 * h)
            rel = abs(numeric - flat_g[i]) / max(abs(numeric) + abs(flat_g[i]), 1e-8)
            good += rel < 1e-4
            total += 1
    return good, total


class TestForward:
    def test_zero_initialized_head_is_uniform(self):
        net = Network([Flatten(), Dense(2), Softmax()], (2, 2, 1), 2).build(seed=0)
        dense = net.layers[1]
        dense.weights[...] = 0.0
        # flatten of a 4-D (C,B,H,W) activation needs the conv layout; feed batch
        probs = net.forward(np.random.rand(3, 2, 2, 1))
        np.testing.assert_allclose(probs, 0.5, atol=1e-12)

    def test_maxpool_takes_window_maximum(self):
        net = Network([MaxPool2x2(), Flatten(), Dense(1), Softmax()], (2, 2, 1), 1).build(seed=0)
        pooled = net.layers[0].forward(np.array([[[1.0], [2.0]], [[3.0], [4.0]]])[None].transpose(3, 0, 1, 2))
        assert pooled.ravel()[0] == 4.0

    def test_identity_convolution(self):
        conv = Conv2D(1, 1)
        conv.build((1, 4, 6), np.random.default_rng(0))
        conv.weights[...] = 1.0
        conv.bias[...] = 0.0
        x = np.random.default_rng(1).random((1, 2, 4, 6))
        np.testing.assert_allclose(conv.forward(x), x, atol=1e-12)

    def test_probabilities_sum_to_one(self):
        net = small_net()
        probs = net.forward(np.random.default_rng(2).random((5, 8, 12, 1)))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeMismatch):
            small_net().forward(np.zeros((2, 9, 12, 1)))

    def test_inference_is_deterministic(self):
        net = small_net()
        x = np.random.default_rng(3).random((4, 8, 12, 1))
        np.testing.assert_array_equal(net.forward(x), net.forward(x))


class TestBackward:
    def test_requires_training_forward(self):
        net = small_net()
        net.forward(np.zeros((2, 8, 12, 1)))  # inference mode
        with pytest.raises(NoForwardState):
            net.backward(np.zeros((2, 3)))

    def test_frozen_conv_gradients_are_zero(self):
        net = small_net()
        net.layers[1].frozen = True
        x = np.random.default_rng(4).random((4, 8, 12, 1))
        probs = net.forward(x, training=True, rng=np.random.default_rng(0))
        _, dprobs = cross_entropy(probs, np.array([0, 1, 2, 0]))
        net.backward(dprobs)
        conv = net.layers[1]
        assert np.all(conv.dweights == 0.0)
        assert np.all(conv.dbias == 0.0)

    def test_softmax_cross_entropy_gradient_identity(self):
        # gradient at the softmax input must equal (probs - onehot)/batch
        net = Network([Flatten(), Dense(4), Softmax()], (1, 2, 2), 4).build(seed=1)
        x = np.random.default_rng(5).random((6, 1, 2, 2))
        y = np.array([0, 1, 2, 3, 1, 0])
        probs = net.forward(x, training=True, rng=np.random.default_rng(0))
        _, dprobs = cross_entropy(probs, y)
        dlogits = net.layers[2].backward(dprobs)
        onehot = np.zeros_like(probs)
        onehot[np.arange(6), y] = 1.0
        np.testing.assert_allclose(dlogits, (probs - onehot) / 6, atol=1e-12)

    def test_finite_differences_all_layer_kinds(self):
        net = gradcheck_net()
        x = np.random.default_rng(6).random((5, 8, 12, 1))
        y = np.array([0, 1, 2, 1, 0])
        good, total = finite_difference_check(net, x, y)
        assert good / total >= 0.99


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = [np.array([1.0, -2.0])]
        g = [np.zeros(2)]
        state = AdamState.for_params(p)
        adam_step(p, g, state, TrainConfig(epochs=1))
        np.testing.assert_array_equal(p[0], [1.0, -2.0])

    def test_single_step_hand_value(self):
        # t=1, g=1: m_hat = 1, v_hat = 1 -> update = -lr/(1+eps)
        p = [np.array([0.0])]
        g = [np.array([1.0])]
        state = AdamState.for_params(p)
        adam_step(p, g, state, TrainConfig(learning_rate=1e-3, epochs=1))
        assert abs(p[0][0] + 1e-3) < 1e-9

    def test_deterministic_repeat(self):
        def run():
            p = [np.linspace(-1, 1, 5)]
            state = AdamState.for_params(p)
            cfg = TrainConfig(epochs=1)
            for t in range(10):
                g = [np.sin(p[0] + t)]
                adam_step(p, g, state, cfg)
            return p[0]

        np.testing.assert_array_equal(run(), run())

    def test_frozen_entries_untouched(self):
        p = [np.array([1.0]), np.array([2.0])]
        g = [np.array([1.0]), np.array([1.0])]
        state = AdamState.for_params(p)
        adam_step(p, g, state, TrainConfig(epochs=1), frozen=[True, False])
        assert p[0][0] == 1.0
        assert p[1][0] != 2.0


def separable_dataset(n=50, seed=0):
    """Bright-left vs bright-right images, trivially separable."""
    rng = np.random.default_rng(seed)
    x = rng.random((n, 8, 12, 1)) * 0.1
    y = rng.integers(0, 2, size=n)
    for i in range(n):
        if y[i] == 0:
            x[i, :, :6, 0] += 0.8
        else:
            x[i, :, 6:, 0] += 0.8
    return x, y


def tiny_trainable(seed=0):
    return Network(
        [MaxPool2x2(), Conv2D(4, 3), ReLU(), Flatten(), Dense(8), ReLU(), Dense(2), Softmax()],
        (8, 12, 1),
        2,
    ).build(seed=seed)


class TestTrain:
    def test_loss_decreases_on_separable_task(self):
        x, y = separable_dataset()
        net = tiny_trainable()
        history = train(net, (x, y), TrainConfig(epochs=5, batch_size=10, seed=1))
        losses = [h.train_loss for h in history]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_zero_epochs_is_noop(self):
        x, y = separable_dataset(10)
        net = tiny_trainable()
        before = net.parameter_hash()
        history = train(net, (x, y), TrainConfig(epochs=0))
        assert history == []
        assert net.parameter_hash() == before

    def test_same_seed_bitwise_identical_history(self):
        x, y = separable_dataset(20)
        h1 = train(tiny_trainable(3), (x, y), TrainConfig(epochs=3, seed=9))
        h2 = train(tiny_trainable(3), (x, y), TrainConfig(epochs=3, seed=9))
        assert [e.train_loss for e in h1] == [e.train_loss for e in h2]

    def test_validation_loss_recorded(self):
        x, y = separable_dataset(20)
        history = train(
            tiny_trainable(), (x[:16], y[:16]), TrainConfig(epochs=2), validation=(x[16:], y[16:])
        )
        assert all(h.val_loss is not None for h in history)

    def test_empty_dataset_rejected(self):
        with pytest.raises(EmptyDataset):
            train(tiny_trainable(), (np.zeros((0, 8, 12, 1)), np.zeros(0, dtype=int)), TrainConfig(epochs=1))

    def test_label_out_of_range_rejected(self):
        x, _ = separable_dataset(4)
        with pytest.raises(LabelOutOfRange):
            train(tiny_trainable(), (x, np.array([0, 1, 2, 0])), TrainConfig(epochs=1))

    def test_frozen_layer_constant_through_run(self):
        x, y = separable_dataset(20)
        net = tiny_trainable()
        net.layers[1].frozen = True
        kernel_before = net.layers[1].weights.copy()
        train(net, (x, y), TrainConfig(epochs=3, seed=2))
        np.testing.assert_array_equal(net.layers[1].weights, kernel_before)


class TestDropout:
    def test_identity_in_inference(self):
        layer = Dropout(0.5)
        x = np.random.default_rng(0).random((4, 10))
        np.testing.assert_array_equal(layer.forward(x, training=False), x)

    def test_training_preserves_expected_activation(self):
        layer = Dropout(0.3)
        rng = np.random.default_rng(1)
        x = np.ones((100, 1000))
        out = layer.forward(x, training=True, rng=rng)
        assert abs(out.mean() - 1.0) < 0.02

    def test_requires_rng_in_training(self):
        with pytest.raises(Exception):
            Dropout(0.5).forward(np.ones((2, 2)), training=True)


class TestSoftmaxShift:
    def test_invariant_to_logit_shift(self):
        layer = Softmax()
        logits = np.random.default_rng(2).random((5, 4))
        base = layer.forward(logits)
        shifted = layer.forward(logits + 123.456)
        np.testing.assert_allclose(base, shifted, atol=1e-12)


class TestTransfer:
    def test_copies_all_but_head(self):
        src = tiny_trainable(seed=1)
        tgt = Network(
            [MaxPool2x2(), Conv2D(4, 3), ReLU(), Flatten(), Dense(8), ReLU(), Dense(4), Softmax()],
            (8, 12, 1),
            4,
        ).build(seed=2)
        head_before = tgt.layers[6].weights.copy()
        transfer_from(src, tgt, freeze_first_conv=False)
        np.testing.assert_array_equal(tgt.layers[1].weights, src.layers[1].weights)
        np.testing.assert_array_equal(tgt.layers[4].weights, src.layers[4].weights)
        np.testing.assert_array_equal(tgt.layers[6].weights, head_before)

    def test_freeze_flag_sets_first_conv(self):
        src = tiny_trainable(seed=1)
        tgt = tiny_trainable(seed=3)
        transfer_from(src, tgt, freeze_first_conv=True)
        assert tgt.layers[1].frozen

    def test_identical_architecture_transfer_matches_outputs(self):
        src = tiny_trainable(seed=1)
        tgt = tiny_trainable(seed=4)
        # copy the head too so the nets agree everywhere
        transfer_from(src, tgt, freeze_first_conv=False)
        tgt.layers[6].weights[...] = src.layers[6].weights
        tgt.layers[6].bias[...] = src.layers[6].bias
        x = np.random.default_rng(5).random((3, 8, 12, 1))
        np.testing.assert_array_equal(src.forward(x), tgt.forward(x))

    def test_mismatched_architecture_rejected(self):
        src = tiny_trainable()
        other = small_net()
        with pytest.raises(ArchitectureMismatch):
            transfer_from(src, other, freeze_first_conv=False)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        net = tiny_trainable(seed=6)
        path = tmp_path / "model.aicn"
        save_network(net, path)
        loaded = load_network(path)
        x = np.random.default_rng(7).random((2, 8, 12, 1))
        np.testing.assert_array_equal(net.forward(x), loaded.forward(x))
        assert loaded.architecture_hash() == net.architecture_hash()

    def test_tampered_descriptor_rejected(self, tmp_path):
        net = tiny_trainable(seed=8)
        path = tmp_path / "model.aicn"
        save_network(net, path)
        raw = bytearray(path.read_bytes())
        # corrupt a hash character inside the JSON descriptor
        idx = raw.find(b'"arch_hash"') + 15
        raw[idx] = ord("0") if raw[idx] != ord("0") else ord("1")
        path.write_bytes(bytes(raw))
        with pytest.raises(Exception):
            load_network(path)

    def test_expected_hash_enforced(self, tmp_path):
        net = tiny_trainable(seed=9)
        path = tmp_path / "model.aicn"
        save_network(net, path)
        with pytest.raises(ArchitectureMismatch):
            load_network(path, expected_arch_hash="deadbeef")
