import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from a2cmp_nav.mlp import (CheckpointError, LayerParams, NetworkParams, NumericError, Sgd, apply_update,
                           backward, checkpoint_algorithm, forward, init_network, load_checkpoint, log_softmax,
                           save_checkpoint, softmax)


def random_loss_weights(rng, batch=None):
    shape_v = () if batch is None else (batch,)
    shape_l = (81,) if batch is None else (batch, 81)
    return rng.normal(size=shape_v), rng.normal(size=shape_l)


def scalar_loss(params, x, wv, wl):
    """A generic smooth scalar of both heads: linear in V, log-softmax on logits."""
    t = forward(params, x)
    return float(np.sum(wv * t.value) + np.sum(wl * log_softmax(t.logits)))


def loss_output_grads(params, x, wv, wl):
    t = forward(params, x)
    p = t.probs
    # d/dz sum_k w_k log p_k = w - p * sum_k w_k
    d_logits = wl - p * np.sum(wl, axis=-1, keepdims=True)
    return t, wv, d_logits


def test_init_shapes_and_biases():
    p = init_network(5, 0)
    assert p.linear1.weights.shape == (128, 34)
    assert p.linear2.weights.shape == (256, 128)
    assert p.critic.weights.shape == (1, 256)
    assert p.actor.weights.shape == (81, 256)
    assert all(np.all(layer.biases == 0) for _, layer in p.layers())
    limit = np.sqrt(6 / (34 + 128))
    assert np.abs(p.linear1.weights).max() <= limit


def test_init_zero_obstacles_and_determinism():
    assert init_network(0, 3).input_width == 9
    assert init_network(5, 7).equals(init_network(5, 7))
    assert not init_network(5, 7).equals(init_network(5, 8))


def test_zero_network_gives_uniform_policy():
    p = init_network(2, 0)
    z = NetworkParams(*(LayerParams(np.zeros_like(l.weights), np.zeros_like(l.biases)) for _, l in p.layers()))
    t = forward(z, np.ones(19))
    assert t.value == 0.0
    np.testing.assert_allclose(t.probs, np.full(81, 1 / 81), atol=1e-15)


def test_constant_actor_bias_shift_leaves_probs_unchanged():
    p = init_network(2, 0)
    x = np.random.default_rng(0).normal(size=19)
    shifted = p.copy()
    shifted.actor.biases += 123.0
    np.testing.assert_allclose(forward(p, x).probs, forward(shifted, x).probs, atol=1e-12)


def test_width_mismatch_raises():
    with pytest.raises(ValueError):
        forward(init_network(5, 0), np.zeros(24))


def test_forward_batch_matches_single():
    p = init_network(3, 1)
    xs = np.random.default_rng(1).normal(size=(4, 24))
    t = forward(p, xs)
    for i in range(4):
        s = forward(p, xs[i])
        np.testing.assert_allclose(t.probs[i], s.probs, atol=1e-14)
        assert t.value[i] == pytest.approx(float(s.value), abs=1e-14)


def test_forward_deterministic():
    p = init_network(5, 0)
    x = np.linspace(-3, 3, 34)
    a, b = forward(p, x), forward(p, x)
    assert np.array_equal(a.probs, b.probs) and np.array_equal(a.value, b.value)


# --- softmax -------------------------------------------------------------


@given(arrays(np.float64, 81, elements=st.floats(-1e3, 1e3)))
def test_softmax_is_distribution(z):
    p = softmax(z)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) <= 1e-9


@given(arrays(np.float64, 81, elements=st.floats(-1e3, 1e3)), st.floats(-1e3, 1e3))
def test_argmax_shift_invariant(z, c):
    assert np.argmax(softmax(z + c)) == np.argmax(softmax(z))


def test_softmax_stable_at_large_logits():
    z = np.zeros(81)
    z[3] = 1e3
    z[5] = -1e3
    p = softmax(z)
    assert np.all(np.isfinite(p)) and p[3] == pytest.approx(1.0)
    assert np.all(np.isfinite(log_softmax(z)))


# --- gradients -----------------------------------------------------------


def test_zero_output_gradient_gives_zero_grads():
    p = init_network(2, 0)
    t = forward(p, np.ones(19))
    g = backward(p, t, 0.0, np.zeros(81))
    assert all(np.all(a == 0) for a in g.arrays())


def test_dead_relu_unit_gets_no_gradient():
    p = init_network(2, 0)
    x = np.random.default_rng(2).normal(size=19)
    p.linear1.biases[7] = -1e6  # unit 7 is always off
    rng = np.random.default_rng(3)
    wv, wl = random_loss_weights(rng)
    t, dv, dl = loss_output_grads(p, x, wv, wl)
    g = backward(p, t, dv, dl)
    assert np.all(g.linear1.weights[7] == 0) and g.linear1.biases[7] == 0


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("batch", [None, 3])
def test_backward_matches_central_differences(seed, batch):
    rng = np.random.default_rng(seed)
    p = init_network(1, seed)
    x = rng.normal(size=14 if batch is None else (batch, 14))
    wv, wl = random_loss_weights(rng, batch)
    t, dv, dl = loss_output_grads(p, x, wv, wl)
    g = backward(p, t, dv, dl)
    for (name, layer), (_, glayer) in zip(p.layers(), g.layers()):
        for arr, garr in ((layer.weights, glayer.weights), (layer.biases, glayer.biases)):
            for _ in range(6):
                idx = tuple(rng.integers(s) for s in arr.shape)
                old = arr[idx]
                arr[idx] = old + 1e-5
                up = scalar_loss(p, x, wv, wl)
                arr[idx] = old - 1e-5
                down = scalar_loss(p, x, wv, wl)
                arr[idx] = old
                numeric = (up - down) / 2e-5
                assert garr[idx] == pytest.approx(numeric, rel=1e-4, abs=1e-7), (name, idx)


# --- updates -------------------------------------------------------------


def scalar_net(w):
    one = LayerParams(np.array([[w]]), np.zeros(1))
    return NetworkParams(one, one.copy(), one.copy(), one.copy())


def test_apply_update_arithmetic():
    p = scalar_net(1.0)
    g = scalar_net(2.0)
    assert apply_update(p, g, 0.1).linear1.weights[0, 0] == pytest.approx(0.8)


def test_zero_learning_rate_keeps_params():
    p = init_network(1, 0)
    g = init_network(1, 1)
    assert apply_update(p, g, 0.0).equals(p)


def test_non_finite_gradient_aborts():
    p = init_network(1, 0)
    g = p.zeros_like()
    g.actor.weights[0, 0] = np.nan
    with pytest.raises(NumericError):
        apply_update(p, g, 0.1)


def test_two_steps_equal_one_summed_step_for_fixed_gradients():
    p = init_network(1, 0)
    g1, g2 = init_network(1, 1), init_network(1, 2)
    summed = NetworkParams(*(LayerParams(a.weights + b.weights, a.biases + b.biases)
                             for (_, a), (_, b) in zip(g1.layers(), g2.layers())))
    two = apply_update(apply_update(p, g1, 0.01), g2, 0.01)
    one = apply_update(p, summed, 0.01)
    for a, b in zip(two.arrays(), one.arrays()):
        np.testing.assert_allclose(a, b, atol=1e-15)


def test_sgd_momentum_accumulates():
    p = scalar_net(0.0)
    g = scalar_net(1.0)
    opt = Sgd(0.1, momentum=0.5)
    p = opt.step(p, g)  # v = 1
    p = opt.step(p, g)  # v = 1.5
    assert p.linear1.weights[0, 0] == pytest.approx(-0.25)
    assert Sgd(0.1).step(scalar_net(0.0), g).linear1.weights[0, 0] == pytest.approx(-0.1)


# --- checkpoints ---------------------------------------------------------


def test_checkpoint_round_trip_bit_identical(tmp_path):
    p = init_network(5, 11)
    p.actor.biases[:] = np.random.default_rng(0).normal(size=81) * 1e-7
    save_checkpoint(p, tmp_path / "c.json", "a2cmp")
    q = load_checkpoint(tmp_path / "c.json")
    assert q.equals(p)
    assert checkpoint_algorithm(tmp_path / "c.json") == "a2cmp"
    payload = json.loads((tmp_path / "c.json").read_text())
    assert payload["action_table_layout"]["size"] == 81 and payload["n_obstacles"] == 5


def test_truncated_checkpoint_errors(tmp_path):
    save_checkpoint(init_network(2, 0), tmp_path / "c.json")
    text = (tmp_path / "c.json").read_text()
    (tmp_path / "c.json").write_text(text[: len(text) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c.json")


def test_version_mismatch_errors(tmp_path):
    save_checkpoint(init_network(2, 0), tmp_path / "c.json")
    payload = json.loads((tmp_path / "c.json").read_text())
    payload["version"] = 99
    (tmp_path / "c.json").write_text(json.dumps(payload))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "c.json")


def test_obstacle_count_mismatch_names_both_widths(tmp_path):
    save_checkpoint(init_network(5, 0), tmp_path / "c.json")
    with pytest.raises(CheckpointError, match=r"width 34 \(N=5\).*width 24 \(N=3\)"):
        load_checkpoint(tmp_path / "c.json", n_obstacles=3)


def test_bad_shape_errors(tmp_path):
    save_checkpoint(init_network(1, 0), tmp_path / "c.json")
    payload = json.loads((tmp_path / "c.json").read_text())
    payload["layers"]["critic"]["weights"] = [[0.0, 1.0]]
    (tmp_path / "c.json").write_text(json.dumps(payload))
    with pytest.raises(CheckpointError, match="critic"):
        load_checkpoint(tmp_path / "c.json")


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(-1e300, 1e300)))
def test_checkpoint_floats_lossless(tmp_path_factory, values):
    p = init_network(0, 0)
    p.critic.weights[0, :5] = values
    path = tmp_path_factory.mktemp("ck") / "c.json"
    save_checkpoint(p, path)
    assert load_checkpoint(path).equals(p)
