import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    causality_violations,
    direct_conv,
    impulse_horizon,
    perturbed_params,
    quiet_config,
    random_config,
    rf_for_horizon_test,
)
from quadtcn.errors import CheckpointError, ConfigError, NumericFault, ShapeError
from quadtcn.tcn import (
    TCN,
    ArrayDataset,
    NetworkConfig,
    OptimizerState,
    compute_loss,
    evaluate_loss,
    fit,
    init_params,
    network_backward,
    network_forward,
    optimizer_step,
    param_count,
    receptive_field,
    receptive_field_of,
    train_epoch,
)
from quadtcn.tcn import layers
from quadtcn.tcn.checkpoint import Checkpoint, dumps, load_checkpoint, loads, save_checkpoint
from quadtcn.tcn.gradcheck import numerical_gradients, relative_errors


def cm(x):
    """(C, T) -> channel-major (C, 1, T)."""
    return np.asarray(x, dtype=float)[:, None, :]


# ---------------------------------------------------------------------------
# convolution


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(3, 2, 7))
    out, _ = layers.conv_forward(x, np.eye(3)[:, :, None], np.zeros(3), 1)
    assert np.array_equal(out, x)


def test_conv_hand_example():
    out, _ = layers.conv_forward(cm([[1, 0, 0, 1]]), np.ones((1, 1, 2)), np.zeros(1), 1)
    np.testing.assert_array_equal(out[0, 0], [1, 1, 0, 1])


@settings(max_examples=40)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3), st.integers(1, 12),
       st.integers(0, 1000))
def test_conv_matches_direct_loops(c_in, c_out, k, d, T, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(c_in, T))
    w = rng.normal(size=(c_out, c_in, k))
    b = rng.normal(size=c_out)
    out, _ = layers.conv_forward(cm(x), w, b, d)
    np.testing.assert_allclose(out[:, 0], direct_conv(x, w, b, d), atol=1e-12)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 15))
def test_conv_impulse_support(k, d, j):
    T = 16
    x = np.zeros((1, 1, T))
    x[0, 0, j] = 1.0
    w = np.random.default_rng(k * 7 + d).uniform(0.5, 1.5, (1, 1, k))
    out, _ = layers.conv_forward(x, w, np.zeros(1), d)
    support = {t for t in range(T) if out[0, 0, t] != 0}
    assert support == {j + m * d for m in range(k) if j + m * d < T}


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        layers.conv_forward(np.zeros((2, 1, 4)), np.zeros((1, 3, 2)), np.zeros(1), 1)


# ---------------------------------------------------------------------------
# receptive field and causality


def test_receptive_field_examples():
    assert receptive_field_of(2, [1, 2, 4]) == 8
    cfg = quiet_config(num_blocks=3, kernel_size=1, channels=4, past_steps=2, future_steps=2)
    assert receptive_field(cfg) == 1
    assert receptive_field(quiet_config(num_blocks=5, kernel_size=3)) == 125
    assert receptive_field(quiet_config(num_blocks=8, kernel_size=3, dilation_growth="layer")) == 49
    assert receptive_field(NetworkConfig()) > 180


def test_short_receptive_field_warns():
    with pytest.warns(UserWarning, match="receptive field"):
        NetworkConfig(num_blocks=1, kernel_size=2, channels=2, past_steps=10, future_steps=10)


def test_impulse_horizon_matches_formula():
    rng = np.random.default_rng(3)
    for _ in range(5):
        cfg = rf_for_horizon_test(rng)
        assert impulse_horizon(cfg) == receptive_field(cfg)


def test_eval_mode_causality():
    rng = np.random.default_rng(4)
    for _ in range(5):
        cfg = random_config(rng)
        params, buffers = perturbed_params(cfg, rng)
        assert causality_violations(cfg, params, buffers, rng) == []


def test_future_control_edit_only_moves_later_predictions():
    cfg = quiet_config(num_blocks=2, kernel_size=3, channels=4, past_steps=5, future_steps=6)
    params, buffers = init_params(cfg)
    X = np.random.default_rng(0).normal(size=(1, 16, 11))
    X[:, :12, 5:] = 0.0
    base = network_forward(X, cfg, params, buffers)
    Xp = X.copy()
    Xp[0, 12:, 5 + 3] += 1.0
    out = network_forward(Xp, cfg, params, buffers)
    assert np.array_equal(out[..., :3], base[..., :3])
    assert not np.array_equal(out[..., 3:], base[..., 3:])


# ---------------------------------------------------------------------------
# forward pass


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_forward_shape_law(seed):
    rng = np.random.default_rng(seed)
    cfg = random_config(rng)
    out = network_forward(rng.normal(size=(3, 16, cfg.seq_len)), cfg, *init_params(cfg))
    assert out.shape == (3, 6, cfg.future_steps)


def test_forward_rejects_bad_shape():
    cfg = quiet_config(num_blocks=1, channels=2, past_steps=3, future_steps=2)
    with pytest.raises(ShapeError):
        network_forward(np.zeros((1, 16, 4)), cfg, *init_params(cfg))


def test_eval_forward_deterministic():
    cfg = quiet_config(num_blocks=2, channels=4, past_steps=4, future_steps=3, dropout_rate=0.3)
    m = TCN(cfg)
    X = np.random.default_rng(1).normal(size=(2, 16, 7))
    assert np.array_equal(m(X), m(X))
    assert np.array_equal(m(X), TCN(cfg)(X))


def test_residual_identity_with_zero_convs():
    cfg = quiet_config(num_blocks=2, kernel_size=3, channels=(5, 5), past_steps=3, future_steps=4, use_batchnorm=False)
    params, buffers = init_params(cfg)
    for name in params:
        if ".conv" in name:
            params[name][...] = 0.0
    X = np.random.default_rng(2).normal(size=(2, 16, 7))
    out = network_forward(X, cfg, params, buffers)
    h = np.einsum("oc,bct->bot", params["block0.proj.weight"][:, :, 0], X) + params["block0.proj.bias"][None, :, None]
    ref = np.einsum("oc,bct->bot", params["out.weight"][:, :, 0], h) + params["out.bias"][None, :, None]
    np.testing.assert_allclose(out, ref[:, :, 3:], atol=1e-12)


def test_nan_activation_reports_block():
    cfg = quiet_config(num_blocks=2, channels=3, past_steps=2, future_steps=2, use_batchnorm=False)
    params, buffers = init_params(cfg)
    params["block1.conv1.bias"][0] = np.nan
    with pytest.raises(NumericFault, match="block 1"):
        network_forward(np.ones((1, 16, 4)), cfg, params, buffers)


def test_shortened_gradient_hides_future_controls_from_early_blocks():
    cfg = quiet_config(num_blocks=2, channels=3, past_steps=3, future_steps=3, shortened_gradient=True,
                       injection_layer=1)
    params, buffers = init_params(cfg)
    assert params["block1.conv1.weight"].shape[1] == 3 + 4
    X = np.random.default_rng(0).normal(size=(1, 16, 6))
    X[:, :12, 3:] = 0
    # with the injection block's control taps silenced, future controls cannot matter
    params["block1.conv1.weight"][:, 3:, :] = 0.0
    params["block1.proj.weight"][:, 3:, :] = 0.0
    Xp = X.copy()
    Xp[0, 12:, 3:] += 5.0
    assert np.array_equal(network_forward(X, cfg, params, buffers), network_forward(Xp, cfg, params, buffers))


# ---------------------------------------------------------------------------
# loss


@pytest.mark.parametrize("kind", ["L1", "L2", "WL2"])
def test_loss_zero_at_match(kind):
    Y = np.random.default_rng(0).normal(size=(2, 6, 3))
    loss, grad = compute_loss(Y, Y.copy(), kind, (1, 2, 3, 4, 5, 6))
    assert loss == 0.0 and np.all(grad == 0.0)


def test_l2_scalar_example():
    loss, grad = compute_loss(np.array([[[3.0]]]), np.zeros((1, 1, 1)), "L2")
    assert loss == 9.0 and grad[0, 0, 0] == 6.0


@given(st.integers(0, 1000))
def test_wl2_unit_weights_equal_l2(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 6, 4)), rng.normal(size=(3, 6, 4))
    l2, g2 = compute_loss(a, b, "L2")
    w, gw = compute_loss(a, b, "WL2", (1.0,) * 6)
    assert abs(l2 - w) < 1e-12
    np.testing.assert_allclose(g2, gw, atol=1e-12)


@given(st.integers(0, 1000))
def test_l1_nonnegative_and_subgradient(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 6, 3))
    b = a.copy()
    b[0, 0, 0] += 1.0
    loss, grad = compute_loss(a, b, "L1")
    assert loss > 0
    assert grad[0, 0, 0] < 0 and np.count_nonzero(grad) == 1


def test_loss_errors():
    with pytest.raises(ShapeError):
        compute_loss(np.zeros((1, 6, 2)), np.zeros((1, 6, 3)))
    with pytest.raises(ConfigError):
        compute_loss(np.zeros((1, 6, 2)), np.zeros((1, 6, 2)), "L3")


# ---------------------------------------------------------------------------
# backward pass


def test_gradcheck_plain_network():
    cfg = quiet_config(num_blocks=2, kernel_size=2, channels=4, past_steps=6, future_steps=6, dtype="float64",
                       loss_kind="L2")
    rng = np.random.default_rng(0)
    params, buffers = perturbed_params(cfg, rng)
    X, Y = rng.normal(size=(2, 16, 12)), rng.normal(size=(2, 6, 6))
    _, grads, _ = network_backward(X, Y, cfg, params, buffers)
    errs = relative_errors(grads, numerical_gradients(X, Y, cfg, params, buffers))
    assert max(errs.values()) < 1e-4, errs


def test_gradcheck_with_dropout_and_shortened_gradient():
    cfg = quiet_config(num_blocks=2, kernel_size=3, channels=(4, 5), past_steps=5, future_steps=7,
                       dropout_rate=0.2, shortened_gradient=True, loss_kind="WL2")
    rng = np.random.default_rng(1)
    params, buffers = perturbed_params(cfg, rng)
    X, Y = rng.normal(size=(2, 16, 12)), rng.normal(size=(2, 6, 7))
    _, grads, _ = network_backward(X, Y, cfg, params, buffers, "train", np.random.default_rng(5))
    num = numerical_gradients(X, Y, cfg, params, buffers, seed=5)
    assert max(relative_errors(grads, num).values()) < 1e-4


def test_zero_loss_gives_zero_gradients():
    cfg = quiet_config(num_blocks=2, channels=3, past_steps=3, future_steps=3, loss_kind="L2")
    params, buffers = init_params(cfg)
    params["out.weight"][...] = 0.0
    X = np.random.default_rng(0).normal(size=(2, 16, 6))
    loss, grads, _ = network_backward(X, np.zeros((2, 6, 3)), cfg, params, buffers)
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads.values())


def test_duplicated_batch_keeps_mean_gradients():
    cfg = quiet_config(num_blocks=2, channels=3, past_steps=3, future_steps=3, loss_kind="L2")
    params, buffers = init_params(cfg)
    rng = np.random.default_rng(2)
    X, Y = rng.normal(size=(2, 16, 6)), rng.normal(size=(2, 6, 3))
    l1, g1, _ = network_backward(X, Y, cfg, params, buffers)
    l2, g2, _ = network_backward(np.concatenate([X, X]), np.concatenate([Y, Y]), cfg, params, buffers)
    assert abs(l1 - l2) < 1e-12
    for k in g1:
        np.testing.assert_allclose(g1[k], g2[k], atol=1e-12)


def test_gradient_names_follow_parameter_order():
    cfg = quiet_config(num_blocks=2, channels=(3, 4), past_steps=2, future_steps=2)
    params, buffers = init_params(cfg)
    _, grads, _ = network_backward(np.ones((1, 16, 4)), np.zeros((1, 6, 2)), cfg, params, buffers)
    assert list(grads) == list(params)


# ---------------------------------------------------------------------------
# optimizer and training


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0])}
    state = OptimizerState.for_params(params, lr=0.1)
    new, state2 = optimizer_step(params, {"w": np.zeros(2)}, state)
    assert np.array_equal(new["w"], params["w"]) and state2.step == 1


def test_adam_first_step():
    params = {"w": np.array([0.0])}
    new, _ = optimizer_step(params, {"w": np.array([1.0])}, OptimizerState.for_params(params, lr=0.1))
    assert new["w"][0] == pytest.approx(-0.1, rel=1e-6)


def test_adam_matches_closed_form_over_steps():
    rng = np.random.default_rng(0)
    g_seq = rng.normal(size=(5, 3))
    params = {"w": np.zeros(3)}
    state = OptimizerState.for_params(params, lr=0.01)
    m = np.zeros(3)
    v = np.zeros(3)
    w = np.zeros(3)
    for t, g in enumerate(g_seq, 1):
        params, state = optimizer_step(params, {"w": g}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(params["w"], w, rtol=1e-12)


def _toy_dataset(cfg, n, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 16, cfg.seq_len)).astype(cfg.dtype)
    X[:, :12, cfg.past_steps:] = 0
    Y = rng.normal(size=(n, 6, cfg.future_steps)).astype(cfg.dtype)
    return ArrayDataset(X, Y)


def test_zero_learning_rate_keeps_params():
    cfg = quiet_config(num_blocks=2, channels=4, past_steps=4, future_steps=3, use_batchnorm=False, loss_kind="L2")
    m = TCN(cfg)
    before = {k: v.copy() for k, v in m.params.items()}
    ds = _toy_dataset(cfg, 6)
    state = OptimizerState.for_params(m.params, lr=0.0)
    _, loss = train_epoch(ds, m, state, batch_size=6, rng=np.random.default_rng(0))
    assert all(np.array_equal(before[k], m.params[k]) for k in before)
    assert loss == pytest.approx(evaluate_loss(ds, m), rel=1e-12)


def test_single_sample_memorization():
    cfg = quiet_config(num_blocks=2, channels=8, past_steps=4, future_steps=4, loss_kind="L2")
    ds = _toy_dataset(cfg, 1, seed=3)
    losses = fit(ds, TCN(cfg), epochs=200, batch_size=1, lr=1e-2, seed=0)
    assert losses[-1] < losses[0] / 100


def test_fit_reproducible_per_seed():
    cfg = quiet_config(num_blocks=2, channels=4, past_steps=4, future_steps=3, dropout_rate=0.1, dtype="float32")
    ds = _toy_dataset(cfg, 10)
    a = fit(ds, TCN(cfg), 3, 4, 1e-3, seed=7)
    b = fit(ds, TCN(cfg), 3, 4, 1e-3, seed=7)
    assert a == b
    assert a != fit(ds, TCN(cfg), 3, 4, 1e-3, seed=8)


def test_running_stats_move_during_training():
    cfg = quiet_config(num_blocks=1, channels=3, past_steps=3, future_steps=3)
    m = TCN(cfg)
    fit(_toy_dataset(cfg, 4), m, 1, 4, 1e-3, seed=0)
    assert not np.all(m.buffers["block0.bn1.running_var"] == 1.0)


def test_param_count_grows_with_depth():
    counts = [param_count(init_params(quiet_config(num_blocks=n, channels=8, past_steps=4, future_steps=4))[0])
              for n in (2, 3, 5)]
    assert counts[0] < counts[1] < counts[2]


def test_config_text_roundtrip_and_errors():
    cfg = quiet_config(num_blocks=3, channels=(4, 5, 6), loss_kind="WL2", shortened_gradient=True, dtype="float32")
    assert NetworkConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(ConfigError):
        NetworkConfig.from_mapping({"bogus": "1"})
    with pytest.raises(ConfigError):
        NetworkConfig(channels=0)
    with pytest.raises(ConfigError):
        NetworkConfig(loss_kind="huber")


# ---------------------------------------------------------------------------
# checkpoints


def _trained_model():
    cfg = quiet_config(num_blocks=2, channels=4, past_steps=3, future_steps=3, dtype="float32")
    m = TCN(cfg)
    fit(_toy_dataset(cfg, 4), m, 2, 2, 1e-3, seed=0)
    return m


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    m = _trained_model()
    ck = Checkpoint("e2e-tcn", {"e2e": m}, {"note": "x"}, {"a": np.arange(3.0) / 7})
    blob = dumps(ck)
    back = loads(blob, "e2e-tcn")
    assert dumps(back) == blob
    for k in m.params:
        assert np.array_equal(back.networks["e2e"].params[k], m.params[k])
    assert back.networks["e2e"].opt_state.step == m.opt_state.step
    assert np.array_equal(back.aux["a"], ck.aux["a"])
    path = tmp_path / "m.bin"
    save_checkpoint(path, ck)
    assert load_checkpoint(path).metadata == {"note": "x"}


def test_checkpoint_errors(tmp_path):
    blob = dumps(Checkpoint("motor-hybrid", {"motor": _trained_model()}))
    with pytest.raises(CheckpointError):
        loads(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError, match="version"):
        loads(blob[:8] + (99).to_bytes(4, "little") + blob[12:])
    with pytest.raises(CheckpointError, match="expected"):
        loads(blob, "e2e-tcn")
    with pytest.raises(CheckpointError):
        loads(b"garbage!" + blob[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.bin")
    assert isinstance(CheckpointError("x"), OSError)


def test_warning_free_default_config():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        NetworkConfig()
