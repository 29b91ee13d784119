import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psmforce.neuralnet import (
    LSTM, Dense, DimensionError, Dropout, ModelFormatError, Network, NetworkSpec, ReLU,
    adam_step, backward, forward, init_params, load_model, lr_at_epoch, save_model,
)


def small_spec(d=3, h=2, out=2, frozen=0):
    spec = NetworkSpec((LSTM(d, h), Dense(h, 4), ReLU(), Dropout(0.3), Dense(4, out)))
    return spec.frozen(frozen) if frozen else spec


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def loss_of(net, x, y, l2, mask, seed):
    net.forward(x, train=True, rng=np.random.default_rng(seed))
    return net.loss_and_grads(y, l2=l2, mask=mask)


def fd_check(net, x, y, l2=0.0, mask=None, seed=0, h=1e-6):
    """Worst per-tensor relative error ||num - ana|| / ||num + ana|| style."""
    _, grads = loss_of(net, x, y, l2, mask, seed)
    worst = 0.0
    for i, g in enumerate(grads):
        for name, G in g.items():
            P = net.params[i][name]
            num = np.empty_like(G)
            for idx in np.ndindex(P.shape):
                old = P[idx]
                P[idx] = old + h
                lp, _ = loss_of(net, x, y, l2, mask, seed)
                P[idx] = old - h
                lm, _ = loss_of(net, x, y, l2, mask, seed)
                P[idx] = old
                num[idx] = (lp - lm) / (2 * h)
            scale = max(np.linalg.norm(num) + np.linalg.norm(G), 1e-12)
            worst = max(worst, np.linalg.norm(num - G) / scale)
    return worst


def test_spec_rejects_incompatible_dims():
    with pytest.raises(DimensionError, match="layer 1"):
        NetworkSpec((LSTM(3, 4), Dense(5, 1)))
    with pytest.raises(ValueError):
        Dropout(1.0)


def test_zero_parameters_give_zero_output():
    spec = NetworkSpec((LSTM(3, 5), Dense(5, 2)))
    params = [{k: np.zeros_like(v) for k, v in p.items()} for p in init_params(spec)]
    net = Network(spec, params=params)
    x = np.random.default_rng(0).normal(size=(7, 4, 3))
    np.testing.assert_array_equal(net.predict(x), 0.0)


def test_dropout_eval_is_identity():
    net = Network(NetworkSpec((Dense(3, 3), Dropout(0.5))), seed=1)
    x = np.random.default_rng(0).normal(size=(5, 2, 3))
    ref = Network(NetworkSpec((Dense(3, 3),)), params=net.params[:1]).predict(x)
    np.testing.assert_array_equal(net.predict(x), ref)


def test_inverted_dropout_preserves_expectation():
    net = Network(NetworkSpec((Dense(1, 1), Dropout(0.2))), params=[{"W": np.ones((1, 1)), "b": np.zeros(1)}, {}])
    x = np.full((100000, 1, 1), 1.5)
    y = net.forward(x, train=True, rng=np.random.default_rng(3))
    assert y.mean() == pytest.approx(1.5, rel=0.01)
    assert set(np.unique(y)) == {0.0, 1.5 / 0.8}


def test_lstm_steps_match_gate_arithmetic():
    wx = np.array([0.5, -0.3, 0.8, 1.2])       # input, forget, output, candidate
    wh = np.array([0.7, 0.2, -0.4, 0.3])
    b = np.array([0.1, 1.0, -0.2, 0.05])
    net = Network(NetworkSpec((LSTM(1, 1),)), params=[{"Wx": wx[None, :], "Wh": wh[None, :], "b": b}])
    xs = [0.9, -0.4]
    h, c, expected = 0.0, 0.0, []
    for x in xs:
        z = wx * x + wh * h + b
        i, f, o, g = sig(z[0]), sig(z[1]), sig(z[2]), np.tanh(z[3])
        c = f * c + i * g
        h = o * np.tanh(c)
        expected.append(h)
    out = net.predict(np.array(xs)[:, None])[:, 0]
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)


def test_forward_dimension_mismatch():
    net = Network(small_spec())
    with pytest.raises(DimensionError, match="expects 3"):
        net.predict(np.zeros((4, 1, 5)))


def test_carried_state_equals_unsplit_sequence():
    net = Network(small_spec(), seed=2)
    x = np.random.default_rng(1).normal(size=(12, 2, 3))
    full = net.predict(x)
    net.reset_state()
    a = net.predict(x[:5], carry=True)
    b = net.predict(x[5:], carry=True)
    np.testing.assert_allclose(np.concatenate([a, b]), full, atol=1e-14)


def test_gradient_check_all_layer_types():
    net = Network(small_spec(), seed=5)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(6, 3, 3))
    y = rng.normal(size=(6, 3, 2))
    mask = np.ones((6, 3))
    mask[:2] = 0.0
    assert fd_check(net, x, y, l2=0.01, mask=mask) < 1e-4


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10000), st.integers(1, 3), st.integers(1, 3))
def test_gradient_check_random_nets(seed, d, h):
    rng = np.random.default_rng(seed)
    net = Network(NetworkSpec((LSTM(d, h), LSTM(h, 2), Dense(2, 1))), seed=seed)
    x = rng.normal(size=(4, 2, d))
    y = rng.normal(size=(4, 2, 1))
    assert fd_check(net, x, y, l2=0.05) < 1e-4


def test_backward_needs_forward_cache():
    net = Network(small_spec())
    with pytest.raises(RuntimeError, match="forward"):
        backward(net, np.zeros((3, 2)))


def test_zero_target_zero_parameters_zero_gradient():
    spec = small_spec()
    params = [{k: np.zeros_like(v) for k, v in p.items()} for p in init_params(spec)]
    net = Network(spec, params=params)
    forward(net, np.ones((5, 2, 3)))
    loss, grads = backward(net, np.zeros((5, 2, 2)))
    assert loss == 0.0
    for g in grads:
        for G in g.values():
            np.testing.assert_array_equal(G, 0.0)


def test_frozen_lstm_gets_no_gradient_and_stays_fixed():
    net = Network(small_spec(frozen=1), seed=3)
    before = net.snapshot()
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(5, 4, 3)), rng.normal(size=(5, 4, 2))
    for _ in range(10):
        net.forward(x, train=True, rng=rng)
        _, grads = net.loss_and_grads(y, l2=0.1)
        assert grads[0] == {}
        assert np.abs(grads[4]["W"]).sum() > 0
        net.adam_step(grads, 1e-2)
    for name in before[0]:
        np.testing.assert_array_equal(net.params[0][name], before[0][name])
    assert not np.array_equal(net.params[4]["W"], before[4]["W"])


def test_first_adam_step_is_lr_times_sign():
    net = Network(NetworkSpec((Dense(2, 2),)), seed=0)
    before = net.snapshot()
    g = [{"W": np.array([[3.0, -0.5], [1e-3, -20.0]]), "b": np.array([0.7, -2.0])}]
    adam_step(net, g, 0.01)
    for name in ("W", "b"):
        step = net.params[0][name] - before[0][name]
        np.testing.assert_allclose(step, -0.01 * np.sign(g[0][name]), rtol=0, atol=1e-6)


def test_zero_gradient_is_fixed_point():
    net = Network(NetworkSpec((Dense(2, 2),)), seed=0)
    before = net.snapshot()
    zero = [{k: np.zeros_like(v) for k, v in net.params[0].items()}]
    for _ in range(5):
        net.adam_step(zero, 0.1)
    np.testing.assert_array_equal(net.params[0]["W"], before[0]["W"])


def train_run(seed):
    net = Network(small_spec(), seed=seed)
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(5, 4, 3)), rng.normal(size=(5, 4, 2))
    for _ in range(5):
        net.forward(x, train=True, rng=rng)
        _, g = net.loss_and_grads(y)
        net.adam_step(g, 1e-2)
    return net.snapshot()


def test_training_is_deterministic():
    a, b = train_run(7), train_run(7)
    for pa, pb in zip(a, b):
        for k in pa:
            np.testing.assert_array_equal(pa[k], pb[k])


@settings(max_examples=100)
@given(st.floats(1e-5, 1.0), st.integers(1, 200), st.sampled_from([0.5, 0.25, 1.0]), st.integers(0, 2000))
def test_lr_schedule_is_exact(lr0, every, factor, epoch):
    assert lr_at_epoch(lr0, every, factor, epoch) == lr0 * factor ** (epoch // every)


def test_lr_schedule_halves_every_125():
    assert lr_at_epoch(1e-3, 125, 0.5, 124) == 1e-3
    assert lr_at_epoch(1e-3, 125, 0.5, 250) == 2.5e-4


def test_save_load_round_trip(tmp_path):
    net = Network(small_spec(frozen=1), seed=9)
    path = save_model(net, tmp_path / "m.psmnet", meta={"group": "j12"})
    loaded, meta = load_model(path)
    assert meta == {"group": "j12"}
    assert loaded.spec == net.spec
    x = np.random.default_rng(0).normal(size=(6, 2, 3))
    np.testing.assert_array_equal(loaded.predict(x), net.predict(x))
    for a, b in zip(net.params, loaded.params):
        for k in a:
            assert a[k].tobytes() == b[k].tobytes()


def test_truncated_file_is_corrupt(tmp_path):
    path = save_model(Network(small_spec()), tmp_path / "m.psmnet")
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(ModelFormatError, match="truncated"):
        load_model(path)


def test_wrong_version_rejected(tmp_path):
    path = save_model(Network(small_spec()), tmp_path / "m.psmnet")
    data = path.read_bytes().replace(b"PSMFORCE-NET 1", b"PSMFORCE-NET 9", 1)
    path.write_bytes(data)
    with pytest.raises(ModelFormatError, match="version"):
        load_model(path)


def test_load_into_mismatched_spec_names_layer(tmp_path):
    path = save_model(Network(small_spec()), tmp_path / "m.psmnet")
    with pytest.raises(DimensionError, match="layer 0 \\(LSTM\\)"):
        load_model(path, expected=small_spec(h=3))
