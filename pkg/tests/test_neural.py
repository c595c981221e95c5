import json

import numpy as np
import pytest

from beamtune.neural import Adam, Dense, Mlp, load_checkpoint, save_checkpoint, soft_update
from beamtune.tracking import make_rng


def _random_net(rng):
    depth = int(rng.integers(1, 4))
    sizes = [int(rng.integers(1, 9)) for _ in range(depth + 1)]
    acts = [str(rng.choice(["relu", "tanh", "linear"])) for _ in range(depth)]
    net = Mlp(sizes, acts, rng)
    # zero biases put dead-ReLU outputs exactly on the next kink, where
    # the derivative does not exist; random biases keep the probe generic
    for layer in net.layers:
        layer.bias[...] = rng.normal(scale=0.5, size=layer.bias.shape)
    return net


def _loss(net, x, c, lam=0.0):
    out = net.forward(x)
    val = float(np.sum(c * out))
    if lam:
        val += lam * float(np.sum(net.output_preactivation() ** 2))
    return val


def _rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def _fd(f, arr, h=1e-6):
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        up = f()
        arr[idx] = old - h
        down = f()
        arr[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


@pytest.mark.parametrize("seed", range(50))
def test_gradients_match_central_differences(seed):
    rng = make_rng(1000 + seed)
    net = _random_net(rng)
    batch = int(rng.integers(1, 5))
    x = rng.normal(size=(batch, net.input_dim))
    c = rng.normal(size=(batch, net.output_dim))
    lam = float(rng.choice([0.0, 0.3]))

    net.forward(x)
    z = net.output_preactivation()
    grads, gx = net.backward(c, 2 * lam * z if lam else None)

    f = lambda: _loss(net, x, c, lam)  # noqa: E731
    for p, g in zip(net.params(), grads):
        assert _rel_err(g, _fd(f, p)) < 1e-4
    assert _rel_err(gx, _fd(f, x)) < 1e-4


def test_single_vector_forward_and_backward():
    rng = make_rng(2)
    net = Mlp((3, 5, 2), ("tanh", "linear"), rng)
    x = rng.normal(size=3)
    y1 = net.forward(x)
    y2 = net.forward(x[None, :])[0]
    assert y1.shape == (2,) and np.array_equal(y1, y2)
    net.forward(x)
    g1, gx1 = net.backward(np.ones(2))
    net.forward(x[None, :])
    g2, gx2 = net.backward(np.ones((1, 2)))
    assert gx1.shape == (3,)
    assert all(np.array_equal(a, b) for a, b in zip(g1, g2))


def test_shape_and_usage_errors():
    net = Mlp((3, 2), ("linear",))
    with pytest.raises(RuntimeError):
        net.backward(np.ones(2))
    with pytest.raises(ValueError):
        net.forward(np.ones(4))
    with pytest.raises(ValueError):
        Mlp((3, 2), ("relu", "relu"))
    with pytest.raises(ValueError):
        Dense(np.ones((2, 2)), np.ones(2), "softplus")
    with pytest.raises(ValueError):
        Mlp(None, None, layers=[Dense(np.ones((2, 3)), np.zeros(3)), Dense(np.ones((2, 1)), np.zeros(1))])


def test_out_scale_shrinks_last_layer():
    a = Mlp((4, 8, 2), ("relu", "tanh"), make_rng(0))
    b = Mlp((4, 8, 2), ("relu", "tanh"), make_rng(0), out_scale=1e-3)
    assert np.array_equal(a.layers[0].weight, b.layers[0].weight)
    assert np.allclose(b.layers[1].weight, 1e-3 * a.layers[1].weight, rtol=1e-15, atol=0)


def test_adam_first_step_is_lr_times_sign():
    # with bias correction the first update is lr * g / (|g| + eps)
    p = np.array([1.0, -2.0, 3.0])
    g = np.array([0.5, -4.0, 1e-3])
    opt = Adam([p], lr=0.1, eps=1e-8)
    opt.step([g])
    expect = np.array([1.0, -2.0, 3.0]) - 0.1 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p, expect, rtol=0, atol=1e-15)


def test_adam_second_step_matches_hand_recurrence():
    p = np.array([0.0])
    opt = Adam([p], lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
    gs = [np.array([1.0]), np.array([3.0])]
    m = v = 0.0
    ref = 0.0
    for t, g in enumerate(gs, start=1):
        opt.step([g])
        m = 0.9 * m + 0.1 * g[0]
        v = 0.999 * v + 0.001 * g[0] ** 2
        ref -= 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert p[0] == pytest.approx(ref, abs=1e-15)


def test_adam_minimises_quadratic():
    p = np.array([5.0, -3.0])
    opt = Adam([p], lr=0.05)
    for _ in range(2000):
        opt.step([2 * p])
    assert np.all(np.abs(p) < 1e-3)


def test_adam_rejects_mismatch():
    opt = Adam([np.zeros(3)])
    with pytest.raises(ValueError):
        opt.step([np.zeros(2)])
    with pytest.raises(ValueError):
        opt.step([])


@pytest.mark.parametrize("tau", [0.005, 0.1, 0.5])
def test_soft_update_geometric_convergence(tau):
    src = Mlp((3, 4, 2), ("relu", "linear"), make_rng(1))
    tgt = Mlp((3, 4, 2), ("relu", "linear"), make_rng(2))
    d0 = [t - s for t, s in zip(tgt.params(), src.params())]
    for k in range(1, 60):
        soft_update(tgt, src, tau)
        for d, t, s in zip(d0, tgt.params(), src.params()):
            assert np.allclose(t - s, (1 - tau) ** k * d, rtol=1e-9, atol=1e-15)


def test_soft_update_tau_one_and_errors():
    src = Mlp((3, 2), ("linear",), make_rng(1))
    tgt = Mlp((3, 2), ("linear",), make_rng(2))
    soft_update(tgt, src, 1.0)
    assert all(np.array_equal(a, b) for a, b in zip(tgt.params(), src.params()))
    with pytest.raises(ValueError):
        soft_update(tgt, src, 0.0)
    with pytest.raises(ValueError):
        soft_update(Mlp((3, 3), ("linear",)), src, 0.5)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = make_rng(7)
    net = Mlp((5, 16, 3), ("relu", "tanh"), rng)
    opt = Adam(net.params(), lr=3e-4)
    x = rng.normal(size=(8, 5))
    for _ in range(3):
        net.forward(x)
        grads, _ = net.backward(rng.normal(size=(8, 3)))
        opt.step(grads)
    path = tmp_path / "ck.json"
    save_checkpoint(path, {"actor": net}, {"actor": opt}, seed=7, extra={"note": "x"})
    doc = load_checkpoint(path)
    again = doc["networks"]["actor"]
    assert again.architecture == net.architecture
    assert all(np.array_equal(a, b) for a, b in zip(again.params(), net.params()))
    opt2 = Adam(again.params(), lr=1.0)
    opt2.load_dict(doc["optimizers"]["actor"])
    assert opt2.t == 3 and opt2.lr == 3e-4
    assert all(np.array_equal(a, b) for a, b in zip(opt2.m + opt2.v, opt.m + opt.v))
    # continuing training from the reloaded state matches the original
    g = [np.full_like(p, 0.1) for p in net.params()]
    opt.step(g)
    opt2.step([gg.copy() for gg in g])
    assert all(np.array_equal(a, b) for a, b in zip(again.params(), net.params()))
    assert doc["seed"] == 7 and doc["extra"] == {"note": "x"}
    # saving the reloaded network reproduces the file byte for byte
    save_checkpoint(tmp_path / "ck2.json", {"actor": net}, {"actor": opt}, seed=7)
    save_checkpoint(tmp_path / "ck3.json", {"actor": again}, {"actor": opt2}, seed=7)
    assert (tmp_path / "ck2.json").read_bytes() == (tmp_path / "ck3.json").read_bytes()


def test_checkpoint_rejects_foreign_files(tmp_path):
    p = tmp_path / "x.json"
    p.write_text(json.dumps({"format": "other"}))
    with pytest.raises(ValueError):
        load_checkpoint(p)
    p.write_text(json.dumps({"format": "beamtune-checkpoint", "version": 99}))
    with pytest.raises(ValueError):
        load_checkpoint(p)


def test_copy_is_independent():
    a = Mlp((2, 2), ("linear",), make_rng(0))
    b = a.copy()
    b.layers[0].weight[0, 0] += 1.0
    assert a.layers[0].weight[0, 0] != b.layers[0].weight[0, 0]
