"""Forward/backward, optimizer, training, and file-format tests."""

import os

import numpy as np
import pytest

from qrevival import dataset as dset
from qrevival import dynamics as dy
from qrevival import mlp


def _params(seed=0):
    return mlp.init_params(np.random.default_rng(seed))


def test_forward_zero_params():
    p = mlp.zeros_like_params(_params())
    y, cache = mlp.forward(p, np.zeros(5))
    assert y == 0.0
    assert cache.y_hat == 0.0
    y2, _ = mlp.forward(p, np.array([0.5, -0.5, 1.0, -1.0, 0.2]))
    assert y2 == 0.0


def test_forward_dead_second_layer():
    # W1 = 0 with positive b1 keeps h1 > 0, but W2 = 0, b2 = 0 zeroes h2
    p = mlp.zeros_like_params(_params())
    p.b1 = np.full(mlp.H1, 0.7)
    p.w3 = np.ones(mlp.H2)
    y, cache = mlp.forward(p, np.array([0.1, 0.2, 0.3, 0.4, 0.5]))
    assert np.all(cache.h1 == 0.7)
    assert np.all(cache.h2 == 0.0)
    assert y == 0.0


def test_forward_nonlinear():
    p = _params(5)
    x = np.array([0.3, -0.4, 0.2, 0.9, -0.1])
    y1, _ = mlp.forward(p, x)
    y2, _ = mlp.forward(p, 2.0 * x)
    assert y1 != pytest.approx(y2)
    assert -1.0 < y1 < 1.0 and -1.0 < y2 < 1.0


def test_forward_rejects_wrong_shape():
    with pytest.raises(ValueError):
        mlp.forward(_params(), np.zeros(4))


def test_mse_examples():
    assert mlp.mse([0.1, 0.2], [0.1, 0.2]) == 0.0
    assert mlp.mse([0.0, 0.0], [1.0, -1.0]) == 1.0
    assert mlp.mse([0.5], [0.9]) == pytest.approx(0.16)
    with pytest.raises(ValueError):
        mlp.mse([0.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        mlp.mse([], [])


def test_backward_zero_residual():
    p = _params(2)
    x = np.array([0.2, 0.4, -0.3, 0.1, 0.6])
    y_hat, cache = mlp.forward(p, x)
    g = mlp.backward(p, cache, x, y_hat)
    assert mlp._to_vector(g) == pytest.approx(np.zeros(737), abs=0.0)


def test_backward_b3_closed_form():
    p = _params(3)
    x = np.array([0.3, -0.2, 0.8, 0.1, -0.5])
    y = 0.4
    y_hat, cache = mlp.forward(p, x)
    g = mlp.backward(p, cache, x, y)
    assert g.b3 == pytest.approx(2.0 * (y_hat - y) * (1.0 - y_hat ** 2), rel=1e-15)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(20):
        p = mlp.init_params(rng)
        x = rng.uniform(-1.0, 1.0, 5)
        y = float(rng.uniform(-1.0, 1.0))
        worst = max(worst, mlp.gradient_max_rel_error(p, x, y))
    assert worst < 1e-4


def test_adam_zero_gradient():
    p = _params(4)
    st = mlp.init_adam(p)
    p2, st2 = mlp.adam_step(p, mlp.zeros_like_params(p), st)
    assert np.array_equal(mlp._to_vector(p2), mlp._to_vector(p))
    assert st2.step_count == 1


def test_adam_first_step_hand_value():
    # with m_hat = g and v_hat = g^2 the first update is -lr * g/(|g| + eps)
    p = mlp.zeros_like_params(_params())
    g = mlp.zeros_like_params(p)
    g.b3 = 0.5
    st = mlp.init_adam(p, lr=1e-3)
    p2, _ = mlp.adam_step(p, g, st)
    assert p2.b3 == pytest.approx(-1e-3 * 0.5 / (0.5 + 1e-8), rel=1e-12)
    assert np.all(p2.w1 == 0.0)


def test_adam_constant_gradient_step_magnitude():
    p = mlp.zeros_like_params(_params())
    g = mlp.zeros_like_params(p)
    g.b3 = 0.2
    st = mlp.init_adam(p, lr=1e-3)
    prev = p.b3
    for _ in range(400):
        p, st = mlp.adam_step(p, g, st)
    step = abs(p.b3 - prev) / 400.0
    assert step == pytest.approx(1e-3, rel=0.05)   # sign-like unit step times lr


def test_train_constant_labels():
    traj = dy.Trajectory(times=np.arange(60, dtype=float),
                         z_s=np.full(60, 0.3), z_a=np.full(60, -0.2),
                         channel=None, g=1.0, initial_state_tag=dy.STATE_CUSTOM)
    ds = dset.build_windows(traj)
    cfg = mlp.TrainConfig(epochs=200, batch_size=8, lr=1e-3, seed=1)
    p, curve = mlp.train(ds, cfg)
    assert len(curve) == 200
    assert curve[-1] < 1e-4


def test_train_deterministic():
    rng = np.random.default_rng(8)
    z = np.clip(rng.standard_normal(60) * 0.3, -1, 1)
    traj = dy.Trajectory(times=np.arange(60, dtype=float),
                         z_s=z, z_a=np.roll(z, 1),
                         channel=None, g=1.0, initial_state_tag=dy.STATE_CUSTOM)
    ds = dset.build_windows(traj)
    cfg = mlp.TrainConfig(epochs=40, batch_size=16, lr=1e-3, seed=33)
    p1, c1 = mlp.train(ds, cfg)
    p2, c2 = mlp.train(ds, cfg)
    assert np.array_equal(c1, c2)
    assert np.array_equal(mlp._to_vector(p1), mlp._to_vector(p2))


def test_train_learns_exchange_oscillation():
    # closed-system trajectory: z_s = cos(4t) is learnable to tight MSE
    from qrevival.linalg import KET0, KET1, dm
    chan = dy.ChannelSpec.noise_free()
    grid = dy.TimeGrid(t_end=5.0, n_steps=400)
    traj = dy.evolve(dm(np.kron(KET0, KET1)), grid, 1.0, chan)
    ds = dset.build_windows(traj)
    p, _ = mlp.train(ds, mlp.TrainConfig(seed=2))
    _, test = dset.chronological_split(ds)
    preds = mlp.predict_series(p, test)
    labels = np.array([s.y for s in test])
    assert mlp.mse(preds, labels) < 1e-3


def test_predict_series_basics():
    p = _params(6)
    assert mlp.predict_series(p, []).size == 0
    s = dset.WindowSample(x=np.array([0.1, 0.2, 0.3, 0.4, 0.5]), y=0.0, t_index=5)
    out = mlp.predict_series(p, [s])
    assert out.shape == (1,)
    assert out[0] == mlp.forward(p, s.x)[0]
    again = mlp.predict_series(p, [s])
    assert np.array_equal(out, again)
    assert np.all(np.abs(out) < 1.0)


def test_train_rejects_empty_split():
    traj = dy.Trajectory(times=np.arange(6, dtype=float),
                         z_s=np.zeros(6), z_a=np.zeros(6),
                         channel=None, g=1.0, initial_state_tag=dy.STATE_CUSTOM)
    ds = dset.build_windows(traj)       # 1 sample -> no train half
    with pytest.raises(ValueError):
        mlp.train(ds, mlp.TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ValueError):
        mlp.TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        mlp.TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        mlp.TrainConfig(lr=0.0)


def test_params_roundtrip(tmp_path):
    p = _params(11)
    path = os.path.join(tmp_path, "p.json")
    mlp.save_params(p, path)
    back = mlp.load_params(path)
    assert np.array_equal(mlp._to_vector(back), mlp._to_vector(p))
    second = os.path.join(tmp_path, "p2.json")
    mlp.save_params(back, second)
    with open(path, "rb") as f1, open(second, "rb") as f2:
        assert f1.read() == f2.read()
    with open(path, "w") as f:
        f.write('{"w1": [[0]]}')
    with pytest.raises(ValueError, match="missing"):
        mlp.load_params(path)


def test_loss_curve_roundtrip(tmp_path):
    curve = np.array([0.5, 0.25, 0.125])
    path = os.path.join(tmp_path, "loss.csv")
    mlp.write_loss_curve(curve, path)
    back = mlp.read_loss_curve(path)
    assert np.array_equal(back, curve)
    with open(path, "w") as f:
        f.write("epoch,mse\n2,0.5\n")
    with pytest.raises(ValueError):
        mlp.read_loss_curve(path)
