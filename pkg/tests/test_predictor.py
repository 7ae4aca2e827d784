import numpy as np
import pytest

from indextrack.exceptions import InsufficientDataError, LookAheadError, ShapeMismatchError
from indextrack.features import FeatureGridSpec
from indextrack.predictor import (
    EarlyStopping,
    SensitivityNetwork,
    SensitivityPredictor,
    TrainConfig,
    cosine_lr,
    gradient_check,
)

TINY = FeatureGridSpec(tau_offsets=(1, 2, 3, 4, 5), window_lengths=(2, 3, 4, 5))


def _tiny_net(seed=0, dropout=0.0):
    return SensitivityNetwork(TINY.n_features, width=8, n_layers=2, head_width=8,
                              dropout=dropout, rng=np.random.default_rng(seed))


def _leaky(z):
    return np.maximum(z, 0.0) + 0.01 * np.minimum(z, 0.0)


def test_forward_matches_hand_rolled(rng):
    net = _tiny_net()
    x = rng.random((4, TINY.n_features))
    p = net.params
    h = _leaky(_leaky(x @ p[0] + p[1]) @ p[2] + p[3])
    outs = []
    for j in range(3):
        W1, b1, W2, b2 = p[4 + 4 * j : 8 + 4 * j]
        o = _leaky(h @ W1 + b1) @ W2 + b2
        outs.append(1 / (1 + np.exp(-o[:, 0])))
    np.testing.assert_allclose(net.predict(x), np.stack(outs, axis=1), rtol=1e-13)


def test_gradient_check_tiny_model(rng):
    net = _tiny_net(1)
    x = rng.random((4, TINY.n_features))
    y = rng.random((4, 3))
    assert gradient_check(net, x, y, l2=1e-4) <= 1e-4


def test_zero_loss_batch_leaves_only_l2_gradient(rng):
    net = _tiny_net(2)
    x = rng.random((4, TINY.n_features))
    y = net.predict(x)
    _, data_grads = net.loss_and_grad(x, y, 0.0)
    assert max(np.abs(g).max() for g in data_grads) <= 1e-8
    l2 = 1e-3
    _, grads = net.loss_and_grad(x, y, l2)
    for g, p in zip(grads, net.params):
        np.testing.assert_allclose(g, 2 * l2 * p, atol=1e-10, rtol=0)


def test_dropout_only_when_rng_given(rng):
    net = _tiny_net(3, dropout=0.5)
    x = rng.random((6, TINY.n_features))
    assert np.array_equal(net.predict(x), net.predict(x))
    a = net.forward(x, np.random.default_rng(0))[0]
    b = net.forward(x, np.random.default_rng(1))[0]
    assert not np.array_equal(a, b)


def test_early_stopping_and_cosine():
    stop = EarlyStopping(patience=1)
    assert stop.step(1, 1.0) is False
    assert stop.step(2, 1.5) is True
    assert stop.best_epoch == 1
    assert cosine_lr(0.01, 0, 100) == 0.01
    assert cosine_lr(0.01, 50, 100) == pytest.approx(0.005)


def _dataset(rng, n):
    X = rng.normal(size=(n,) + TINY.shape)
    y = np.column_stack([np.tanh(X[:, 0, 0, 0]), X[:, 1, 0, 0] ** 3, np.sin(X[:, 2, 0, 0])])
    return X, y


def test_learns_function_of_one_cell(rng):
    """Targets are a deterministic function of one tensor cell.

    In CDF space the target equals the input cell's CDF value, so a network
    passing that cell through monotone layers represents it. The hand-built
    weight setting below confirms representability before training.
    """
    X, _ = _dataset(rng, 2000)
    y = np.column_stack([X[:, 0, 0, 0]] * 3)
    model = SensitivityPredictor(grid=TINY, width=16, head_width=16, dropout=0.0, batch_size=64,
                                 momentum=0.9, initial_lr=0.05, l2=0.0, max_epochs=100,
                                 patience=100, random_state=0)
    model.fit(X, y)
    Xu = model.x_cdf_.transform(X.reshape(len(X), -1))
    yu = model.y_cdf_.transform(y)

    hand = SensitivityNetwork(TINY.n_features, width=1, n_layers=1, head_width=1, dropout=0.0,
                              rng=np.random.default_rng(0))
    for p in hand.params:
        p[...] = 0.0
    hand.params[0][0, 0] = 1.0            # extractor passes cell 0 through
    for j in range(3):
        W1, b1, W2, b2 = hand.params[2 + 4 * j : 6 + 4 * j]
        W1[0, 0] = 1.0
        W2[0, 0] = 5.0
        b2[0] = -2.5
    hand_loss = np.mean((hand.predict(Xu) - yu) ** 2)
    initial = model.history_[0]["train_loss"]
    assert hand_loss < 0.1 * initial
    final = min(h["train_loss"] for h in model.history_)
    assert final < 0.1 * initial


def test_patience_one_stops_at_epoch_two(rng):
    X, y = _dataset(rng, 200)
    Xv, yv = _dataset(rng, 50)
    model = SensitivityPredictor(grid=TINY, width=8, head_width=8, max_epochs=50, patience=1,
                                 initial_lr=5.0, momentum=0.9, random_state=0)
    model.fit(X, y, Xv, yv)
    losses = [h["val_loss"] for h in model.history_]
    stops = [k for k in range(1, len(losses)) if losses[k] >= min(losses[:k])]
    assert model.n_epochs_ == stops[0] + 1
    best = int(np.argmin(losses))
    assert model.best_epoch_ == best + 1


def test_fit_predict_deterministic_and_checkpoint(tmp_path, rng):
    X, y = _dataset(rng, 300)
    cfg = TrainConfig(width=8, head_width=8, max_epochs=3, seed=7)
    a = SensitivityPredictor.from_config(cfg, grid=TINY, episode=123).fit(X, y)
    b = SensitivityPredictor.from_config(cfg, grid=TINY, episode=123).fit(X, y)
    assert np.array_equal(a.predict(X), b.predict(X))
    path = tmp_path / "m.npz"
    a.save(path)
    c = SensitivityPredictor.load(path)
    assert np.array_equal(c.predict(X), a.predict(X))
    c.check_episode(123)
    with pytest.raises(LookAheadError):
        c.check_episode(124)
    assert a.get_params()["random_state"] == 7


def test_input_validation(rng):
    X, y = _dataset(rng, 20)
    model = SensitivityPredictor(grid=TINY, max_epochs=1)
    with pytest.raises(InsufficientDataError):
        model.fit(X[:0], y[:0])
    with pytest.raises(ShapeMismatchError):
        model.fit(np.zeros((20, 6, 5, 3)), y)
    model.fit(X, y)
    with pytest.raises(ShapeMismatchError):
        model.predict(np.zeros((2, 7)))
