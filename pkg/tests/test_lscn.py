import math

import numpy as np
import pytest

from channel.estimation import LinkState, PathEstimate, Snapshot
from common.errors import EmptyDataset, ShapeMismatch
from common.seeding import STREAM_INIT, derive_seed
from mapping.lscn import (
    Architecture,
    DenseLayer,
    LscnDataset,
    LscnModel,
    TrainConfig,
    backward,
    forward,
    gradient_check,
    init_model,
    k_sweep,
    loss,
    predict_state,
    softmax,
    stratified_split,
    train,
)
from slam.config import builtin_scenario_file
from slam.dataset import generate_lscn_dataset

SMALL = Architecture(stage1=[4], stage2=[6])


def zeroed(model: LscnModel) -> LscnModel:
    for layer in model.layers:
        layer.weights[:] = 0.0
        layer.bias[:] = 0.0
    return model


def clusters(n_per_class: int = 100, seed: int = 0) -> LscnDataset:
    """Three well-separated Gaussian blobs in the first path's (tau, theta, phi)."""
    rng = np.random.default_rng(seed)
    centers = np.array([[-3.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 3.0, 3.0]])
    feats = np.concatenate([c + 0.3 * rng.standard_normal((n_per_class, 3)) for c in centers])
    labels = np.repeat(np.arange(3), n_per_class)
    return LscnDataset(feats, labels)


def second_path_bands(n: int = 600, seed: int = 0) -> LscnDataset:
    """Label decided by the second path's delay only; the first path is noise."""
    rng = np.random.default_rng(seed)
    feats = rng.uniform(0.0, 1.0, size=(n, 9))
    feats[:, 3] = rng.uniform(0.0, 3.0, size=n)
    return LscnDataset(feats, np.floor(feats[:, 3]).astype(np.int64))


def snap(*rows, state=LinkState.LOS) -> Snapshot:
    return Snapshot(estimates=tuple(rows), true_link_state=state)


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.zeros(3)), [1 / 3] * 3)
    e = math.exp(-10.0)
    np.testing.assert_allclose(softmax(np.array([10.0, 0.0, 0.0])), [1 / (1 + 2 * e), e / (1 + 2 * e), e / (1 + 2 * e)])
    big = softmax(np.array([[500.0, -500.0, 0.0], [-500.0, -500.0, -500.0]]))
    assert np.all(np.isfinite(big))
    np.testing.assert_allclose(big.sum(axis=1), 1.0)


def test_zero_model_is_uniform():
    model = zeroed(init_model(3, SMALL, seed=1))
    probs = forward(model, np.random.default_rng(0).normal(size=(5, 9)))
    np.testing.assert_allclose(probs, 1 / 3)


def test_output_bias_shift_invariance():
    model = init_model(2, SMALL, seed=4)
    x = np.random.default_rng(1).normal(size=(4, 6))
    before = forward(model, x)
    model.stage2[-1].bias += 7.5
    np.testing.assert_allclose(forward(model, x), before, atol=1e-9)


def test_loss_values():
    assert loss(np.array([1.0, 0.0, 0.0]), 0) <= 1e-12
    assert loss(np.full(3, 1 / 3), np.array([0, 0, 1])) == pytest.approx(math.log(3))
    assert loss(np.array([0.7, 0.2, 0.1]), np.array([0, 1, 0])) == pytest.approx(1.6094, abs=1e-4)
    assert loss(np.array([0.7, 0.2, 0.1]), 1) == pytest.approx(-math.log(0.2))
    assert math.isfinite(loss(np.array([1.0, 0.0, 0.0]), 2))


def test_output_bias_gradient_of_zero_model():
    model = zeroed(init_model(2, SMALL, seed=0))
    grads = backward(model, np.ones(6), 2)
    np.testing.assert_allclose(grads[-1][1], [1 / 3, 1 / 3, -2 / 3])


def test_dead_relu_gets_no_gradient():
    model = init_model(3, SMALL, seed=5)
    model.stage1[0].bias[0] = -1e6
    x = np.random.default_rng(2).normal(size=(8, 9))
    dw, db = backward(model, x, np.arange(8) % 3)[0]
    assert np.all(dw[:, 0] == 0.0)
    assert db[0] == 0.0


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(123)
    worst = 0.0
    for seed in range(20):
        model = init_model(3, SMALL, seed=seed)
        x = rng.normal(size=(4, 9))
        labels = rng.integers(0, 3, size=4)
        worst = max(worst, gradient_check(model, x, labels))
    assert worst < 1e-4


def test_gradient_check_without_stage1_hidden_layers():
    model = init_model(2, Architecture(stage1=[], stage2=[5]), seed=3)
    x = np.random.default_rng(4).normal(size=(3, 6))
    assert gradient_check(model, x, np.array([0, 1, 2])) < 1e-4


def test_model_shape_checks():
    model = init_model(2, SMALL, seed=0)
    with pytest.raises(ShapeMismatch):
        forward(model, np.zeros(9))
    with pytest.raises(ShapeMismatch):
        LscnModel(model.stage1, model.stage2, K=3)
    with pytest.raises(ShapeMismatch):
        LscnModel([DenseLayer(np.zeros((3, 4)), np.zeros(4))], [DenseLayer(np.zeros((7, 2)), np.zeros(2), "linear")], K=2)


def test_stratified_split_counts():
    labels = np.array([0] * 30 + [1] * 12 + [2] * 7)
    data = LscnDataset(np.arange(49 * 3, dtype=float).reshape(49, 3), labels)
    tr, val = stratified_split(data, seed=0)
    assert val.class_counts().tolist() == [10, 4, 2]
    assert tr.class_counts().tolist() == [20, 8, 5]
    assert set(map(tuple, tr.features)).isdisjoint(map(tuple, val.features))


def test_learning_rate_zero_keeps_parameters():
    data = clusters(30)
    cfg = TrainConfig(learning_rate=0.0, epochs=3, batch_size=16, rng_seed=7)
    model, history = train(data, cfg, SMALL)
    assert len({h.train_loss for h in history}) == 1
    fresh = init_model(1, SMALL, derive_seed(7, STREAM_INIT))
    for trained, init in zip(model.layers, fresh.layers):
        np.testing.assert_array_equal(trained.weights, init.weights)
        np.testing.assert_array_equal(trained.bias, init.bias)


def test_separable_toy_set():
    cfg = TrainConfig(learning_rate=1e-2, epochs=200, batch_size=32, rng_seed=0)
    model, history = train(clusters(100), cfg)
    assert len(history) == 200
    assert history[-1].train_acc >= 0.99
    assert history[-1].val_acc >= 0.95
    assert model.scaler is not None and model.scaler.width == 3


def test_training_is_deterministic():
    cfg = TrainConfig(epochs=3, batch_size=16, rng_seed=11)
    a, ha = train(clusters(40), cfg, SMALL)
    b, hb = train(clusters(40), cfg, SMALL)
    for la, lb in zip(a.layers, b.layers):
        np.testing.assert_array_equal(la.weights, lb.weights)
    assert [h.to_dict() for h in ha] == [h.to_dict() for h in hb]


def test_explicit_validation_set():
    cfg = TrainConfig(epochs=2, batch_size=16)
    _, history = train(clusters(20, seed=1), cfg, SMALL, validation=clusters(10, seed=2))
    assert not math.isnan(history[-1].val_acc)
    with pytest.raises(ShapeMismatch):
        train(clusters(20), cfg, SMALL, validation=second_path_bands(30))
    with pytest.raises(EmptyDataset):
        train(LscnDataset.empty(1), cfg, SMALL)


def test_predict_state_from_output_bias():
    model = zeroed(init_model(2, SMALL, seed=0))
    s = snap(PathEstimate(1e-7, 1.0, 0.5, 20.0), PathEstimate(2e-7, 1.2, 0.1, 10.0))
    assert predict_state(model, s) is LinkState.LOS  # tie goes to the lower index
    model.stage2[-1].bias[:] = np.log([0.9, 0.05, 0.05])
    assert predict_state(model, s) is LinkState.LOS
    model.stage2[-1].bias[:] = np.log([0.1, 0.8, 0.1])
    assert predict_state(model, s) is LinkState.FIRST_ORDER_NLOS


def test_predict_state_input_checks():
    model = zeroed(init_model(2, SMALL, seed=0))
    real = PathEstimate(1e-7, 1.0, 0.5, 20.0)
    weak = PathEstimate(2e-7, 1.2, 0.1, 10.0)
    pad = PathEstimate(4e-7, math.pi / 2, 0.0, 0.0, padded=True)
    assert predict_state(model, snap(real, pad)) is LinkState.LOS
    with pytest.raises(ValueError):
        predict_state(model, snap(pad, real))
    with pytest.raises(ValueError):
        predict_state(model, snap(weak, real))
    with pytest.raises(ShapeMismatch):
        predict_state(model, snap(real, weak, pad))


def test_k_sweep_rows_and_trend():
    cfg = TrainConfig(learning_rate=1e-2, epochs=60, batch_size=32, rng_seed=0)
    rows = k_sweep(second_path_bands(), [1, 3], cfg)
    assert [r.K for r in rows] == [1, 3]
    assert rows[1].val_acc >= rows[0].val_acc - 0.02
    assert rows[1].val_acc > 0.8


def test_single_k_sweep_matches_train():
    cfg = TrainConfig(epochs=4, batch_size=32, rng_seed=3)
    data = second_path_bands(150)
    (row,) = k_sweep(data, [2], cfg, SMALL)
    _, history = train(data.truncated(2), cfg, SMALL)
    assert row.val_acc == history[-1].val_acc
    assert row.train_acc == history[-1].train_acc


@pytest.mark.slow
def test_two_buildings_classifier_beats_the_majority_class():
    scenario = builtin_scenario_file("two-buildings").resolve()
    ds = scenario.dataset
    data = generate_lscn_dataset(
        scenario.mesh, ds.rx_grid, ds.tx_positions, scenario.channel, scenario.noise, scenario.K, scenario.master_seed
    )
    assert data.K == 9
    assert len(data) >= 5000
    counts = data.class_counts()
    majority = counts.max() / counts.sum()

    rows = {r.K: r for r in k_sweep(data, [1, 9], scenario.lscn.train, scenario.lscn.architecture)}
    assert rows[9].val_acc - majority >= 0.15
    assert rows[9].val_acc >= rows[1].val_acc - 0.02
