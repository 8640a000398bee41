import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedpoison.errors import ConfigError, DataError, NumericError, ShapeError
from fedpoison.nn import (
    AdamState,
    Batch,
    ModelParams,
    TrainingHyperparams,
    apply_update,
    backward,
    forward,
    init_model,
    loss,
    softmax,
)


def central_difference(params, batch, l2, h=1e-5):
    """Independent oracle: perturb every coordinate and re-evaluate loss()."""
    grads = []
    for w, b in params.layers:
        gw, gb = np.zeros_like(w), np.zeros_like(b)
        for arr, g in ((w, gw), (b, gb)):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = loss(forward(params, batch.features), batch.labels, params, l2)
                arr[idx] = old - h
                down = loss(forward(params, batch.features), batch.labels, params, l2)
                arr[idx] = old
                g[idx] = (up - down) / (2 * h)
        grads.append((gw, gb))
    return ModelParams(tuple(grads))


def zero_model(dims):
    return ModelParams(tuple((np.zeros((a, b)), np.zeros(b)) for a, b in zip(dims[:-1], dims[1:])))


def test_init_is_deterministic():
    a = init_model([2, 2], seed=7)
    b = init_model([2, 2], seed=7)
    assert a.equals(b)
    assert not a.equals(init_model([2, 2], seed=8))


def test_init_shapes_chain():
    p = init_model([4, 8, 3])
    assert [(w.shape, b.shape) for w, b in p.layers] == [((4, 8), (8,)), ((8, 3), (3,))]


def test_init_range_bound():
    p = init_model([10, 20, 5], init_range=0.05, seed=1)
    assert max(np.abs(t).max() for t in p.tensors()) <= 0.05


@pytest.mark.parametrize("dims", [[], [3], [3, 0]])
def test_init_rejects_degenerate_dims(dims):
    with pytest.raises(ConfigError):
        init_model(dims)


def test_zero_network_gives_uniform_output():
    p = zero_model([5, 4, 3])
    out = forward(p, np.random.default_rng(0).normal(size=(6, 5)))
    np.testing.assert_allclose(out, 1 / 3)


def test_eval_mode_is_repeatable():
    p = init_model([3, 6, 2], seed=3)
    x = np.random.default_rng(1).normal(size=(4, 3))
    assert np.array_equal(forward(p, x), forward(p, x))


def test_two_class_zero_logits():
    np.testing.assert_allclose(softmax(np.zeros((1, 2))), [[0.5, 0.5]])


def test_forward_shape_error():
    with pytest.raises(ShapeError):
        forward(init_model([3, 2]), np.zeros((2, 4)))


@given(st.lists(st.floats(-700, 700), min_size=2, max_size=12))
def test_softmax_rows_sum_to_one(logits):
    row = softmax(np.array([logits]))
    assert abs(row.sum() - 1) < 1e-9
    assert np.all(np.isfinite(row))


def test_dropout_train_mode_uses_seeded_mask():
    p = init_model([4, 16, 3], seed=0)
    x = np.ones((2, 4))
    a = forward(p, x, "train", dropout_seed=5, dropout_rate=0.5)
    b = forward(p, x, "train", dropout_seed=5, dropout_rate=0.5)
    c = forward(p, x, "train", dropout_seed=6, dropout_rate=0.5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.array_equal(forward(p, x, "eval", dropout_rate=0.5), forward(p, x))


def test_loss_perfect_prediction_is_zero():
    probs = np.eye(3)
    assert loss(probs, np.array([0, 1, 2])) == 0.0


def test_loss_uniform_four_class():
    assert loss(np.full((5, 4), 0.25), np.zeros(5, dtype=int)) == pytest.approx(np.log(4))


def test_loss_l2_penalty_only():
    p = ModelParams(((np.array([[2.0]]), np.array([7.0])),))
    assert loss(np.array([[1.0]]), np.array([0]), p, l2_coef=1.0) == pytest.approx(4.0)


def test_loss_rejects_bad_label():
    with pytest.raises(DataError):
        loss(np.full((1, 2), 0.5), np.array([2]))


def test_output_bias_gradient_sums_to_zero():
    p = zero_model([2, 3, 2])
    batch = Batch(np.array([[1.0, 2.0], [-1.0, 0.5]]), np.array([0, 1]))
    g = backward(p, batch, TrainingHyperparams())
    assert abs(g.layers[-1][1].sum()) < 1e-15


def test_duplicated_batch_gives_same_gradient():
    p = init_model([3, 5, 3], init_range=0.5, seed=2)
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(4, 3)), np.array([0, 1, 2, 1])
    hyper = TrainingHyperparams()
    g1 = backward(p, Batch(x, y), hyper)
    g2 = backward(p, Batch(np.repeat(x, 2, axis=0), np.repeat(y, 2)), hyper)
    np.testing.assert_allclose(g1.flat(), g2.flat(), rtol=1e-12, atol=1e-15)


def test_backward_matches_finite_differences_with_l2():
    rng = np.random.default_rng(4)
    p = init_model([3, 4, 4, 3], init_range=0.8, seed=4)
    batch = Batch(rng.normal(size=(6, 3)), rng.integers(0, 3, 6))
    g = backward(p, batch, TrainingHyperparams(l2_coef=0.01))
    fd = central_difference(p, batch, 0.01)
    np.testing.assert_allclose(g.flat(), fd.flat(), rtol=1e-5, atol=1e-8)


def test_dropout_gradient_uses_forward_mask():
    # with the mask fixed, the train-mode loss is smooth: check by finite differences
    rng = np.random.default_rng(0)
    p = init_model([3, 8, 2], init_range=0.7, seed=9)
    batch = Batch(rng.normal(size=(5, 3)), rng.integers(0, 2, 5))
    hyper = TrainingHyperparams(dropout_rate=0.3)
    g = backward(p, batch, hyper, dropout_seed=11).flat()

    def f(q):
        probs = forward(q, batch.features, "train", 11, 0.3)
        return loss(probs, batch.labels)

    flat = p.flat()
    h = 1e-6
    for i in range(0, flat.size, 3):
        e = np.zeros_like(flat)
        e[i] = h
        up, down = _unflatten(p, flat + e), _unflatten(p, flat - e)
        assert (f(up) - f(down)) / (2 * h) == pytest.approx(g[i], rel=1e-4, abs=1e-8)


def _unflatten(like, flat):
    out, pos = [], 0
    for w, b in like.layers:
        nw = flat[pos : pos + w.size].reshape(w.shape)
        pos += w.size
        nb = flat[pos : pos + b.size]
        pos += b.size
        out.append((nw, nb))
    return ModelParams(tuple(out))


def test_sgd_step():
    p = ModelParams(((np.array([[1.0]]), np.array([0.0])),))
    g = ModelParams(((np.array([[0.5]]), np.array([0.0])),))
    out = apply_update(p, g, TrainingHyperparams(learning_rate=0.1))
    assert out.layers[0][0][0, 0] == pytest.approx(0.95)


@pytest.mark.parametrize("opt", ["sgd", "adam"])
def test_zero_gradient_is_identity(opt):
    p = init_model([3, 4, 2], seed=1)
    g = p.map(np.zeros_like)
    hyper = TrainingHyperparams(optimizer=opt)
    state = AdamState.zeros_like(p) if opt == "adam" else None
    assert apply_update(p, g, hyper, 1, state).equals(p)


@pytest.mark.parametrize("opt", ["sgd", "adam"])
def test_zero_learning_rate_is_identity(opt):
    p = init_model([3, 4, 2], seed=1)
    g = init_model([3, 4, 2], seed=2)
    hyper = TrainingHyperparams(optimizer=opt, learning_rate=0.0)
    state = AdamState.zeros_like(p) if opt == "adam" else None
    assert apply_update(p, g, hyper, 1, state).equals(p)


def test_adam_first_step_by_hand():
    # m = 0.1, v = 0.001; bias-corrected both are 1 -> step = lr * 1 / (1 + eps)
    p = ModelParams(((np.array([[0.0]]), np.array([0.0])),))
    g = ModelParams(((np.array([[1.0]]), np.array([0.0])),))
    hyper = TrainingHyperparams(optimizer="adam", learning_rate=0.001)
    state = AdamState.zeros_like(p)
    out = apply_update(p, g, hyper, 1, state)
    expected = -0.001 * 1.0 / (1.0 + 1e-8)
    assert out.layers[0][0][0, 0] == pytest.approx(expected, rel=1e-12)
    assert out.layers[0][1][0] == 0.0
    assert state.step == 1


def test_adam_requires_sequential_steps():
    p = init_model([2, 2])
    hyper = TrainingHyperparams(optimizer="adam")
    with pytest.raises(ConfigError):
        apply_update(p, p, hyper, 3, AdamState.zeros_like(p))


def test_non_finite_gradient_rejected():
    p = init_model([2, 2])
    bad = p.map(lambda t: np.full_like(t, np.nan))
    with pytest.raises(NumericError):
        apply_update(p, bad, TrainingHyperparams())


def test_update_does_not_mutate_input():
    p = init_model([3, 3], seed=0)
    before = p.copy()
    apply_update(p, p, TrainingHyperparams(learning_rate=0.5))
    assert p.equals(before)


def test_hyperparam_validation():
    with pytest.raises(ConfigError):
        TrainingHyperparams(dropout_rate=1.0)
    with pytest.raises(ConfigError):
        TrainingHyperparams(optimizer="rmsprop")


def test_export_roundtrip(tmp_path):
    p = init_model([4, 5, 3], seed=3)
    p.save_binary(tmp_path / "m.bin")
    assert ModelParams.load_binary(tmp_path / "m.bin").equals(p)
    assert ModelParams.from_dict(p.to_dict()).equals(p)


@settings(max_examples=30, deadline=None)
@given(
    dims=st.lists(st.integers(1, 6), min_size=2, max_size=4),
    n=st.integers(1, 5),
    seed=st.integers(0, 2**31),
)
def test_loss_nonnegative_and_params_finite(dims, n, seed):
    dims[-1] = max(dims[-1], 2)
    rng = np.random.default_rng(seed)
    p = init_model(dims, init_range=1.0, seed=seed)
    batch = Batch(rng.normal(size=(n, dims[0])), rng.integers(0, dims[-1], n))
    hyper = TrainingHyperparams(l2_coef=0.01, learning_rate=0.1)
    assert loss(forward(p, batch.features), batch.labels, p, 0.01) >= 0
    q = apply_update(p, backward(p, batch, hyper), hyper)
    assert q.is_finite()
