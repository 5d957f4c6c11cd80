import numpy as np
import pytest

from deltaflow.errors import DimensionMismatchError, ModelFormatError, TapeMismatchError
from deltaflow.nn import (
    Adam,
    AdamState,
    Dense,
    MlpParams,
    adam_step,
    backprop,
    flatten,
    init_mlp,
    mlp_forward,
    mlp_from_json,
    mlp_to_json,
)

from oracles import fd_gradients, loss_and_grad, near_kink, random_net, rel_error


def test_zero_net_gives_zero_output():
    p = MlpParams([Dense(np.zeros((3, 2)), np.zeros(3), "identity")])
    np.testing.assert_array_equal(mlp_forward(p, np.array([1.0, -2.0])), np.zeros(3))


def test_single_unit_affine():
    p = MlpParams([Dense(np.array([[2.0]]), np.array([1.0]), "identity")])
    assert mlp_forward(p, np.array([3.0]))[0] == 7.0


def test_forward_deterministic_and_batched(rng):
    p = init_mlp((5, 7, 3), ("tanh", "softplus"), seed=3)
    x = rng.standard_normal((4, 5))
    a = mlp_forward(p, x)
    b = mlp_forward(p, x)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a[2], mlp_forward(p, x[2]), rtol=0, atol=1e-15)


def test_dimension_checks():
    with pytest.raises(DimensionMismatchError):
        MlpParams([Dense(np.zeros((3, 2)), np.zeros(3)), Dense(np.zeros((1, 4)), np.zeros(1))])
    p = init_mlp((2, 1), ("identity",), seed=0)
    with pytest.raises(DimensionMismatchError):
        mlp_forward(p, np.zeros(3))
    with pytest.raises(ValueError):
        MlpParams([Dense(np.full((1, 1), np.nan), np.zeros(1))])


def test_quadratic_loss_on_linear_net(rng):
    W = rng.standard_normal((3, 4))
    b = np.zeros(3)
    p = MlpParams([Dense(W.copy(), b, "identity")])
    x = rng.standard_normal(4)
    y = rng.standard_normal(3)
    out, tape = mlp_forward(p, x, record=True)
    grads, dx = backprop(tape, 2 * (out - y))
    r = W @ x - y
    np.testing.assert_allclose(grads[0], 2 * np.outer(r, x), atol=1e-12)
    np.testing.assert_allclose(dx, 2 * W.T @ r, atol=1e-12)


def test_zero_output_gradient_gives_zero_grads(rng):
    p = init_mlp((3, 5, 2), ("relu", "tanh"), seed=1)
    _, tape = mlp_forward(p, rng.standard_normal((6, 3)), record=True)
    grads, dx = backprop(tape, np.zeros((6, 2)))
    assert all(not g.any() for g in grads)
    assert not dx.any()


def test_tape_mismatch(rng):
    p = init_mlp((3, 2), ("identity",), seed=1)
    _, tape = mlp_forward(p, rng.standard_normal(3), record=True)
    with pytest.raises(TapeMismatchError):
        backprop(tape, np.zeros(5))
    p.layers[0].weight = np.zeros((4, 3))
    with pytest.raises(TapeMismatchError):
        backprop(tape, np.zeros(2))


@pytest.mark.parametrize("act", ["tanh", "relu", "softplus", "identity"])
def test_finite_difference_per_activation(act, rng):
    for _ in range(25):
        p = random_net(rng, activations=(act,))
        x = rng.standard_normal((3, p.in_dim))
        if near_kink(p, x):
            continue
        c = rng.standard_normal((3, p.out_dim))
        _, grads, _ = loss_and_grad(p, x, c)
        assert rel_error(grads, fd_gradients(p, x, c)) < 1e-4


def test_no_overflow_on_bounded_inputs(rng):
    for _ in range(50):
        p = random_net(rng, scale=10.0)
        for l in p.layers:
            np.clip(l.weight, -10, 10, out=l.weight)
            np.clip(l.bias, -10, 10, out=l.bias)
        x = rng.uniform(-1e3, 1e3, size=(4, p.in_dim))
        out, tape = mlp_forward(p, x, record=True)
        assert np.all(np.isfinite(out))
        grads, _ = backprop(tape, np.ones_like(out))
        assert all(np.all(np.isfinite(g)) for g in grads)


# --------------------------------------------------------------------------- Adam


def test_adam_zero_gradient_keeps_params():
    params = [np.array([1.0, -2.0]), np.array([[3.0]])]
    state = AdamState.zeros_like(params)
    new, state = adam_step(params, [np.zeros(2), np.zeros((1, 1))], state)
    for a, b in zip(params, new):
        np.testing.assert_array_equal(a, b)
    assert state.t == 1


def test_adam_moves_against_constant_gradient():
    p = [np.array([0.0, 0.0])]
    state = AdamState.zeros_like(p)
    g = [np.array([1.0, -3.0])]
    for _ in range(100):
        p, state = adam_step(p, g, state, lr=1e-2)
    assert p[0][0] < 0 < p[0][1]
    # bias-corrected steps have magnitude lr regardless of |g|
    np.testing.assert_allclose(np.abs(p[0]), 1.0, rtol=1e-6)


def test_in_place_adam_matches_pure_adam(rng):
    arrays = [rng.standard_normal((3, 2)), rng.standard_normal(3)]
    theta, views = flatten(arrays)
    opt = Adam(theta, lr=1e-2)
    state = AdamState.zeros_like(arrays)
    pure = [a.copy() for a in arrays]
    for _ in range(20):
        gs = [rng.standard_normal(a.shape) for a in arrays]
        opt.step(np.concatenate([g.ravel() for g in gs]))
        pure, state = adam_step(pure, gs, state, lr=1e-2)
    for v, p in zip(views, pure):
        np.testing.assert_allclose(v, p, rtol=0, atol=1e-14)


def test_flatten_views_share_memory():
    arrays = [np.ones((2, 2)), np.zeros(3)]
    theta, views = flatten(arrays)
    theta[:] = np.arange(7.0)
    np.testing.assert_array_equal(views[0], [[0, 1], [2, 3]])
    np.testing.assert_array_equal(views[1], [4, 5, 6])


def test_adam_trajectories_deterministic():
    def run():
        p = init_mlp((2, 3, 1), ("tanh", "identity"), seed=9)
        theta, views = flatten(p.arrays())
        p.set_arrays(views)
        opt = Adam(theta)
        x = np.linspace(-1, 1, 20)[:, None].repeat(2, axis=1)
        for _ in range(30):
            out, tape = mlp_forward(p, x, record=True)
            grads, _ = backprop(tape, out - 1.0)
            opt.step(np.concatenate([g.ravel() for g in grads]))
        return theta.copy()

    np.testing.assert_array_equal(run(), run())


# --------------------------------------------------------------------------- serialization


def test_json_round_trip_bit_exact(rng, tmp_path):
    from deltaflow.nn import dump_json, load_json

    p = random_net(rng)
    p.metadata["note"] = "x"
    dump_json(mlp_to_json(p), tmp_path / "m.json")
    back = mlp_from_json(load_json(tmp_path / "m.json"))
    for a, b in zip(p.arrays(), back.arrays()):
        np.testing.assert_array_equal(a, b)
    assert [l.activation for l in back.layers] == [l.activation for l in p.layers]
    assert back.metadata == {"note": "x"}


def test_json_rejects_other_versions(rng):
    obj = mlp_to_json(random_net(rng))
    obj["version"] = 2
    with pytest.raises(ModelFormatError):
        mlp_from_json(obj)
