import numpy as np
import pytest

from dcorlab.core import double_center, make_rng, pairwise_distances
from dcorlab.exceptions import DimensionError, InvalidInputError
from dcorlab.experiments import make_blobs_task
from dcorlab.grad import central_differences, relative_discrepancy
from dcorlab.nn import (
    SGD,
    AttackConfig,
    BSGConfig,
    MLPParams,
    accuracy,
    attack,
    backward,
    bsg_train,
    constraint_penalty,
    constraint_subgrad,
    cross_entropy,
    cross_entropy_grad,
    fgm_attack,
    forward,
    init_mlp,
    pgd_attack,
    sgd_step,
)


def scalar_net(w):
    return MLPParams([np.array([[w]])], [np.zeros(1)])


# --- forward / backward ---------------------------------------------------


def test_identity_layer_passes_input_through(rng):
    x = rng.standard_normal((5, 3))
    logits, feats = forward(MLPParams([np.eye(3)], [np.zeros(3)]), x)
    np.testing.assert_array_equal(logits, x)
    np.testing.assert_array_equal(feats, x)


def test_zero_weights_give_zero_logits(rng):
    p = MLPParams([np.zeros((3, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)])
    logits, _ = forward(p, rng.standard_normal((6, 3)))
    np.testing.assert_array_equal(logits, 0.0)


def test_forward_matches_matrix_products(rng):
    p = init_mlp([4, 7, 3], seed=1)
    x = rng.standard_normal((5, 4))
    h = np.maximum(x @ p.weights[0] + p.biases[0], 0)
    logits, feats = forward(p, x)
    np.testing.assert_allclose(feats, h, rtol=1e-15)
    np.testing.assert_allclose(logits, h @ p.weights[1] + p.biases[1], rtol=1e-14)


def test_param_validation():
    with pytest.raises(DimensionError):
        MLPParams([np.zeros((3, 4)), np.zeros((5, 2))], [np.zeros(4), np.zeros(2)])
    with pytest.raises(DimensionError):
        MLPParams([np.zeros((3, 4))], [np.zeros(3)])
    with pytest.raises(InvalidInputError):
        MLPParams([np.zeros((3, 4))], [np.zeros(4)], feature_tap=3)
    with pytest.raises(DimensionError):
        forward(init_mlp([4, 2]), np.zeros((2, 5)))


def test_vector_round_trip():
    p = init_mlp([3, 5, 2], seed=2)
    q = p.from_vector(p.to_vector())
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))
    with pytest.raises(DimensionError):
        p.from_vector(np.zeros(3))


def test_backward_matches_finite_differences(rng):
    p = init_mlp([3, 6, 5, 4], seed=3, feature_tap=1)
    x = rng.standard_normal((7, 3))
    labels = rng.integers(0, 4, size=7)
    wf = rng.standard_normal((7, 5))

    def loss_of(vec):
        q = p.from_vector(vec)
        logits, feats = forward(q, x)
        return cross_entropy(logits, labels) + float(np.sum(wf * feats))

    logits, feats, cache = forward(p, x, return_cache=True)
    _, g = cross_entropy_grad(logits, labels)
    grads, dx = backward(p, cache, grad_logits=g, grad_features=wf, input_grad=True)
    numeric = central_differences(loss_of, p.to_vector())
    assert relative_discrepancy(grads.to_vector(), numeric) < 1e-7

    def loss_x(v):
        lg, ft = forward(p, v)
        return cross_entropy(lg, labels) + float(np.sum(wf * ft))

    assert relative_discrepancy(dx, central_differences(loss_x, x)) < 1e-7


# --- cross-entropy and SGD ------------------------------------------------


def test_cross_entropy_examples(rng):
    assert cross_entropy(np.zeros((4, 5)), [0, 1, 2, 3]) == pytest.approx(np.log(5), rel=1e-15)
    assert cross_entropy(100 * np.eye(3), [0, 1, 2]) < 1e-6
    logits = rng.standard_normal((6, 4))
    labels = rng.integers(0, 4, 6)
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    assert cross_entropy(logits, labels) == pytest.approx(-np.mean(np.log(p[np.arange(6), labels])), rel=1e-12)
    with pytest.raises(InvalidInputError):
        cross_entropy(logits, [0, 1, 2, 3, 4, 0])


def test_sgd_examples():
    assert sgd_step(scalar_net(1.0), scalar_net(2.0), lr=0.1).weights[0][0, 0] == pytest.approx(0.8)
    p = init_mlp([3, 4, 2], seed=4)
    for new in (sgd_step(p, p.zeros_like(), 0.5), sgd_step(p, p, 0.0)):
        assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), new.arrays()))
    with pytest.raises(DimensionError):
        sgd_step(p, init_mlp([3, 5, 2]), 0.1)


def test_momentum_buffer_follows_heavy_ball_rule():
    opt = SGD(lr=0.1, momentum=0.9)
    p = scalar_net(1.0)
    p = opt.step(p, scalar_net(1.0))  # v = 1
    p = opt.step(p, scalar_net(1.0))  # v = 1.9
    assert p.weights[0][0, 0] == pytest.approx(1.0 - 0.1 - 0.19)


# --- constraint -----------------------------------------------------------


def test_constraint_subgradient(rng):
    x = rng.standard_normal((10, 3))
    energy = float(np.sum(double_center(pairwise_distances(x)) ** 2))
    np.testing.assert_array_equal(constraint_subgrad(x, energy * 2), 0.0)
    np.testing.assert_array_equal(constraint_subgrad(np.ones((6, 2)), 1.0), 0.0)
    m = energy / 4
    g = constraint_subgrad(x, m)
    assert np.abs(g).max() > 0
    assert relative_discrepancy(g, central_differences(lambda v: constraint_penalty(v, m), x)) < 1e-6


# --- block stochastic gradient --------------------------------------------


def quad_loss(fx, fy):
    """Convex coupling: 0.5/m (|FX - FY|^2 + |FX - 1|^2), minimum 0 at FX = FY = 1."""
    m = fx.shape[0]
    r1, r2 = fx - fy, fx - 1.0
    return 0.5 / m * (np.sum(r1 * r1) + np.sum(r2 * r2)), (r1 + r2) / m, -r1 / m


@pytest.fixture
def surrogate():
    rng = make_rng(0)
    x = rng.standard_normal((256, 3))
    y = x @ rng.standard_normal((3, 4))

    def stream(T, m=32):
        for t in range(T):
            i = (t % (256 // m)) * m
            yield x[i:i + m], y[i:i + m]

    def objective(fx, fy):
        return quad_loss(forward(fx, x)[1], forward(fy, y)[1])[0]

    fx = init_mlp([3, 2], seed=1, feature_tap=-1)
    fy = init_mlp([4, 2], seed=2, feature_tap=-1)
    return fx, fy, stream, objective


def test_bsg_on_convex_surrogate(surrogate):
    fx, fy, stream, objective = surrogate
    cfg = BSGConfig(eta=1.0, T=400, m=32, constraint_mode="none")
    res = bsg_train(fx, fy, stream(400), cfg, loss=quad_loss)
    start = objective(fx, fy)
    assert objective(res.fx_avg, res.fy_avg) < start
    # Closed-form minimum is 0; the final iterate gets close to it.
    assert objective(res.fx, res.fy) < 1e-3 * start
    blocks = np.array(res.trace.objective).reshape(8, 50).mean(axis=1)
    assert np.all(np.diff(blocks) < 0)
    assert res.trace.grad_norm_x[-1] < 0.1 * res.trace.grad_norm_x[0]
    assert res.trace.grad_norm_y[-1] < 0.1 * res.trace.grad_norm_y[0]


def test_averaged_iterate_is_mean_of_iterates(surrogate):
    fx, fy, stream, _ = surrogate
    cfg = BSGConfig(eta=1.0, T=30, m=32, constraint_mode="none", keep_iterates=True)
    res = bsg_train(fx, fy, stream(30), cfg, loss=quad_loss)
    np.testing.assert_allclose(res.fx_avg.to_vector(), np.mean(res.trace.iterates_x, axis=0), atol=1e-12)
    np.testing.assert_allclose(res.fy_avg.to_vector(), np.mean(res.trace.iterates_y, axis=0), atol=1e-12)
    np.testing.assert_array_equal(res.trace.iterates_x[0], fx.to_vector())


def test_single_step_with_zero_gradient_returns_start(surrogate):
    fx, fy, stream, _ = surrogate

    def flat(a, b):
        return 0.0, np.zeros_like(a), np.zeros_like(b)

    res = bsg_train(fx, fy, stream(1), BSGConfig(eta=1.0, T=1, m=32, constraint_mode="none"), loss=flat)
    np.testing.assert_array_equal(res.fx_avg.to_vector(), fx.to_vector())
    np.testing.assert_array_equal(res.fy_avg.to_vector(), fy.to_vector())


def test_y_gradient_sees_updated_x(surrogate):
    fx, fy, stream, _ = surrogate
    seen = []

    def probe(a, b):
        seen.append(a.copy())
        return float(np.sum(a * b)), b.copy(), a.copy()

    cfg = BSGConfig(eta=0.1, T=1, m=32, constraint_mode="none", schedule="constant")
    bsg_train(fx, fy, stream(1), cfg, loss=probe)
    x_t, y_t = next(stream(1))
    _, feat_x, cache_x = forward(fx, x_t, return_cache=True)
    fx_next = sgd_step(fx, backward(fx, cache_x, grad_features=forward(fy, y_t)[1]), 0.1)
    assert len(seen) == 2
    np.testing.assert_array_equal(seen[0], feat_x)
    np.testing.assert_array_equal(seen[1], forward(fx_next, x_t)[1])
    assert not np.array_equal(seen[0], seen[1])


def test_without_constraint_bsg_is_alternating_sgd(surrogate):
    fx, fy, stream, _ = surrogate
    cfg = BSGConfig(eta=0.05, T=40, m=32, constraint_mode="none", schedule="constant")
    res = bsg_train(fx, fy, stream(40), cfg, loss=quad_loss)

    a, b = fx.copy(), fy.copy()
    for x_t, y_t in stream(40):
        _, fa, ca = forward(a, x_t, return_cache=True)
        _, fb, cb = forward(b, y_t, return_cache=True)
        a = sgd_step(a, backward(a, ca, grad_features=quad_loss(fa, fb)[1]), 0.05)
        fa = forward(a, x_t)[1]
        b = sgd_step(b, backward(b, cb, grad_features=quad_loss(fa, fb)[2]), 0.05)
    assert res.fx.to_vector().tobytes() == a.to_vector().tobytes()
    assert res.fy.to_vector().tobytes() == b.to_vector().tobytes()


def test_bsg_reduces_feature_dcor():
    rng = make_rng(1)
    T, m = 500, 32
    x = rng.standard_normal((T * m, 2))
    f1 = init_mlp([2, 64, 4], 3, feature_tap=-1)
    f2 = init_mlp([2, 64, 4], 4, feature_tap=-1)
    stream = ((x[m * t:m * (t + 1)], x[m * t:m * (t + 1)]) for t in range(T))
    res = bsg_train(f1, f2, stream, BSGConfig(eta=0.5, T=T, m=m, constraint_mode="none"))
    obj = res.trace.objective
    assert np.mean(obj[-20:]) < 0.5 * obj[0]


def test_degenerate_steps_are_skipped():
    x = np.zeros((8, 2))
    f = init_mlp([2, 3], 0, feature_tap=-1)
    res = bsg_train(f, f, [(x, x)] * 3, BSGConfig(eta=0.1, T=3, m=8))
    assert [t for t, _ in res.trace.skipped] == [0, 1, 2]
    np.testing.assert_array_equal(res.fx.to_vector(), f.to_vector())


def test_bsg_config_validation():
    with pytest.raises(InvalidInputError):
        BSGConfig(eta=0.0, T=1, m=4)
    with pytest.raises(InvalidInputError):
        BSGConfig(eta=1.0, T=0, m=4)
    with pytest.raises(InvalidInputError):
        BSGConfig(eta=1.0, T=1, m=4, constraint_mode="projection")
    assert BSGConfig(eta=1.0, T=4, m=4).step_size == 0.5
    assert BSGConfig(eta=1.0, T=4, m=4).constraint_bound == 4.0
    with pytest.raises(InvalidInputError):
        bsg_train(init_mlp([2, 2]), init_mlp([2, 2]), [], BSGConfig(eta=1.0, T=1, m=4))


# --- attacks --------------------------------------------------------------


@pytest.fixture(scope="module")
def trained():
    data = make_blobs_task(seed=3, n_train=1500, n_test=300)
    p = init_mlp([64, 32, 10], seed=5)
    opt = SGD(0.05, 0.9)
    order_rng = make_rng(6)
    for _ in range(5):
        order = order_rng.permutation(1500)
        for i in range(0, 1500, 32):
            idx = order[i:i + 32]
            logits, _, cache = forward(p, data.x_train[idx], return_cache=True)
            _, g = cross_entropy_grad(logits, data.y_train[idx])
            p = opt.step(p, backward(p, cache, grad_logits=g))
    return p, data


def test_fgm_properties(trained):
    p, data = trained
    x, y = data.x_test, data.y_test
    np.testing.assert_array_equal(fgm_attack(p, x, y, AttackConfig("FGM", 0.0)), x)
    x_adv = fgm_attack(p, x, y, AttackConfig("FGM", 0.1))
    assert np.abs(x_adv - x).max() <= 0.1 + 1e-12
    assert x_adv.min() >= 0.0 and x_adv.max() <= 1.0
    assert accuracy(p, x_adv, y) < accuracy(p, x, y)


def test_pgd_properties(trained):
    p, data = trained
    x, y = data.x_test, data.y_test
    for eps in (0.03, 0.05, 0.1):
        cfg = AttackConfig("PGD", eps)
        assert cfg.pgd_iters == 40 and cfg.pgd_step == pytest.approx(eps / 10)
        x_adv = pgd_attack(p, x, y, cfg)
        assert np.abs(x_adv - x).max() <= eps + 1e-12
        assert x_adv.min() >= 0.0 and x_adv.max() <= 1.0
        fgm = attack(p, x, y, AttackConfig("FGM", eps))
        assert accuracy(p, x_adv, y) <= accuracy(p, fgm, y) + 0.02


def test_single_pgd_step_equals_fgm(trained):
    p, data = trained
    x, y = data.x_test[:50], data.y_test[:50]
    one = pgd_attack(p, x, y, AttackConfig("PGD", 0.05, pgd_iters=1, pgd_step=0.05))
    np.testing.assert_allclose(one, fgm_attack(p, x, y, AttackConfig("FGM", 0.05)), atol=1e-15)


def test_attack_config():
    assert AttackConfig("pgd", 0.05).label == "PGD_eps0.05"
    with pytest.raises(InvalidInputError):
        AttackConfig("CW", 0.1)
    with pytest.raises(InvalidInputError):
        fgm_attack(init_mlp([2, 2]), np.zeros((1, 2)), [0], AttackConfig("PGD", 0.1))
