import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from castgraph import gradcheck
from castgraph.model import (
    AdamState,
    Adjacency,
    GatModel,
    ModelConfig,
    NonFiniteGradientError,
    adam_step,
    attention_coefficients,
    class_weight_vector,
    classify_pair,
    focal_loss,
    gat_layer_forward,
    init_params,
)


def small_model(d_in=5, seed=0, **cfg):
    cfg = ModelConfig(**{"d_model": 4, "heads": 2, "dropout": 0.0, "seed": seed, **cfg})
    return GatModel(d_in, cfg)


def line_graph(n):
    return Adjacency.with_self_loops(n, np.arange(n - 1), np.arange(1, n))


# -- attention -----------------------------------------------------------


def test_single_neighbour_gets_full_weight():
    adj = Adjacency.with_self_loops(2)
    rng = np.random.default_rng(0)
    alpha = attention_coefficients(rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), adj)
    assert np.allclose(alpha, 1.0)


def test_identical_neighbours_split_evenly():
    # node 0 receives from itself and node 1, both with the same embedding
    adj = Adjacency(2, [0, 1, 1], [0, 0, 1])
    h = np.array([[1.0, 2.0], [1.0, 2.0]])
    rng = np.random.default_rng(1)
    alpha = attention_coefficients(rng.normal(size=(1, 2, 3)), rng.normal(size=(1, 6)), h, adj)
    into0 = alpha[0, adj.dst == 0]
    assert np.allclose(into0, [0.5, 0.5])


def test_attention_hand_computed():
    W = np.array([[[1.0, 0.0], [0.5, -1.0]]])  # one head, 2 -> 2
    a = np.array([[0.3, -0.2, 0.8, 0.1]])
    h = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]])
    # edges into node 0 from 0, 1, 2; into 1 and 2 only self-loops
    adj = Adjacency(3, [0, 1, 2, 1, 2], [0, 0, 0, 1, 2])
    alpha = attention_coefficients(W, a, h, adj)

    def proj(v):
        return [sum(v[i] * W[0][i][j] for i in range(2)) for j in range(2)]

    def leaky(z):
        return z if z > 0 else 0.2 * z

    wh = [proj(v) for v in h]
    scores = [
        leaky(a[0][0] * wh[0][0] + a[0][1] * wh[0][1] + a[0][2] * wh[u][0] + a[0][3] * wh[u][1]) for u in range(3)
    ]
    ex = [math.exp(s) for s in scores]
    expected = [e / sum(ex) for e in ex]
    got = alpha[0, adj.dst == 0]
    assert np.allclose(got, expected, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_attention_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 15))
    m = int(rng.integers(0, 40))
    adj = Adjacency.with_self_loops(n, rng.integers(0, n, m), rng.integers(0, n, m))
    H, d, k = 3, 4, 5
    alpha = attention_coefficients(rng.normal(size=(H, d, k)) * 3, rng.normal(size=(H, 2 * k)), rng.normal(size=(n, d)), adj)
    sums = np.zeros((H, n))
    np.add.at(sums, (slice(None), adj.dst), alpha)
    assert np.all(np.abs(sums - 1) <= 1e-9)
    assert np.all(alpha >= 0)


# -- layer ---------------------------------------------------------------


def test_zero_weights_leave_residual():
    rng = np.random.default_rng(2)
    h = rng.normal(size=(4, 3))
    R = rng.normal(size=(3, 4))
    adj = line_graph(4)
    out, _ = gat_layer_forward(np.zeros((2, 3, 2)), rng.normal(size=(2, 4)), h, adj, R, "concat")
    assert np.allclose(out, h @ R)


def test_single_node_identity_trace():
    h = np.array([[0.5, -2.0, 1.5]])
    adj = Adjacency.with_self_loops(1)
    out, _ = gat_layer_forward(np.eye(3)[None], np.zeros((1, 6)), h, adj, None, "concat")
    elu = np.where(h > 0, h, np.exp(h) - 1)
    assert np.allclose(out, elu + h)


def test_layer_shape_error():
    with pytest.raises(ValueError):
        gat_layer_forward(np.zeros((1, 3, 2)), np.zeros((1, 4)), np.zeros((2, 5)), line_graph(2))


def test_permutation_equivariance():
    rng = np.random.default_rng(3)
    n = 7
    model = small_model(d_in=5, seed=3)
    x = rng.normal(size=(n, 5))
    src, dst = rng.integers(0, n, 15), rng.integers(0, n, 15)
    pairs = np.array([[0, 1], [2, 5], [6, 3]])
    p1, _, _ = model.forward(x, Adjacency.with_self_loops(n, src, dst), pairs)
    perm = rng.permutation(n)  # new id of old node i is perm[i]
    inv = np.argsort(perm)
    p2, _, _ = model.forward(x[inv], Adjacency.with_self_loops(n, perm[src], perm[dst]), perm[pairs])
    assert np.allclose(p1, p2, atol=1e-12)


# -- classifier ----------------------------------------------------------


def test_classifier_outputs_distribution():
    model = small_model()
    rng = np.random.default_rng(4)
    h = rng.normal(size=(5, 4))
    p = classify_pair(model, h, (0, 3))
    assert abs(p.sum() - 1) <= 1e-12 and np.all(p > 0)
    q = classify_pair(model, h, (3, 0))
    assert not np.allclose(p, q)


def test_zero_classifier_is_uniform():
    model = small_model()
    for k in ("cls.W1", "cls.b1", "cls.W2", "cls.b2"):
        model.params[k][:] = 0
    p = classify_pair(model, np.random.default_rng(0).normal(size=(3, 4)), (0, 1))
    assert np.array_equal(p, [0.5, 0.5])


# -- focal loss ----------------------------------------------------------


def test_focal_examples():
    assert focal_loss([[0.0, 1.0]], [1], 1.0, 2.0)[0] == 0.0
    assert focal_loss([[0.5, 0.5]], [0], 1.0, 0.0)[0] == pytest.approx(math.log(2), abs=1e-12)
    assert focal_loss([[0.1, 0.9]], [1], 0.25, 2.0)[0] == pytest.approx(2.634013e-4, rel=1e-6)


def test_focal_clamps_zero_probability():
    v = focal_loss([[1.0, 0.0]], [1], 1.0, 2.0)[0]
    assert np.isfinite(v) and v == pytest.approx(-math.log(1e-12))


@settings(max_examples=100)
@given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6), st.floats(0.1, 3), st.floats(0, 5))
def test_focal_decreasing_in_pt(p, q, alpha, gamma):
    lo, hi = sorted((p, q))
    if hi - lo < 1e-6:
        return
    l_lo = focal_loss([[1 - lo, lo]], [1], alpha, gamma)[0]
    l_hi = focal_loss([[1 - hi, hi]], [1], alpha, gamma)[0]
    assert l_hi < l_lo


def test_class_weights_inverse_frequency():
    w = class_weight_vector([0, 0, 0, 1])
    assert np.allclose(w, [0.5, 1.5])
    assert w.mean() == pytest.approx(1.0)
    assert np.array_equal(class_weight_vector([0, 1], "none"), [1, 1])


# -- batches and gradients -----------------------------------------------


def test_duplicate_pair_batch_loss():
    rng = np.random.default_rng(5)
    model = small_model()
    x = rng.normal(size=(4, 5))
    adj = line_graph(4)
    _, l1, _ = model.forward(x, adj, [[0, 1]], [1])
    _, l2, _ = model.forward(x, adj, [[0, 1], [0, 1], [0, 1]], [1, 1, 1])
    assert l1 == pytest.approx(l2, rel=1e-14)


def test_eval_forward_bitwise_deterministic():
    rng = np.random.default_rng(6)
    model = small_model(dropout=0.3)
    x = rng.normal(size=(6, 5))
    adj = line_graph(6)
    a = model.forward(x, adj, [[0, 1], [4, 2]], [1, 0])
    b = model.forward(x, adj, [[0, 1], [4, 2]], [1, 0])
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]


def test_confident_correct_beats_confident_wrong():
    rng = np.random.default_rng(7)
    model = small_model()
    x = rng.normal(size=(4, 5))
    adj = line_graph(4)
    model.params["cls.b2"][:] = [-20.0, 20.0]
    _, right, _ = model.forward(x, adj, [[0, 1], [2, 3]], [1, 1])
    _, wrong, _ = model.forward(x, adj, [[0, 1], [2, 3]], [0, 0])
    assert right < wrong


def test_pair_outside_graph_rejected():
    model = small_model()
    with pytest.raises(IndexError):
        model.forward(np.zeros((3, 5)), line_graph(3), [[0, 3]], [1])


@pytest.mark.parametrize("seed", range(6))
def test_gradients_match_finite_differences(seed):
    res = gradcheck.check_instance(*gradcheck.random_instance(np.random.default_rng(100 + seed)))
    assert res.max_rel_error <= 1e-4, res


def test_gradients_with_dropout_masks():
    # a fixed dropout draw makes the forward pass deterministic, so finite differences apply
    rng = np.random.default_rng(8)
    model, x, adj, pairs, labels = gradcheck.random_instance(rng)
    model.config = ModelConfig(
        d_model=model.config.d_model, heads=model.config.heads, dropout=0.4, gamma=model.config.gamma
    )

    def fwd():
        return model.forward(x, adj, pairs, labels, rng=np.random.default_rng(99))

    _, _, cache = fwd()
    analytic = model.backward(cache)
    eps = 1e-5
    for name, P in model.params.items():
        flat = P.reshape(-1)
        for i in range(0, flat.size, max(1, flat.size // 7)):
            old = flat[i]
            flat[i] = old + eps
            lp = fwd()[1]
            flat[i] = old - eps
            lm = fwd()[1]
            flat[i] = old
            num = (lp - lm) / (2 * eps)
            assert abs(num - analytic[name].reshape(-1)[i]) <= 1e-6 + 1e-4 * abs(num), name


def test_zero_loss_batch_has_zero_gradients():
    rng = np.random.default_rng(9)
    model = small_model()
    model.class_weights = np.array([0.5, 1.5])
    model.params["cls.b2"][:] = [-1000.0, 1000.0]
    x = rng.normal(size=(5, 5))
    probs, loss, cache = model.forward(x, line_graph(5), [[0, 1], [3, 2]], [1, 1])
    assert np.all(probs[:, 1] == 1.0) and loss == 0.0
    for g in model.backward(cache).values():
        assert np.all(g == 0)


def test_gradients_scale_with_example_weight():
    rng = np.random.default_rng(10)
    model, x, adj, pairs, labels = gradcheck.random_instance(rng)
    _, _, c1 = model.forward(x, adj, pairs, labels)
    _, _, c2 = model.forward(x, adj, pairs, labels, weights=np.full(len(labels), 2.0))
    g1, g2 = model.backward(c1), model.backward(c2)
    for k in g1:
        assert np.allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_receptive_field_matches_full_graph(seed):
    rng = np.random.default_rng(200 + seed)
    n = 40
    m = 120
    adj = Adjacency.with_self_loops(n, rng.integers(0, n, m), rng.integers(0, n, m))
    model = small_model(d_in=6, seed=seed)
    x = rng.normal(size=(n, 6))
    pairs = rng.integers(0, n, (5, 2))
    labels = rng.integers(0, 2, 5)
    probs, loss, cache = model.forward(x, adj, pairs, labels)
    nodes, adjs, local = adj.receptive_field(pairs.ravel())
    sprobs, sloss, scache = model.forward(x[nodes], adjs, local[pairs], labels)
    assert len(nodes) <= n
    assert np.allclose(sprobs, probs, rtol=1e-12, atol=1e-14)
    assert sloss == pytest.approx(loss, rel=1e-12)
    g, sg = model.backward(cache), model.backward(scache)
    for k in g:
        assert np.allclose(sg[k], g[k], rtol=1e-9, atol=1e-13), k


# -- Adam ----------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    p = {"w": np.array([1.0, -2.0])}
    st_ = AdamState.zeros_like(p)
    adam_step(p, {"w": np.zeros(2)}, st_, 1e-3)
    assert np.array_equal(p["w"], [1.0, -2.0]) and st_.step == 1


def test_adam_first_step_is_lr_sized():
    g = np.array([0.3, -5.0, 1e-2])
    p = {"w": np.zeros(3)}
    adam_step(p, {"w": g}, AdamState.zeros_like(p), 1e-3)
    # bias-corrected first step: -lr * g / (|g| + eps)
    assert np.allclose(p["w"], -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    assert np.allclose(np.abs(p["w"]), 1e-3, rtol=1e-5)


def test_adam_rejects_non_finite():
    p = {"w": np.zeros(2)}
    with pytest.raises(NonFiniteGradientError, match="w"):
        adam_step(p, {"w": np.array([np.nan, 0.0])}, AdamState.zeros_like(p), 1e-3)


def test_adam_trajectory_deterministic():
    def run():
        rng = np.random.default_rng(0)
        p = {"w": rng.normal(size=4)}
        s = AdamState.zeros_like(p)
        for _ in range(20):
            adam_step(p, {"w": 2 * p["w"] + rng.normal(size=4)}, s, 1e-2)
        return p["w"]

    assert np.array_equal(run(), run())


def test_init_uniform_glorot_bounds():
    cfg = ModelConfig(d_model=8, heads=2)
    p = init_params(10, cfg, np.random.default_rng(0))
    assert np.all(np.abs(p["l1.W"]) <= np.sqrt(6 / (10 + 4)))
    assert np.all(p["cls.b1"] == 0)
    assert "l1.R" in p
    assert "l1.R" not in init_params(8, cfg, np.random.default_rng(0))
