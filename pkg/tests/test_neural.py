import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import gradcheck
import oracles
from eeg_gcnn import neural
from eeg_gcnn.errors import NonFiniteActivation, ShapeMismatch, SingularDegree
from eeg_gcnn.neural import (
    PARAM_COUNTS,
    Activation,
    AdamState,
    Architecture,
    GcnLayer,
    Mode,
    WindowGraph,
    adam_step,
    forward,
    gcn_forward,
    global_mean_pool,
    init_params,
    learning_rate,
    model_forward,
    normalize_adjacency,
    weighted_cross_entropy,
)

ARCHS = list(Architecture)
sym_adj = arrays(np.float64, (8, 8), elements=st.floats(0, 1)).map(
    lambda a: np.where(np.eye(8, dtype=bool), 0.0, (a + a.T) / 2)
)


def random_inputs(rng, batch=6):
    x, a, _ = gradcheck.random_batch(rng, batch)
    return x, normalize_adjacency(a)


# --- adjacency normalization ------------------------------------------------


def test_normalize_zero_is_identity():
    np.testing.assert_array_equal(normalize_adjacency(np.zeros((8, 8))), np.eye(8))


def test_normalize_regular_graph():
    a = np.ones((8, 8)) - np.eye(8)
    out = normalize_adjacency(a)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_normalize_matches_dense_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = rng.uniform(0, 1, (8, 8))
        a = (a + a.T) / 2
        np.testing.assert_allclose(normalize_adjacency(a), oracles.dense_normalize(a), atol=1e-12)


@given(sym_adj)
def test_normalize_invariants(a):
    n = normalize_adjacency(a)
    assert np.abs(n - n.T).max() <= 1e-12
    assert n.min() >= 0
    assert np.abs(np.linalg.eigvalsh(n)).max() <= 1 + 1e-9


def test_normalize_singular_degree():
    a = np.zeros((8, 8))
    a[0, 1] = a[1, 0] = -1.0
    with pytest.raises(SingularDegree):
        normalize_adjacency(a)


def test_normalize_batched():
    rng = np.random.default_rng(1)
    a = rng.uniform(0, 1, (3, 8, 8))
    stacked = normalize_adjacency(a)
    for k in range(3):
        np.testing.assert_array_equal(stacked[k], normalize_adjacency(a[k]))


# --- graph convolution ------------------------------------------------------


def test_gcn_identity():
    h = np.random.default_rng(2).standard_normal((8, 6))
    out = gcn_forward(h, GcnLayer(np.eye(6), Activation.IDENTITY), np.eye(8))
    np.testing.assert_array_equal(out, h)


def test_gcn_shape():
    rng = np.random.default_rng(3)
    out = gcn_forward(rng.standard_normal((8, 6)), GcnLayer(rng.standard_normal((6, 64)), Activation.RELU),
                      np.eye(8))
    assert out.shape == (8, 64)


def test_gcn_matches_triple_loop():
    rng = np.random.default_rng(4)
    for _ in range(10):
        h, w = rng.standard_normal((8, 6)), rng.standard_normal((6, 5))
        adj = normalize_adjacency(rng.uniform(0, 1, (8, 8)))
        ref = oracles.triple_loop_matmul(oracles.triple_loop_matmul(adj, h), w)
        np.testing.assert_allclose(gcn_forward(h, GcnLayer(w, Activation.IDENTITY), adj), ref, atol=1e-10)
        np.testing.assert_allclose(gcn_forward(h, GcnLayer(w, Activation.RELU), adj), np.maximum(ref, 0),
                                   atol=1e-10)


def test_gcn_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        gcn_forward(np.zeros((8, 5)), GcnLayer(np.zeros((6, 3)), Activation.RELU), np.eye(8))


# --- pooling ----------------------------------------------------------------


def test_pool_constant_rows():
    v = np.arange(5.0)
    np.testing.assert_array_equal(global_mean_pool(np.tile(v, (8, 1))), v)


def test_pool_one_hot():
    np.testing.assert_allclose(global_mean_pool(np.eye(8)), np.full(8, 1 / 8))


@given(st.permutations(range(8)))
def test_pool_permutation_invariant(perm):
    h = np.random.default_rng(5).standard_normal((8, 4))
    np.testing.assert_allclose(global_mean_pool(h[list(perm)]), global_mean_pool(h), atol=1e-15)


# --- model ------------------------------------------------------------------


@pytest.mark.parametrize("arch", ARCHS)
def test_param_counts(arch):
    params = init_params(arch)
    assert params.n_trainable() == PARAM_COUNTS[arch]
    assert params.embedding_dim == {"shallow": 128, "deep": 128, "fcnn": 32}[arch.value]


def test_layer_layouts():
    s, d, f = (init_params(a) for a in ARCHS)
    assert [l.weight.shape[1] for l in s.gcn_layers] == [64, 128] and s.linear_layers[-1][0].shape == (128, 2)
    assert [l.weight.shape[1] for l in d.gcn_layers] == [16, 16, 32, 64, 128]
    assert [w.shape for w, _ in d.linear_layers] == [(128, 30), (30, 20), (20, 2)]
    assert f.gcn_layers == [] and [w.shape for w, _ in f.linear_layers] == [(48, 64), (64, 32), (32, 2)]
    for p in (s, d):
        dims = [l.weight.shape for l in p.gcn_layers]
        assert all(a[1] == b[0] for a, b in zip(dims, dims[1:]))


@pytest.mark.parametrize("arch", ARCHS)
def test_init_glorot_and_seeding(arch):
    a, b, c = init_params(arch, seed=1), init_params(arch, seed=1), init_params(arch, seed=2)
    for name, t in a.tensors.items():
        np.testing.assert_array_equal(t, b.tensors[name])
        if name.endswith("weight"):
            n_in, n_out = t.shape
            assert np.abs(t).max() <= np.sqrt(6 / (n_in + n_out))
    assert any(not np.array_equal(t, c.tensors[n]) for n, t in a.tensors.items())


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(ARCHS), st.integers(0, 2**32 - 1))
def test_softmax_is_probability(arch, seed):
    rng = np.random.default_rng(seed)
    params = init_params(arch, seed=seed % 1000)
    x, adj = random_inputs(rng)
    p = neural.softmax(forward(params, 10 * x, adj).logits)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert np.all((p > 0) & (p < 1))


@pytest.mark.parametrize("arch", ARCHS)
def test_eval_deterministic(arch):
    params = init_params(arch)
    x, adj = random_inputs(np.random.default_rng(6))
    a, b = forward(params, x, adj), forward(params, x, adj)
    assert np.array_equal(a.logits, b.logits) and np.array_equal(a.embedding, b.embedding)


@pytest.mark.parametrize("arch", ARCHS)
def test_train_deterministic_given_rng(arch):
    params = init_params(arch)
    x, adj = random_inputs(np.random.default_rng(7))
    a = forward(params, x, adj, Mode.TRAIN, np.random.default_rng([0, 5]))
    b = forward(params, x, adj, Mode.TRAIN, np.random.default_rng([0, 5]))
    c = forward(params, x, adj, Mode.TRAIN, np.random.default_rng([0, 6]))
    assert np.array_equal(a.logits, b.logits)
    assert not np.array_equal(a.logits, c.logits)


@pytest.mark.parametrize("arch", [Architecture.SHALLOW, Architecture.DEEP])
def test_node_permutation_invariance(arch):
    rng = np.random.default_rng(8)
    params = init_params(arch, seed=3)
    x, a, _ = gradcheck.random_batch(rng, 3)
    for _ in range(5):
        perm = rng.permutation(8)
        base = forward(params, x, normalize_adjacency(a)).logits
        moved = forward(params, x[:, perm], normalize_adjacency(a[:, perm][:, :, perm])).logits
        np.testing.assert_allclose(moved, base, atol=1e-9)


def test_model_forward_single_window():
    params = init_params("shallow")
    rng = np.random.default_rng(9)
    x, a, _ = gradcheck.random_batch(rng, 1)
    logits, emb = model_forward(params, WindowGraph(x[0], a[0]))
    np.testing.assert_array_equal(logits, forward(params, x, normalize_adjacency(a)).logits[0])
    assert emb.shape == (128,)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_forward_rejects_non_finite():
    params = init_params("fcnn")
    x = np.zeros((2, 8, 6))
    x[0, 0, 0] = np.inf
    with pytest.raises(NonFiniteActivation):
        forward(params, x)


def test_forward_shape_checks():
    with pytest.raises(ShapeMismatch):
        forward(init_params("shallow"), np.zeros((2, 8, 6)))
    with pytest.raises(ShapeMismatch):
        forward(init_params("fcnn"), np.zeros((2, 8, 5)))


# --- loss -------------------------------------------------------------------


def test_loss_uniform_logits():
    assert weighted_cross_entropy(np.zeros((4, 2)), np.array([0, 1, 0, 1]), [1, 1]) == pytest.approx(
        np.log(2), abs=1e-9)


def test_loss_confident_decreasing():
    losses = [weighted_cross_entropy(np.array([[m, -m], [-m, m]]), np.array([0, 1]), [1, 1])
              for m in (0.5, 1, 2, 4, 8, 16)]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-12


def test_loss_weight_ratio():
    wrong_on_0 = weighted_cross_entropy(np.array([[-1.0, 1.0]]), np.array([0]), [2, 1])
    wrong_on_1 = weighted_cross_entropy(np.array([[1.0, -1.0]]), np.array([1]), [2, 1])
    assert wrong_on_0 / wrong_on_1 == pytest.approx(2.0, abs=1e-9)


def test_loss_per_class_balance_monte_carlo():
    # A label-uniform model scores every window identically; with inverse-count
    # weights both classes then contribute equally to the loss.
    rng = np.random.default_rng(10)
    labels = (rng.random(20000) < 0.88).astype(int)
    w = np.array([1 / (labels == 0).sum(), 1 / (labels == 1).sum()])
    logits = np.tile(rng.standard_normal(2), (labels.size, 1))
    nll = -neural.log_softmax(logits)[np.arange(labels.size), labels]
    contrib = [np.sum(w[c] * nll[labels == c]) / nll[labels == c].mean() for c in (0, 1)]
    assert contrib[0] == pytest.approx(contrib[1], rel=0.01)


# --- gradients --------------------------------------------------------------


@pytest.mark.parametrize("arch", ARCHS)
@pytest.mark.parametrize("mode", [Mode.TRAIN, Mode.EVAL])
def test_gradients_finite_difference(arch, mode):
    assert gradcheck.check_architecture(arch, seed=1, mode=mode) < 1e-4


@pytest.mark.parametrize("arch", ARCHS)
def test_gradients_with_fixed_dropout_mask(arch):
    assert gradcheck.check_architecture(arch, seed=2, dropout=0.3) < 1e-4


@pytest.mark.parametrize("arch", ARCHS)
def test_gradient_linearity(arch):
    params = init_params(arch, seed=4)
    x, adj = random_inputs(np.random.default_rng(11))
    labels = np.array([0, 1, 1, 0, 1, 0])
    res = forward(params, x, adj, Mode.TRAIN, np.random.default_rng(0))
    g1 = neural.backward(params, res, labels, [1.0, 0.5])
    g2 = neural.backward(params, res, labels, [2.0, 1.0])
    g0 = neural.backward(params, res, labels, [0.0, 0.0])
    for k in g1:
        np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=1e-15)
        assert np.all(g0[k] == 0)


# --- optimizer --------------------------------------------------------------


def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), 0.1)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step():
    g = np.array([0.3, -5.0, 1e-3])
    p = {"w": np.zeros(3)}
    adam_step(p, {"w": g}, AdamState(), 0.1)
    np.testing.assert_allclose(p["w"], -0.1 * np.sign(g), rtol=1e-4)


def test_adam_quadratic_convergence():
    target = 3.7
    p = {"x": np.array([0.0])}
    state = AdamState()
    for _ in range(500):
        adam_step(p, {"x": 2 * (p["x"] - target)}, state, 0.1)
    assert abs(p["x"][0] - target) < 1e-3


def test_learning_rate_schedule():
    assert learning_rate(0) == 0.1
    assert learning_rate(19) == 0.1
    assert learning_rate(20) == pytest.approx(0.01)
    assert learning_rate(45) == pytest.approx(0.001)


def test_params_astype_and_copy():
    p = init_params("shallow")
    q = p.astype(np.float32)
    assert all(t.dtype == np.float32 for t in q.tensors.values())
    c = p.copy()
    c.tensors["out.bias"] += 1
    assert np.all(p.tensors["out.bias"] == 0)
