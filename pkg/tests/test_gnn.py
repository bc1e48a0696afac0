import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings, strategies as st

from gnnoma import autograd as ag
from gnnoma.errors import NoKnownNodes, ShapeMismatch
from gnnoma.graph import GraphBatch, adjacency, feature_propagation, random_known_mask
from gnnoma.model import (GraphSample, LossWeights, ModalEstimate, ModelConfig, Variant,
                          collate, encode, estimate_loss, forward, init_model, loss_fn,
                          message_pass, predict, readout)
from gnnoma.nn import grad_check
from gnnoma.structural import ModalSolution
from gnnoma.training import (TrainConfig, evaluate_loss, fold_indices,
                             init_heads_from_targets, kfold_cv, train)

VARIANTS = list(Variant)
ABLATIONS = [dict(), dict(encoder=False), dict(message_passing=False)]


def random_graph(rng, n=5, m=6, k=2):
    edges = [(i, i + 1) for i in range(n - 1)] + [(0, n - 1)] + [(1, 3)] * (n > 4)
    edges = np.unique(np.sort(np.array(edges), axis=1), axis=0)
    shapes = rng.uniform(0.1, 1.0, size=(n, k))
    shapes /= shapes.max(axis=0)
    tgt = ModalSolution(np.sort(rng.uniform(5, 40, k)), rng.uniform(0.01, 0.03, k), shapes)
    return GraphSample(rng.uniform(0, 1, size=(n, m)), edges, tgt)


def small_cfg(m=6, k=2, **kw):
    return ModelConfig(psd_dim=m, hidden_dim=8, k=k, **kw)


def permute(sample, perm):
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    t = sample.targets
    return GraphSample(sample.features[perm], np.sort(inv[sample.edges], axis=1),
                       None if t is None else replace(t, mode_shapes=t.mode_shapes[perm]))


# encoder / message passing / readout

def test_identical_nodes_identical_encoding(rng):
    cfg = small_cfg()
    ps = init_model(cfg, rng)
    x = rng.uniform(size=(3, 6))
    x[2] = x[0]
    h = encode(cfg, ps, GraphBatch.from_graphs([(x, [[0, 1], [1, 2]])])).data
    np.testing.assert_array_equal(h[0], h[2])


def test_zero_parameters_zero_encoding(rng):
    cfg = small_cfg()
    ps = init_model(cfg, rng)
    for t in ps.values():
        t.data[:] = 0
    h = encode(cfg, ps, collate([random_graph(rng)])).data
    assert np.all(h == 0)


def test_sage_no_edges_uses_self_path_only(rng):
    cfg = small_cfg(encoder=False)
    ps = init_model(cfg, rng)
    b = GraphBatch.from_graphs([(rng.uniform(size=(4, 6)), np.zeros((0, 2), int))])
    h1 = encode(cfg, ps, b)
    before = message_pass(cfg, ps, b, h1).data
    for layer in range(cfg.mp_layers):
        ps[f"gnn.{layer}.nbr.weight"].data[:] = rng.standard_normal(
            ps[f"gnn.{layer}.nbr.weight"].shape)
    np.testing.assert_array_equal(message_pass(cfg, ps, b, h1).data, before)


def test_sage_two_node_hand_value(rng):
    cfg = ModelConfig(psd_dim=2, hidden_dim=2, mp_layers=1, encoder=False)
    ps = init_model(cfg, rng)
    ps["gnn.0.self.weight"].data[:] = [[1.0, 2.0], [0.0, 1.0]]
    ps["gnn.0.nbr.weight"].data[:] = [[0.5, 0.0], [0.0, 0.5]]
    ps["gnn.0.self.bias"].data[:] = [[0.0, -1.0]]
    b = GraphBatch.from_graphs([(np.eye(2), [[0, 1]])])
    h3 = message_pass(cfg, ps, b, encode(cfg, ps, b)).data
    np.testing.assert_allclose(h3, [[1.0, 1.5], [0.5, 0.0]], rtol=1e-14)


def test_single_node_readout(rng):
    b = GraphBatch.from_graphs([(np.ones((1, 3)), np.zeros((0, 2), int))])
    h = ag.Tensor(rng.standard_normal((1, 4)))
    np.testing.assert_array_equal(readout(b, h).data, h.data)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("ablate", ABLATIONS)
def test_permutation_equivariance(variant, ablate, rng):
    cfg = small_cfg(variant=variant, **ablate)
    ps = init_model(cfg, rng)
    g = random_graph(rng, n=7)
    perm = rng.permutation(7)
    a = forward(cfg, ps, collate([g]))
    p = forward(cfg, ps, collate([permute(g, perm)]))
    np.testing.assert_allclose(p.mode_shapes.data, a.mode_shapes.data[perm], rtol=1e-10)
    np.testing.assert_allclose(p.frequencies.data, a.frequencies.data, rtol=1e-10)
    np.testing.assert_allclose(p.damping_ratios.data, a.damping_ratios.data, rtol=1e-10)


@pytest.mark.parametrize("variant", VARIANTS)
def test_batch_equals_single(variant, rng):
    cfg = small_cfg(variant=variant)
    ps = init_model(cfg, rng)
    gs = [random_graph(rng, n=n) for n in (4, 6, 5)]
    batched = predict(cfg, ps, gs)
    for g, b in zip(gs, batched):
        s = predict(cfg, ps, [g])[0]
        np.testing.assert_allclose(b.frequencies, s.frequencies, rtol=1e-12)
        np.testing.assert_allclose(b.damping_ratios, s.damping_ratios, rtol=1e-12)
        np.testing.assert_allclose(b.mode_shapes, s.mode_shapes, rtol=1e-12)


def test_copies_give_identical_estimates(rng):
    cfg = small_cfg()
    ps = init_model(cfg, rng)
    g = random_graph(rng)
    est = predict(cfg, ps, [g] * 4)
    for e in est[1:]:
        np.testing.assert_array_equal(e.frequencies, est[0].frequencies)
        np.testing.assert_array_equal(e.mode_shapes, est[0].mode_shapes)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(VARIANTS))
def test_output_ranges(seed, variant):
    r = np.random.default_rng(seed)
    cfg = small_cfg(variant=variant)
    e = predict(cfg, init_model(cfg, r), [random_graph(r)])[0]
    assert np.all(e.frequencies > 0) and np.all(e.damping_ratios > 0)
    assert np.all((e.mode_shapes >= 0) & (e.mode_shapes <= 1))


def test_feature_width_checked(rng):
    cfg = small_cfg(m=7)
    with pytest.raises(ShapeMismatch):
        predict(cfg, init_model(cfg, rng), [random_graph(rng, m=6)])


# loss

def test_loss_zero_at_target(rng):
    g = random_graph(rng)
    t = g.targets
    assert estimate_loss(ModalEstimate(t.frequencies, t.damping_ratios, t.mode_shapes), t) == 0


def test_loss_hand_value():
    tgt = ModalSolution(np.array([10.0]), np.array([0.02]), np.array([[1.0]]))
    est = ModalEstimate(np.array([11.0]), np.array([0.018]), np.array([[0.5]]))
    assert estimate_loss(est, tgt, LossWeights(2, 1, 1)) == pytest.approx(0.52, rel=1e-12)
    assert estimate_loss(est, tgt, LossWeights(6, 3, 3)) == pytest.approx(1.56, rel=1e-12)


def test_tape_loss_matches_array_loss(rng):
    cfg = small_cfg()
    ps = init_model(cfg, rng)
    gs = [random_graph(rng, n=n) for n in (4, 6)]
    out = forward(cfg, ps, collate(gs))
    total, _ = loss_fn(out, [g.targets for g in gs])
    per = [estimate_loss(e, g.targets) for e, g in zip(out.estimates(), gs)]
    assert float(total.data) == pytest.approx(np.mean(per), rel=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("ablate", ABLATIONS)
def test_full_model_gradient(variant, ablate, rng):
    cfg = small_cfg(variant=variant, **ablate)
    ps = init_model(cfg, rng)
    gs = [random_graph(rng), random_graph(rng, n=6)]
    # heads start at the target means, as in training, so the loss is O(1)
    init_heads_from_targets(cfg, ps, gs)
    batch = collate(gs)
    targets = [g.targets for g in gs]
    err = grad_check(lambda p: loss_fn(forward(cfg, p, batch), targets)[0], ps,
                     probe_count=80, rng=np.random.default_rng(0))
    assert err < 1e-4


# feature propagation

def test_fp_all_known_is_identity(rng):
    x = rng.uniform(size=(4, 3))
    np.testing.assert_array_equal(feature_propagation([[0, 1], [1, 2], [2, 3]], x,
                                                      np.ones(4, bool)), x)


def test_fp_two_node_path():
    v = np.array([0.3, 0.7, 1.0])
    x = np.vstack([v, np.zeros(3)])
    out = feature_propagation([[0, 1]], x, np.array([True, False]), max_iters=1)
    np.testing.assert_array_equal(out[1], v)


def test_fp_matches_harmonic_solve(rng):
    n = 10
    edges = np.array([(i, i + 1) for i in range(n - 1)] + [(0, 5), (2, 7), (3, 9), (1, 8)])
    x = rng.uniform(size=(n, 4))
    known = np.zeros(n, bool)
    known[[0, 4, 9]] = True
    A = adjacency(n, edges).toarray()
    d = A.sum(axis=1)
    P = A / np.sqrt(np.outer(d, d))
    u, k = ~known, known
    xu = np.linalg.solve(np.eye(u.sum()) - P[np.ix_(u, u)], P[np.ix_(u, k)] @ x[k])
    out = feature_propagation(edges, x, known, max_iters=2000, tol=1e-12)
    assert np.abs(out[u] - xu).max() < 1e-4
    np.testing.assert_array_equal(out[k], x[k])


def test_fp_requires_known_node(rng):
    with pytest.raises(NoKnownNodes):
        feature_propagation([[0, 1]], np.ones((2, 2)), np.zeros(2, bool))


def test_fp_unreached_component_warns():
    x = np.ones((4, 2))
    with pytest.warns(RuntimeWarning):
        out = feature_propagation([[0, 1], [2, 3]], x, np.array([True, False, False, False]))
    assert np.all(out[2:] == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 40), st.floats(0, 0.95), st.integers(0, 2**31))
def test_known_mask_keeps_component_anchor(n, ratio, seed):
    edges = np.array([(i, i + 1) for i in range(n - 1) if i != n // 2])
    known = random_known_mask(n, ratio, np.random.default_rng(seed), edges)
    assert known[: n // 2 + 1].any() and known[n // 2 + 1:].any()
    assert (~known).sum() <= round(ratio * n)


# training

def test_singleton_overfit(rng):
    g = random_graph(rng)
    _, hist = train([g], small_cfg(), TrainConfig(epochs=200, batch_size=1, lr=1e-2))
    assert len(hist) == 200 and np.all(np.isfinite(hist.train_total))
    assert hist.train_total[-1] <= hist.train_total[0] / 100


def test_training_deterministic(rng):
    gs = [random_graph(rng) for _ in range(6)]
    a = train(gs, small_cfg(), TrainConfig(epochs=5, batch_size=4, seed=3))
    b = train(gs, small_cfg(), TrainConfig(epochs=5, batch_size=4, seed=3))
    assert a[1].train_total == b[1].train_total
    for n in a[0]:
        assert np.array_equal(a[0][n].data, b[0][n].data)


def test_validation_stopping_restores_best(rng):
    gs = [random_graph(rng) for _ in range(4)]
    val = [random_graph(rng) for _ in range(2)]
    cfg = small_cfg()
    params, hist = train(gs, cfg, TrainConfig(epochs=300, batch_size=4, lr=3e-2, patience=5),
                         validation=val)
    assert len(hist) < 300
    assert len(hist) - 1 - int(np.argmin(hist.val_total)) == 5
    assert evaluate_loss(cfg, params, val, LossWeights()).total == pytest.approx(
        min(hist.val_total), rel=1e-12)


def test_fold_sizes():
    f = fold_indices(400, 5)
    assert all(len(v) == 80 for v in f)
    assert sorted(np.concatenate(f).tolist()) == list(range(400))
    f2 = fold_indices(4, 2)
    assert [v.tolist() for v in f2] == [[0, 1], [2, 3]]


def test_kfold_summary_mean(rng):
    gs = [random_graph(rng) for _ in range(4)]
    res = kfold_cv(gs, small_cfg(), TrainConfig(epochs=2, batch_size=2), folds=2)
    assert [(f.n_train, f.n_val) for f in res.folds] == [(2, 2), (2, 2)]
    assert res.summary()["val_loss_mean"] == pytest.approx(res.val_losses.mean(), abs=1e-12)
