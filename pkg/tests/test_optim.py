import numpy as np
import pytest

from agfn.data import ClusterSpec, LabeledDataset, make_clusters
from agfn.graph import PoissonScale, active_mask, cosine_similarity_matrix
from agfn.model import backward, extract_features, forward, init_params, one_hot
from agfn.numerics import rng_stream
from agfn.optim import (
    TrainConfig,
    accuracy,
    estimate_grad_lambda,
    estimate_grad_weights,
    evaluate,
    train,
    train_epoch,
    update_scale,
    update_weights,
)
from agfn.oracle import exact_expectation


@pytest.fixture
def tiny():
    r = np.random.default_rng(11)
    params = init_params(4, 3, hidden=(5,), feature_dim=4, seed=2)
    x = r.standard_normal((3, 4))
    y = one_hot([0, 1, 2], 3)
    return x, y, params


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_degenerate_p_gives_exact_gradient(tiny):
    x, y, p = tiny
    prob = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    _, cache = forward(x, y, p, prob)
    exact, _ = backward(cache)
    for s in (1, 3, 7):
        est, _, density = estimate_grad_weights(x, y, p, s, rng_stream(s), p=prob)
        assert density == pytest.approx(2 / 3)
        for k in exact:
            np.testing.assert_allclose(est[k], exact[k], rtol=1e-12, atol=1e-15)


def test_weight_estimate_matches_enumeration(tiny):
    x, y, p = tiny
    rep = exact_expectation(x, y, p)
    assert rep.graph_count == 8
    est, mean_loss, _ = estimate_grad_weights(x, y, p, 10_000, rng_stream(99, 1))
    for k, exact in rep.expected_grads.items():
        assert _rel(est[k], exact) <= 0.02, k
    assert mean_loss == pytest.approx(rep.expected_loss, rel=0.02)


def test_lambda_estimate_matches_enumeration(tiny):
    x, y, p = tiny
    rep = exact_expectation(x, y, p)
    sim = cosine_similarity_matrix(extract_features(x, p))
    exact = rep.expected_grad_a * active_mask(sim, p.scale)
    est, sim2 = estimate_grad_lambda(x, y, p, 10_000, rng_stream(99, 2))
    np.testing.assert_array_equal(sim, sim2)
    assert _rel(est, exact) <= 0.02
    np.testing.assert_array_equal(est, est.T)
    assert not np.diag(est).any()


def test_lambda_zero_when_graph_has_no_influence(tiny):
    x, y, p = tiny
    p.gcn_w[:] = 0
    est, _ = estimate_grad_lambda(x, y, p, 20, rng_stream(0))
    assert not est.any()


def test_lambda_masked_where_clamped(tiny):
    x, y, p = tiny
    p.scale = PoissonScale(1.0, -0.999)  # most pairs clamped
    sim = cosine_similarity_matrix(extract_features(x, p))
    est, _ = estimate_grad_lambda(x, y, p, 20, rng_stream(0))
    assert not est[active_mask(sim, p.scale) == 0].any()


def test_exact_fit_zero_estimates():
    p = init_params(3, 2, hidden=(4,), feature_dim=3, seed=0)
    p.cls_w[:] = 0
    p.cls_b[:] = [800.0, 0.0]
    x = np.random.default_rng(0).standard_normal((3, 3))
    y = one_hot([0, 0, 0], 2)
    grads, value, _ = estimate_grad_weights(x, y, p, 5, rng_stream(0))
    assert value == 0.0 and all(not g.any() for g in grads.values())


def test_variance_scales_inverse_in_samples(tiny):
    x, y, p = tiny
    sizes = [1, 4, 16, 64]
    variances = []
    for s in sizes:
        draws = [estimate_grad_weights(x, y, p, s, rng_stream(7, s, r))[0]["gcn.w"] for r in range(200)]
        variances.append(np.var(np.stack(draws), axis=0).sum())
    slope = np.polyfit(np.log(sizes), np.log(variances), 1)[0]
    assert -1.2 <= slope <= -0.8


def test_update_scale_examples():
    s = PoissonScale(1.0, 0.5)
    sim = np.random.default_rng(0).uniform(-1, 1, (4, 4))
    assert update_scale(s, sim, np.zeros((4, 4)), 0.001) == s

    g = np.random.default_rng(1).standard_normal((4, 4))
    c = 0.3
    new = update_scale(s, np.full((4, 4), c), g, 0.001)
    assert (new.alpha - s.alpha) == pytest.approx(c * (new.beta - s.beta), rel=1e-12)

    mean_g = 0.25
    new = update_scale(s, sim, np.full((4, 4), mean_g), 0.001)
    assert new.beta == pytest.approx(0.5 - 0.001 * mean_g, abs=1e-15)
    assert new.beta < s.beta


def test_update_weights_examples(tiny):
    _, _, p = tiny
    zero = {k: np.zeros_like(v) for k, v in p.named_arrays().items()}
    same = update_weights(p, zero, 0.01)
    for k, v in p.named_arrays().items():
        np.testing.assert_array_equal(same.named_arrays()[k], v)

    ones = {k: np.ones_like(v) for k, v in p.named_arrays().items()}
    step = update_weights(p, ones, 0.01)
    assert step.cls_b[0] == p.cls_b[0] - 0.01
    assert step.scale == p.scale

    g = {k: np.random.default_rng(3).standard_normal(v.shape) for k, v in p.named_arrays().items()}
    full = update_weights(p, g, 0.02)
    halves = update_weights(update_weights(p, g, 0.01), g, 0.01)
    for k in g:
        np.testing.assert_allclose(halves.named_arrays()[k], full.named_arrays()[k], atol=1e-15)


def _dataset(seed=0, per_class=30):
    spec = ClusterSpec(np.array([[2.0, 0, 0], [0, 2.0, 0]]), 0.7, per_class, seed)
    return make_clusters(spec)


def test_zero_epochs_unchanged():
    ds = _dataset()
    p = init_params(3, 2, hidden=(8,), feature_dim=4, seed=0)
    q, hist = train(ds, p, TrainConfig(epochs=0, batch_size=16))
    assert q is p and hist == []


def test_none_policy_is_plain_mlp_trainer():
    ds = _dataset()
    cfg = TrainConfig(epochs=3, pretrain_epochs=0, batch_size=16, gamma1=0.3, graph_policy="none", seed=4)
    p0 = init_params(3, 2, hidden=(8,), feature_dim=4, seed=0)
    trained, _ = train(ds, p0, cfg)

    # independent reference loop: same shuffles, no graph at all
    y = one_hot(ds.observed_labels, 2)
    ref = p0
    for epoch in range(3):
        order = rng_stream(4, 1, epoch).permutation(len(ds))
        for start in range(0, len(ds), 16):
            idx = order[start:start + 16]
            _, cache = forward(ds.inputs[idx], y[idx], ref)
            grads, _ = backward(cache)
            ref = ref.with_arrays({k: v - 0.3 * grads[k] for k, v in ref.named_arrays().items()})
    for k, v in ref.named_arrays().items():
        assert trained.named_arrays()[k].tobytes() == v.tobytes()


def test_pretrain_epochs_run_baseline():
    ds = _dataset()
    cfg = TrainConfig(epochs=3, pretrain_epochs=2, batch_size=16, gamma1=0.3, seed=1)
    _, hist = train(ds, init_params(3, 2, hidden=(8,), feature_dim=4, seed=0), cfg)
    assert [m.policy for m in hist] == ["none", "none", "poisson"]
    assert hist[0].density == 0.0 and hist[2].density > 0


def test_training_is_bitwise_deterministic():
    ds = _dataset()
    cfg = TrainConfig(epochs=3, pretrain_epochs=1, batch_size=16, gamma1=0.3, gamma2=5.0, seed=9)
    runs = [train(ds, init_params(3, 2, hidden=(8,), feature_dim=4, seed=0), cfg) for _ in range(2)]
    a, b = (r[0] for r in runs)
    assert a.scale == b.scale
    assert a.scale.alpha != 1.0  # the scale block actually moved
    for k, v in a.named_arrays().items():
        assert b.named_arrays()[k].tobytes() == v.tobytes()
    assert [s.loss for m in runs[0][1] for s in m.steps] == [s.loss for m in runs[1][1] for s in m.steps]


def test_short_batch_skipped_under_poisson(caplog):
    ds = _dataset(per_class=8)  # 16 samples, batch 5 -> last batch of 1
    cfg = TrainConfig(epochs=1, pretrain_epochs=0, batch_size=5, seed=0)
    with caplog.at_level("WARNING"):
        _, m = train_epoch(ds, init_params(3, 2, hidden=(4,), feature_dim=3, seed=0), cfg, 0)
    assert len(m.steps) == 3
    assert "skipping" in caplog.text


def test_step_reports(tiny):
    ds = _dataset()
    cfg = TrainConfig(epochs=1, pretrain_epochs=0, batch_size=20, seed=0)
    _, m = train_epoch(ds, init_params(3, 2, hidden=(4,), feature_dim=3, seed=0), cfg, 0)
    for rep in m.steps:
        assert 0.0 <= rep.density <= 1.0
        assert rep.grad_norm > 0 and rep.grad_lambda_norm >= 0


def _eval_set(labels, c):
    x = np.random.default_rng(0).standard_normal((len(labels), 3))
    return LabeledDataset(x, labels, labels, c, "test")


def test_evaluate_perfect_and_uniform_predictors():
    labels = np.array([0, 1, 1, 0, 1, 0])
    ds = _eval_set(labels, 2)
    p = init_params(3, 2, hidden=(4,), feature_dim=3, seed=0)
    p.cls_w[:] = 0
    cfg = TrainConfig(graph_policy="none", batch_size=4)
    acc, loss = evaluate(ds, p, cfg)
    assert acc == 0.5  # all ties resolve to class 0
    assert loss == pytest.approx(0.5)

    # perfect predictor: labels encoded in the first input coordinate
    x = np.zeros((6, 1))
    x[:, 0] = np.where(labels == 1, 1.0, -1.0)
    ds = LabeledDataset(x, labels, labels, 2, "test")
    perfect = init_params(1, 2, hidden=(), feature_dim=1, seed=0)
    perfect.extractor = [(np.ones((1, 1)), np.zeros(1))]
    perfect.gcn_w = np.ones((1, 1))
    perfect.cls_w = np.array([[-50.0, 50.0]])
    assert evaluate(ds, perfect, cfg)[0] == 1.0


def test_evaluate_expected_mode_deterministic():
    ds = _dataset()
    ds.split = "test"
    p = init_params(3, 2, hidden=(4,), feature_dim=3, seed=0)
    cfg = TrainConfig(batch_size=16)
    assert evaluate(ds, p, cfg) == evaluate(ds, p, cfg)
    sampled = TrainConfig(batch_size=16, eval_mode="sampled", eval_seed=3)
    assert evaluate(ds, p, sampled) == evaluate(ds, p, sampled)


def test_evaluate_rejects_empty():
    ds = LabeledDataset(np.zeros((0, 3)), [], [], 2)
    with pytest.raises(ValueError):
        evaluate(ds, init_params(3, 2, hidden=(4,), feature_dim=3), TrainConfig())


def test_accuracy_invariant_to_monotone_rescaling():
    r = np.random.default_rng(5)
    pred = r.uniform(size=(50, 4))
    labels = r.integers(0, 4, 50)
    base = accuracy(pred, labels)
    for f in (np.exp, lambda v: 3 * v + 1, np.sqrt, lambda v: np.log1p(v) ** 3):
        assert accuracy(f(pred), labels) == base


@pytest.mark.parametrize("kwargs", [
    {"samples": 0}, {"gamma1": 0}, {"gamma2": -1}, {"batch_size": 1},
    {"graph_policy": "knn"}, {"eval_mode": "mean"}, {"tau": 1.5},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)
