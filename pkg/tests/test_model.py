import numpy as np
import pytest

from agfn.gcn import normalized_adjacency
from agfn.graph import PoissonScale
from agfn.model import (
    CheckpointError,
    StaleCacheError,
    backward,
    classify,
    extract_features,
    forward,
    init_params,
    load_checkpoint,
    loss,
    one_hot,
    predict,
    save_checkpoint,
)
from agfn.oracle import finite_difference
from agfn.optim import update_weights
from agfn.validation import gradcheck_instance, relative_error

from conftest import sym_binary, sym_real


def test_extractor_zero_weights(small_problem):
    x, _, p = small_problem
    zero = [(np.zeros_like(w), np.zeros_like(b)) for w, b in p.extractor]
    assert not extract_features(x, zero).any()


def test_extractor_identity_layer(rng):
    x = rng.standard_normal((5, 3))
    np.testing.assert_array_equal(extract_features(x, [(np.eye(3), np.zeros(3))]), x)


def test_extractor_deterministic(small_problem):
    x, _, _ = small_problem
    a = extract_features(x, init_params(5, 3, hidden=(6,), feature_dim=4, seed=3))
    b = extract_features(x, init_params(5, 3, hidden=(6,), feature_dim=4, seed=3))
    assert a.tobytes() == b.tobytes()


def test_classify_examples(rng):
    xh = rng.standard_normal((4, 3))
    np.testing.assert_allclose(classify(xh, np.zeros((3, 5)), np.zeros(5)), np.full((4, 5), 0.2))
    out = classify(np.ones((1, 1)), np.zeros((1, 2)), np.log([1.0, 3.0]))
    np.testing.assert_allclose(out, [[0.25, 0.75]])
    w, b = rng.standard_normal((3, 4)), rng.standard_normal(4)
    perm = [2, 0, 3, 1]
    np.testing.assert_allclose(classify(xh, w[:, perm], b[perm]), classify(xh, w, b)[:, perm], atol=1e-15)


def test_loss_examples():
    y = one_hot([0, 1, 1], 2)
    assert loss(y, y) == 0.0
    assert loss([[0.5, 0.5]], [[1.0, 0.0]]) == pytest.approx(0.5)
    pred = np.array([[0.2, 0.8], [0.6, 0.4], [0.5, 0.5]])
    assert loss(pred[[2, 0, 1]], y[[2, 0, 1]]) == pytest.approx(loss(pred, y))
    with pytest.raises(ValueError, match="one-hot"):
        loss(pred, [[1, 1], [0, 1], [1, 0]])


def test_zero_graph_equals_baseline(small_problem):
    x, y, p = small_problem
    base, _ = forward(x, y, p, None)
    zero, _ = forward(x, y, p, np.zeros((4, 4)))
    assert base == zero
    feats = extract_features(x, p)
    manual = classify(feats @ p.gcn_w, p.cls_w, p.cls_b)
    assert np.array_equal(predict(x, p, np.zeros((4, 4))), manual)


def test_duplicates_get_identical_rows(small_problem):
    x, y, p = small_problem
    x = x.copy()
    x[1] = x[0]
    a = np.zeros((4, 4))
    a[0, 1] = a[1, 0] = 1
    _, cache = forward(x, y, p, a)
    np.testing.assert_allclose(cache.xhat[0], cache.xhat[1], atol=1e-15)


def test_exact_fit_gives_zero_gradient():
    # classifier bias drives the softmax to the targets exactly in float64
    p = init_params(3, 2, hidden=(4,), feature_dim=3, seed=0)
    p.cls_w[:] = 0
    p.cls_b[:] = [800.0, 0.0]
    x = np.random.default_rng(0).standard_normal((3, 3))
    y = one_hot([0, 0, 0], 2)
    value, cache = forward(x, y, p, sym_binary(np.random.default_rng(1), 3))
    grads, ga = backward(cache)
    assert value == 0.0
    assert all(not g.any() for g in grads.values())
    assert not ga.any()


def test_stale_cache_rejected(small_problem):
    x, y, p = small_problem
    _, cache = forward(x, y, p, None)
    grads, _ = backward(cache)
    newer = update_weights(p, grads, 0.1)
    with pytest.raises(StaleCacheError):
        backward(cache, newer)
    backward(cache, p)


@pytest.mark.parametrize("seed", range(8))
def test_full_backward_finite_differences(seed):
    errors = gradcheck_instance(1000 + seed)
    assert max(errors.values()) <= 1e-5, errors


def test_binary_graph_weights_fd(small_problem):
    x, y, p = small_problem
    a = sym_binary(np.random.default_rng(3), 4)
    _, cache = forward(x, y, p, a)
    grads, ga = backward(cache)
    arrays = p.named_arrays()
    for name in ("gcn.w", "extractor.0.w"):
        def f(v):
            new = dict(arrays)
            new[name] = v
            return forward(x, y, p.with_arrays(new), a)[0]
        assert relative_error(finite_difference(f, arrays[name]), grads[name]) <= 1e-5
    assert np.array_equal(ga, ga.T)


def test_checkpoint_roundtrip(tmp_path, small_problem):
    _, _, p = small_problem
    p.scale = PoissonScale(1.2345678901234567, -0.1)
    save_checkpoint(tmp_path / "c.npz", p, "abc123")
    q, h = load_checkpoint(tmp_path / "c.npz")
    assert h == "abc123"
    assert q.scale.alpha == p.scale.alpha and q.scale.beta == p.scale.beta
    for k, v in p.named_arrays().items():
        assert q.named_arrays()[k].tobytes() == v.tobytes()


def test_corrupted_checkpoint(tmp_path, small_problem):
    _, _, p = small_problem
    path = tmp_path / "c.npz"
    save_checkpoint(path, p)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    (tmp_path / "junk.npz").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.npz")
