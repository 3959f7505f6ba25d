import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fwl.errors import (BadDimension, DimensionMismatch, EmptyTrainingSet,
                        InvalidInput, KTooLarge)
from fwl.gp import (KernelSpec, KernelTerm, Task, clustered_fit, clustered_predict,
                    gp_fit, gp_predict, kernel_eval, kmeans, load_teacher,
                    rbf_white, save_teacher, softmax, to_soft)
from fwl.numerics import Rng

RBF = KernelSpec((KernelTerm("rbf", length_scale=1.0),))
KERNELS = {
    "rbf": rbf_white(1.0, 0.01),
    "matern32": KernelSpec((KernelTerm("matern32"), KernelTerm("white", noise_level=0.01))),
    "linear": KernelSpec((KernelTerm("linear", sigma0=0.5), KernelTerm("white", noise_level=0.05))),
    "composite": KernelSpec((KernelTerm("matern32", length_scale=0.7), KernelTerm("linear"),
                             KernelTerm("rbf", length_scale=1.3), KernelTerm("white", noise_level=0.02))),
}


def brute_force_kernel(spec, a, b):
    out = 0.0
    r = np.linalg.norm(a - b)
    for t in spec.terms:
        if t.kind == "rbf":
            out += np.exp(-r ** 2 / (2 * t.length_scale ** 2))
        elif t.kind == "matern32":
            out += (1 + np.sqrt(3) * r / t.length_scale) * np.exp(-np.sqrt(3) * r / t.length_scale)
        elif t.kind == "linear":
            out += t.sigma0 ** 2 + a @ b
    return out


def brute_force_gp(spec, x, y, xq, jitter):
    n = len(x)
    K = np.array([[brute_force_kernel(spec, x[i], x[j]) for j in range(n)] for i in range(n)])
    K += (spec.noise + jitter) * np.eye(n)
    Kinv = np.linalg.inv(K)
    ks = np.array([brute_force_kernel(spec, xi, xq) for xi in x])
    return ks @ Kinv @ y, brute_force_kernel(spec, xq, xq) - ks @ Kinv @ ks


def test_rbf_zero_distance():
    assert kernel_eval(RBF, [0.3, -1.0], [0.3, -1.0]) == 1.0


def test_matern_unit_distance():
    spec = KernelSpec((KernelTerm("matern32"),))
    # (1 + sqrt 3) exp(-sqrt 3), evaluated with mpmath at 30 digits
    assert kernel_eval(spec, [0.0], [1.0]) == pytest.approx(0.483357724596507650595, abs=1e-15)


def test_linear_dot_product():
    spec = KernelSpec((KernelTerm("linear", sigma0=0.0),))
    assert kernel_eval(spec, [1.0, 2.0], [1.0, 2.0]) == 5.0


def test_white_only_on_training_pairs():
    spec = rbf_white(1.0, 0.25)
    assert kernel_eval(spec, [0.0], [0.0]) == 1.0
    assert kernel_eval(spec, [0.0], [0.0], training_pair=True) == 1.25


def test_kernel_eval_dim_mismatch():
    with pytest.raises(DimensionMismatch):
        kernel_eval(RBF, [0.0], [0.0, 1.0])


def test_kernel_needs_non_white_term():
    with pytest.raises(InvalidInput):
        KernelSpec((KernelTerm("white", noise_level=0.1),))
    with pytest.raises(InvalidInput):
        KernelTerm("rbf", length_scale=0.0)


def test_kernel_parse():
    spec = KernelSpec.parse("matern32:l=2+linear+white:0.05")
    assert [t.kind for t in spec.terms] == ["matern32", "linear", "white"]
    assert spec.terms[0].length_scale == 2.0
    assert spec.noise == 0.05


def test_one_point_gp_closed_form():
    model = gp_fit(rbf_white(1.0, 0.01), [[0.0]], [[1.0]])
    # 1 / (1 + 0.01 + jitter)
    assert model.alpha[0, 0] == pytest.approx(1 / 1.01, abs=1e-7)
    mean, var = gp_predict(model, [0.0])
    assert mean[0] == pytest.approx(0.990099009900990099, abs=1e-7)
    assert var == pytest.approx(0.009900990099009901, abs=1e-7)


def test_empty_training_set():
    with pytest.raises(EmptyTrainingSet):
        gp_fit(RBF, np.zeros((0, 1)), np.zeros((0, 1)))


def test_nan_targets_rejected():
    with pytest.raises(InvalidInput):
        gp_fit(RBF, [[0.0], [1.0]], [[np.nan], [1.0]])


def test_prior_reversion_far_away():
    model = gp_fit(rbf_white(1.0, 0.01), [[0.0], [1.0]], [[1.0], [-2.0]])
    mean, var = gp_predict(model, [1e3])
    assert abs(mean[0]) < 1e-12
    assert var == pytest.approx(1.0, abs=1e-12)


def test_predict_dim_mismatch():
    model = gp_fit(RBF, [[0.0, 1.0]], [[1.0]])
    with pytest.raises(DimensionMismatch):
        gp_predict(model, [0.0])


def test_interpolation_without_noise():
    gen = np.random.default_rng(3)
    x = gen.uniform(-3, 3, (12, 2))
    y = np.sin(x[:, :1]) + x[:, 1:]
    model = gp_fit(RBF, x, y, jitter=1e-10)
    mean, _ = model.predict_many(x)
    assert np.max(np.abs(mean - y)) < 1e-5


@settings(max_examples=60, deadline=None)
@given(kernel=st.sampled_from(sorted(KERNELS)), n=st.integers(1, 8), d=st.integers(1, 3),
       seed=st.integers(0, 2**32 - 1))
def test_matches_dense_inverse_oracle(kernel, n, d, seed):
    spec = KERNELS[kernel]
    gen = np.random.default_rng(seed)
    x = gen.uniform(-2, 2, (n, d))
    y = gen.standard_normal(n)
    xq = gen.uniform(-2.5, 2.5, d)
    model = gp_fit(spec, x, y[:, None], jitter=1e-8)
    mean, var = gp_predict(model, xq)
    m_ref, v_ref = brute_force_gp(spec, x, y, xq, 1e-8)
    assert abs(mean[0] - m_ref) < 1e-7
    assert abs(var - max(v_ref, 0.0)) < 1e-7


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 15), seed=st.integers(0, 2**32 - 1))
def test_variance_bounded_by_prior(n, seed):
    gen = np.random.default_rng(seed)
    spec = KERNELS["composite"]
    x = gen.uniform(-2, 2, (n, 2))
    model = gp_fit(spec, x, gen.standard_normal((n, 1)))
    q = gen.uniform(-4, 4, (30, 2))
    _, var = model.predict_many(q)
    prior = np.array([kernel_eval(spec, r, r) for r in q])
    assert np.all(var >= 0) and np.all(var <= prior + 1e-8)


def test_multi_output_shares_factor():
    gen = np.random.default_rng(0)
    x = gen.standard_normal((6, 2))
    y = gen.standard_normal((6, 3))
    multi = gp_fit(RBF, x, y)
    for j in range(3):
        single = gp_fit(RBF, x, y[:, j:j + 1])
        m1, v1 = multi.predict_many(x + 0.1)
        m2, v2 = single.predict_many(x + 0.1)
        np.testing.assert_allclose(m1[:, j], m2[:, 0], rtol=1e-12, atol=1e-14)
        np.testing.assert_array_equal(v1, v2)


# ---------------------------------------------------------------- k-means

def best_two_partition_sse(points):
    best = np.inf
    n = len(points)
    for mask in itertools.product([0, 1], repeat=n):
        mask = np.array(mask, dtype=bool)
        if mask.all() or not mask.any():
            continue
        sse = sum(((points[m] - points[m].mean(axis=0)) ** 2).sum() for m in (mask, ~mask))
        best = min(best, sse)
    return best


def test_kmeans_two_blobs_1d():
    pts = np.array([[0.0], [1.0], [10.0], [11.0]])
    assert best_two_partition_sse(pts) == 1.0
    res = kmeans(pts, 2, Rng(0))
    np.testing.assert_allclose(np.sort(res.centroids[:, 0]), [0.5, 10.5])
    assert res.sse == pytest.approx(1.0)


def test_kmeans_k1_is_mean():
    pts = np.random.default_rng(1).standard_normal((20, 3))
    res = kmeans(pts, 1, Rng(0))
    np.testing.assert_allclose(res.centroids[0], pts.mean(axis=0))


def test_kmeans_k_equals_n():
    pts = np.random.default_rng(2).standard_normal((7, 2))
    res = kmeans(pts, 7, Rng(0))
    assert res.sse == 0.0
    assert sorted(res.assignment.tolist()) == list(range(7))


def test_kmeans_duplicates_no_empty_cluster():
    pts = np.zeros((5, 2))
    res = kmeans(pts, 3, Rng(0))
    assert np.bincount(res.assignment, minlength=3).min() > 0


def test_kmeans_k_too_large():
    with pytest.raises(KTooLarge):
        kmeans(np.zeros((3, 1)), 4, Rng(0))


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 40), k=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_kmeans_sse_monotone(n, k, seed):
    k = min(k, n)
    pts = np.random.default_rng(seed).standard_normal((n, 2))
    res = kmeans(pts, k, Rng(seed))
    h = np.array(res.sse_history)
    assert np.all(np.diff(h) <= 1e-12 * max(1.0, h[0]))
    assert np.bincount(res.assignment, minlength=k).min() > 0


# ---------------------------------------------------------------- clustered GP

def test_clustered_k1_equals_single_gp():
    gen = np.random.default_rng(4)
    x = gen.standard_normal((15, 2))
    y = gen.standard_normal((15, 1))
    spec = rbf_white()
    cgp = clustered_fit(spec, x, y, 1, Rng(0))
    gp = gp_fit(spec, x, y)
    q = gen.standard_normal((9, 2))
    m1, v1 = cgp.predict_many(q)
    m2, v2 = gp.predict_many(q)
    np.testing.assert_array_equal(m1, m2)
    np.testing.assert_array_equal(v1, v2)
    mq, vq = clustered_predict(cgp, q[0])
    ms, vs = gp_predict(gp, q[0])
    np.testing.assert_array_equal(mq, ms)
    assert vq == vs


def test_clustered_blobs_are_separate():
    x = np.array([[-10.0], [-10.5], [-9.5], [10.0], [10.5], [9.5]])
    y = np.arange(6.0)[:, None]
    cgp = clustered_fit(rbf_white(), x, y, 2, Rng(0))
    sets = sorted(sorted(m.tolist()) for m in cgp.members)
    assert sets == [[0, 1, 2], [3, 4, 5]]
    for rows, gp in zip(cgp.members, cgp.gps):
        np.testing.assert_array_equal(gp.train_inputs, x[rows])


def test_clustered_k_too_large():
    with pytest.raises(KTooLarge):
        clustered_fit(RBF, np.zeros((3, 1)), np.zeros((3, 1)), 4, Rng(0))


def test_routing_to_centroid_and_tie_break():
    x = np.array([[-1.0], [-1.2], [1.0], [1.2]])
    cgp = clustered_fit(rbf_white(), x, np.ones((4, 1)), 2, Rng(0))
    order = np.argsort(cgp.centroids[:, 0])
    assert cgp.route(cgp.centroids[order[1]][None, :])[0] == order[1]
    mid = cgp.centroids.mean(axis=0)
    assert cgp.route(mid[None, :])[0] == 0


def test_parallel_fit_identical():
    gen = np.random.default_rng(5)
    x = gen.standard_normal((40, 2))
    y = gen.standard_normal((40, 2))
    seq = clustered_fit(rbf_white(), x, y, 4, Rng(9))
    par = clustered_fit(rbf_white(), x, y, 4, Rng(9), workers=4)
    for a, b in zip(seq.gps, par.gps):
        np.testing.assert_array_equal(a.alpha, b.alpha)
        np.testing.assert_array_equal(a.chol_factor, b.chol_factor)


def test_teacher_roundtrip(tmp_path):
    gen = np.random.default_rng(6)
    x = gen.standard_normal((20, 3))
    y = gen.standard_normal((20, 2))
    cgp = clustered_fit(KERNELS["composite"], x, y, 3, Rng(1))
    save_teacher(tmp_path / "t.npz", cgp)
    back = load_teacher(tmp_path / "t.npz")
    q = gen.standard_normal((10, 3))
    for a, b in zip(cgp.predict_many(q), back.predict_many(q)):
        np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------- soft labels

def test_to_soft_regression_identity():
    sp = to_soft([0.7], [0.02], Task.REGRESSION)
    assert sp.soft_label.tolist() == [0.7]
    assert sp.confidence_input == 0.02


def test_to_soft_uniform_softmax():
    sp = to_soft([0.0, 0.0, 0.0], [0.1, 0.2, 0.3], "classification")
    np.testing.assert_allclose(sp.soft_label, [1 / 3] * 3, rtol=1e-15)
    assert sp.confidence_input == pytest.approx(0.2, abs=1e-15)


def test_to_soft_classification_needs_two_outputs():
    with pytest.raises(BadDimension):
        to_soft([0.5], [0.1], Task.CLASSIFICATION)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.floats(-100, 100))
def test_softmax_sums_to_one_and_shift_invariant(z, c):
    z = np.array(z)
    p = softmax(z)
    assert abs(p.sum() - 1.0) < 1e-9
    np.testing.assert_allclose(softmax(z + c), p, atol=1e-9)
