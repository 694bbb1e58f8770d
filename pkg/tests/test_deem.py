import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import dense_kron, random_spd
from tensorclust import deem, initializer, simgen, tnmm
from tensorclust.deem import DeemConfig, LambdaSchedule
from tensorclust.tensor_core import matricize, vectorize
from tensorclust.tnmm import TnmmParams


def problem(rng, dims=(3, 2), K=2, identity=False):
    sigmas = [np.eye(d) if identity else random_spd(d, rng) for d in dims]
    return TnmmParams(np.full(K, 1.0 / K), rng.standard_normal((K,) + dims), tnmm.identify_sigmas(sigmas))


def two_blobs(rng, n=100, dims=(4, 3), shift=4.0):
    data = rng.standard_normal((2 * n,) + dims)
    data[n:, 0, 0] += shift
    data[n:, 1, 0] += shift
    return data, np.repeat([0, 1], n)


def test_unpenalized_identity_returns_mean_gap(rng):
    P = problem(rng, identity=True, K=3)
    B = deem.estep_solve_B(P, 0.0).Bs
    np.testing.assert_allclose(B, P.mus[1:] - P.mus[0], atol=1e-8)


def test_unpenalized_matches_dense_solve(rng):
    P = problem(rng, dims=(3, 2, 2))
    B = deem.estep_solve_B(P, 0.0, tol=1e-12, max_passes=5000).Bs[0]
    want = np.linalg.solve(dense_kron(P.sigmas), vectorize(P.mus[1] - P.mus[0]))
    np.testing.assert_allclose(vectorize(B), want, atol=1e-8)


def test_full_shrinkage_threshold(rng):
    P = problem(rng, K=3)
    lmax = deem.lambda_max(P)
    assert deem.estep_solve_B(P, lmax).support_size == 0
    assert deem.estep_solve_B(P, 0.98 * lmax).support_size > 0


@settings(max_examples=30)
@given(st.integers(0, 2 ** 31), st.integers(2, 3), st.floats(0.05, 0.9))
def test_solution_satisfies_kkt(seed, K, frac):
    rng = np.random.default_rng(seed)
    P = problem(rng, dims=(3, 2), K=K)
    lam = frac * deem.lambda_max(P)
    discs = deem.estep_solve_B(P, lam, tol=1e-10, max_passes=5000)
    assert deem.kkt_residual(P, lam, discs.Bs) < 1e-6


def test_warm_start_reaches_same_minimizer(rng):
    P = problem(rng, dims=(4, 3), K=3)
    lam = 0.3 * deem.lambda_max(P)
    cold = deem.estep_solve_B(P, lam, tol=1e-10, max_passes=5000)
    other = deem.estep_solve_B(P, 0.1 * deem.lambda_max(P))
    warm = deem.estep_solve_B(P, lam, warm_start=other, tol=1e-10, max_passes=5000)
    np.testing.assert_allclose(warm.Bs, cold.Bs, atol=1e-7)


def test_objective_trace_is_monotone(rng):
    P = problem(rng, dims=(5, 4), K=2)
    discs = deem.estep_solve_B(P, 0.2 * deem.lambda_max(P), track_objective=True)
    hist = np.array(discs.history)
    assert len(hist) >= 2
    assert np.all(np.diff(hist) <= 1e-10)


def test_inner_solver_warns_when_capped(rng):
    P = problem(rng, dims=(6, 5), K=2)
    with pytest.warns(deem.InnerSolverWarning):
        deem.estep_solve_B(P, 1e-4, tol=1e-14, max_passes=1)


def test_mstep_moment_formula(rng):
    # oracle: explicit per-observation unfoldings and the scaling rule
    data = rng.standard_normal((30, 3, 4, 2)) + 1.0
    resp = rng.dirichlet([1.0, 1.0], size=30)
    P = deem.mstep(data, resp)
    n, K = 30, 2
    mus = [(resp[:, k, None, None, None] * data).sum(0) / resp[:, k].sum() for k in range(K)]
    np.testing.assert_allclose(P.mus, np.stack(mus), atol=1e-12)
    np.testing.assert_allclose(P.pis, resp.mean(0))
    raw = []
    for m, pm in enumerate((3, 4, 2)):
        q = 24 // pm
        S = sum(resp[i, k] * matricize(data[i] - mus[k], m) @ matricize(data[i] - mus[k], m).T
                for i in range(n) for k in range(K))
        raw.append(S / (n * q))
    s11 = sum(resp[i, k] * (data[i, 0, 0, 0] - mus[k][0, 0, 0]) ** 2 for i in range(n) for k in range(K)) / n
    np.testing.assert_allclose(P.sigmas[0], raw[0] * s11 / raw[0][0, 0], atol=1e-12)
    for m in (1, 2):
        np.testing.assert_allclose(P.sigmas[m], raw[m] / raw[m][0, 0], atol=1e-12)


def test_mstep_degenerate_cluster(rng):
    data = rng.standard_normal((10, 2, 2))
    resp = np.zeros((10, 2))
    resp[:, 0] = 1.0
    resp[0] = [0.5, 0.5]
    with pytest.raises(deem.DegenerateClusterError):
        deem.mstep(data, resp, min_mass=1.0)


def test_fit_separated_clusters(rng):
    data, labels = two_blobs(rng)
    init = initializer.init_params(data, initializer.kmeans_labels(data, 2), 2)
    res = deem.fit(data, 2, DeemConfig(lam=0.1 * deem.lambda_max(init)), init)
    assert simgen.clustering_error(res.labels, labels, 2) < 0.05
    assert res.support_size >= 1
    np.testing.assert_allclose(res.responsibilities.sum(1), 1.0)


def test_huge_lambda_freezes_responsibilities(rng):
    data, _ = two_blobs(rng)
    init = initializer.init_params(data, initializer.kmeans_labels(data, 2), 2)
    res = deem.fit(data, 2, DeemConfig(lam=10 * deem.lambda_max(init)), init)
    assert res.support_size == 0
    assert res.iters <= 2
    np.testing.assert_allclose(res.responsibilities, np.tile(init.pis, (len(data), 1)))


def test_fit_rejects_mismatched_init(rng):
    data, _ = two_blobs(rng)
    init = initializer.init_params(data, initializer.kmeans_labels(data, 2), 2)
    with pytest.raises(ValueError):
        deem.fit(data[:, :3], 2, DeemConfig(), init)
    with pytest.raises(ValueError):
        DeemConfig(lam=-1.0)


def test_bic_counts_support(rng):
    data, _ = two_blobs(rng)
    init = initializer.init_params(data, initializer.kmeans_labels(data, 2), 2)
    res = deem.fit(data, 2, DeemConfig(lam=0.3 * deem.lambda_max(init)), init)
    base = deem.bic(data, res)
    assert base == pytest.approx(-2 * tnmm.mixture_loglik(data, res.params) + np.log(len(data)) * res.support_size)
    zero = np.argwhere(res.discs.Bs == 0)[0]
    res.discs.Bs[tuple(zero)] = 1e-300
    assert deem.bic(data, res) - base == pytest.approx(np.log(len(data)))


def test_tune_single_point_and_duplicates(rng):
    data, _ = two_blobs(rng)
    init = initializer.init_params(data, initializer.kmeans_labels(data, 2), 2)
    lam = 0.2 * deem.lambda_max(init)
    assert deem.tune(data, 2, [lam], DeemConfig(), init)[0] == pytest.approx(lam)
    a = deem.tune(data, 2, [lam, lam, 2 * lam], DeemConfig(), init)
    b = deem.tune(data, 2, [2 * lam, lam, lam], DeemConfig(), init)
    assert a[0] == b[0]
    np.testing.assert_array_equal(a[1].labels, b[1].labels)


def test_tune_prefers_signal_over_full_shrinkage(rng):
    data, _ = two_blobs(rng)
    init = initializer.init_params(data, initializer.kmeans_labels(data, 2), 2)
    lmax = deem.lambda_max(init)
    # oracle: compute both BICs directly and compare
    fits = {lam: deem.fit(data, 2, DeemConfig(lam=lam), init) for lam in (2 * lmax, 0.2 * lmax)}
    expected = min(fits, key=lambda l: fits[l].bic)
    assert expected == 0.2 * lmax
    assert deem.tune(data, 2, list(fits), DeemConfig(), init)[0] == pytest.approx(expected)


def test_tune_stops_after_dense_fit(rng):
    data, _ = two_blobs(rng)
    init = initializer.init_params(data, initializer.kmeans_labels(data, 2), 2)
    grid = deem.default_lambda_grid(init, n_grid=6, ratio=1e-3)
    _, res = deem.tune(data, 2, grid, DeemConfig(max_support=1), init)
    lams = [l for l, _ in res.path]
    scores = np.array([s for _, s in res.path])
    assert lams == sorted(lams, reverse=True)
    skipped = np.flatnonzero(np.isnan(scores))
    assert len(skipped) > 0 and skipped[0] >= 1
    assert np.all(np.isnan(scores[skipped[0]:]))
    last = deem.fit(data, 2, DeemConfig(lam=lams[skipped[0] - 1]), init)
    assert last.support_size > 1


def test_select_k_on_separated_data(rng):
    data, _ = two_blobs(rng, shift=6.0)
    K, res = deem.select_k(data, [2, 3], None, DeemConfig())
    assert K == 2


def test_select_k_identical_clusters_prefers_smallest(rng):
    data = rng.standard_normal((120, 3, 2))
    K, _ = deem.select_k(data, [2, 3], None, DeemConfig())
    assert K == 2


def test_lambda_schedule_limit():
    s = LambdaSchedule(lambda0=5.0, kappa=0.3, c_lambda=2.0)
    lam, p, n = s.lambda0, 400, 150
    for t in range(200):
        lam = s.next(lam, t, p, n)
    rate = 2.0 * np.sqrt(np.log(p) / n)
    assert lam == pytest.approx(rate / (1 - 0.3) ** 2, rel=1e-8)
    with pytest.raises(ValueError):
        LambdaSchedule(lambda0=1.0, kappa=0.6)


def test_fit_with_schedule(rng):
    data, labels = two_blobs(rng)
    init = initializer.init_params(data, initializer.kmeans_labels(data, 2), 2)
    cfg = DeemConfig(schedule=LambdaSchedule(lambda0=deem.lambda_max(init)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", deem.InnerSolverWarning)
        res = deem.fit(data, 2, cfg, init)
    assert simgen.clustering_error(res.labels, labels, 2) < 0.05
