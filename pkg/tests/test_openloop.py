import numpy as np
import pytest

from conftest import random_model
from subid import numerics as nx
from subid import openloop as ol
from subid.evalmetrics import eig_distance, markov_error
from subid.exceptions import BadWindow, DegenerateState, RankDeficientRegressors
from subid.simdata import DataSet, simulate, simulate_innovation, simulate_open
from subid.ssmodel import NoiseSpec, SsModel
from subid.stacking import FUTURE, PAST, hankel, toeplitz_h

ALGOS = ol.ALGORITHMS


def noise_free(rng, n_x=2, n_u=1, n_y=1, N=600, with_d=True):
    m = random_model(rng, n_x, n_u, n_y, with_d=with_d)
    u = rng.standard_normal((n_u, N))
    return m, simulate_open(m, u)


def snr_data(m, N, seed, snr_db=20.0):
    """Innovation-form data whose deterministic/noise output variance ratio is ``snr_db``."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((m.n_u, N))
    e = rng.standard_normal((m.n_y, N))
    y_det, _ = simulate(m, u)
    y_noise, _ = simulate_innovation(SsModel(m.A, np.zeros_like(m.B), m.C, np.zeros_like(m.D), m.K), u, e)
    scale = np.sqrt(np.var(y_det) / np.var(y_noise) / 10 ** (snr_db / 10))
    return DataSet(u, y_det + scale * y_noise)


def noisy_instance(rng, N=400):
    m = random_model(rng, 2, 1, 2, with_k=True)
    u = rng.standard_normal((1, N))
    e = 0.3 * rng.standard_normal((2, N))
    y, _ = simulate_innovation(m, u, e)
    return DataSet(u, y)


# ------------------------------------------------------------- regression
def test_build_regression_boundary_and_bad_window(rng):
    d = DataSet(rng.standard_normal((1, 7)), rng.standard_normal((1, 7)))
    assert ol.build_regression(d, 3, 4).M == 1
    with pytest.raises(BadWindow):
        ol.build_regression(d, 4, 4)


def test_build_regression_ramp():
    t = np.arange(6.0)
    d = DataSet(10 + t, t)
    b = ol.build_regression(d, 1, 1)
    assert np.array_equal(b.Zp, [t[:5], 10 + t[:5]])
    assert np.array_equal(b.Yf, [t[1:]])
    assert np.array_equal(b.Uf, [10 + t[1:]])


def test_build_regression_columns_match_stacking(rng):
    d = DataSet(rng.standard_normal((2, 40)), rng.standard_normal((3, 40)))
    p, f = 4, 3
    b = ol.build_regression(d, p, f)
    z = np.vstack([d.Y, d.U])
    for j in (0, 7, b.M - 1):
        t = p + j
        assert np.array_equal(b.Yf[:, j], hankel(d.Y, f, 1, t, FUTURE).data[:, 0])
        assert np.array_equal(b.Uf[:, j], hankel(d.U, f, 1, t, FUTURE).data[:, 0])
        assert np.array_equal(b.Zp[:, j], hankel(z, p, 1, t, PAST).data[:, 0])


# ------------------------------------------------------------- OLS family
def test_ols_joint_noise_free_residual(rng):
    m, d = noise_free(rng, 2, 1, 2)
    b = ol.build_regression(d, 5, 5)
    est = ol.ols_joint(b)
    res = np.linalg.norm(b.Yf - est.L @ b.Zp - est.H @ b.Uf)
    assert res < 1e-8 * np.linalg.norm(b.Yf)
    assert any("rank_deficient" in f for f in est.diagnostics["rank_flags"])
    with pytest.raises(RankDeficientRegressors):
        ol.ols_joint(b, strict=True)


def test_ols_joint_zero_output(rng):
    d = DataSet(rng.standard_normal((1, 80)), np.zeros((1, 80)))
    est = ol.ols_joint(ol.build_regression(d, 3, 3))
    assert np.all(est.L == 0) and np.all(est.H == 0)


def test_ols_joint_passthrough(rng):
    u = rng.standard_normal((2, 500))
    b = ol.build_regression(DataSet(u, u.copy()), 2, 3)
    est = ol.ols_joint(b)
    for i in range(3):
        assert np.allclose(est.H[2 * i:2 * i + 2, 2 * i:2 * i + 2], np.eye(2), atol=1e-10)


def test_ols_projected_equals_joint(rng):
    for _ in range(5):
        b = ol.build_regression(noisy_instance(rng), 4, 4)
        L1 = ol.ols_joint(b).L
        L2 = ol.ols_projected(b).L
        assert np.linalg.norm(L1 - L2) / np.linalg.norm(L1) < 1e-8


def test_perp_projector_centering():
    Uf = np.ones((1, 3))
    P = ol.perp_projector(Uf)
    assert np.allclose(P, np.eye(3) - 1 / 3)
    x = np.array([[1.0, 2.0, 6.0]])
    assert np.allclose(x @ P, [[-2.0, -1.0, 3.0]])


def test_perp_projector_algebra(rng):
    Uf = rng.standard_normal((3, 20))
    P = ol.perp_projector(Uf)
    assert np.max(np.abs(P @ P - P)) < 1e-12
    assert np.max(np.abs(Uf @ P)) < 1e-12


def test_moesp_column_space_and_factorization(rng):
    b = ol.build_regression(noisy_instance(rng), 3, 3)
    fac = ol.moesp_rq(b)
    L = ol.ols_projected(b).L
    assert np.max(nx.principal_angles(fac.R32, L)) < 1e-6
    stacked = np.vstack([b.Uf, b.Zp, b.Yf])
    assert np.linalg.norm(stacked - fac.R @ fac.Q) < 1e-10 * np.linalg.norm(stacked)
    Wr = b.Zp @ ol.perp_projector(b.Uf)
    assert np.linalg.norm(fac.R32 @ fac.Q2 - L @ Wr) < 1e-8 * np.linalg.norm(L @ Wr)


def test_moesp_noise_free_angles(rng):
    m, d = noise_free(rng, 2, 1, 1)
    b = ol.build_regression(d, 4, 4)
    fac = ol.moesp_rq(b)
    L = ol.ols_projected(b).L
    assert np.max(nx.principal_angles(fac.R32, L, rcond=1e-8)) < 1e-6


def test_moesp_zero_output_and_small_m(rng):
    d = DataSet(rng.standard_normal((1, 60)), np.zeros((1, 60)))
    assert np.allclose(ol.moesp_rq(ol.build_regression(d, 2, 2)).R32, 0)
    d = DataSet(rng.standard_normal((1, 12)), rng.standard_normal((1, 12)))
    with pytest.raises(BadWindow):
        ol.moesp_rq(ol.build_regression(d, 4, 4))


def test_oblique_projection_identity(rng):
    for _ in range(5):
        b = ol.build_regression(noisy_instance(rng), 4, 4)
        Lz = ol.ols_projected(b).L @ b.Zp
        assert np.linalg.norm(ol.oblique_projection(b) - Lz) / np.linalg.norm(b.Yf) < 1e-8


def test_oblique_projection_zero_and_no_inputs(rng):
    d = DataSet(rng.standard_normal((1, 60)), np.zeros((1, 60)))
    assert np.allclose(ol.oblique_projection(ol.build_regression(d, 2, 2), strict=False), 0)
    d = DataSet(np.zeros((0, 80)), rng.standard_normal((2, 80)))
    b = ol.build_regression(d, 3, 2)
    Q, _ = np.linalg.qr(b.Zp.T)
    assert np.allclose(ol.oblique_projection(b), b.Yf @ Q @ Q.T, atol=1e-10)


def test_oblique_projection_rank_deficient(rng):
    m, d = noise_free(rng, 1, 1, 1)
    with pytest.raises(RankDeficientRegressors):
        ol.oblique_projection(ol.build_regression(d, 4, 2))


# ------------------------------------------------------ structured estimators
def _assert_toeplitz(H, f, n_y, n_u):
    for i in range(f):
        for j in range(f):
            blk = H[i * n_y:(i + 1) * n_y, j * n_u:(j + 1) * n_u]
            if j > i:
                assert np.all(blk == 0)
            else:
                ref = H[(i - j) * n_y:(i - j + 1) * n_y, :n_u]
                assert np.array_equal(blk, ref)


@pytest.mark.parametrize("fn", [ol.cls_vectorized, ol.cls_causal, ol.cls_twostep])
def test_structured_noise_free_markov(rng, fn):
    m, d = noise_free(rng, 2, 2, 2)
    f = 5
    b = ol.build_regression(d, 5, f)
    est = fn(b) if fn is not ol.cls_twostep else fn(b, 3, 2)
    H_true = toeplitz_h(m.A, m.B, m.C, m.D, f)
    assert np.max(np.abs(est.H - H_true)) < 1e-7
    _assert_toeplitz(est.H, f, 2, 2)


@pytest.mark.parametrize("fn", [ol.cls_vectorized, ol.cls_causal, ol.cls_twostep])
def test_structured_noisy_structure(rng, fn):
    b = ol.build_regression(noisy_instance(rng), 4, 4)
    est = fn(b) if fn is not ol.cls_twostep else fn(b, 2, 2)
    _assert_toeplitz(est.H, 4, 2, 1)


def test_structured_zero_data(rng):
    d = DataSet(rng.standard_normal((1, 60)), np.zeros((1, 60)))
    b = ol.build_regression(d, 3, 3)
    for fn in (ol.cls_vectorized, ol.cls_causal):
        est = fn(b)
        assert np.all(est.H == 0) and np.all(est.L == 0)


def test_cls_twostep_zero_iterations_is_joint(rng):
    b = ol.build_regression(noisy_instance(rng), 3, 3)
    a, j = ol.cls_twostep(b, 0), ol.ols_joint(b)
    assert np.array_equal(a.L, j.L) and np.array_equal(a.H, j.H)


def test_cls_twostep_noninferior_residual():
    m = SsModel([[0.7, 0.2], [-0.2, 0.6]], [[1.0], [0.5]], [[1.0, 0.3]], [[0.2]], [[0.3], [0.1]])
    ratios = []
    for seed in range(50):
        b = ol.build_regression(snr_data(m, 500, seed), 4, 4)
        base = ol.ols_joint(b).diagnostics["residual_fro"]
        est = ol.cls_twostep(b, 3, 2)
        ratios.append(est.diagnostics["residual_trace"][-1] / base)
    assert np.median(ratios) <= 1.05


def test_cls_causal_single_block_matches_restricted_joint(rng):
    b = ol.build_regression(noisy_instance(rng), 3, 1)
    est = ol.cls_causal(b)
    ref = nx.lstsq_rows(b.Yf, np.vstack([b.Zp, b.Uf])).coef
    assert np.allclose(np.hstack([est.L, est.H]), ref, atol=1e-12)


def test_cls_causal_noise_free_l_matches_joint(rng):
    m, d = noise_free(rng, 2, 1, 2)
    b = ol.build_regression(d, 4, 4)
    assert np.max(np.abs(ol.cls_causal(b).L - ol.ols_joint(b).L)) < 1e-7


# ------------------------------------------------------------ rank reduction
def test_reduce_rank_rank_one_auto(rng):
    b = ol.build_regression(noisy_instance(rng), 3, 3)
    L = np.outer(rng.standard_normal(6), rng.standard_normal(9))
    assert ol.reduce_rank(L, b).order_used == 1


def test_reduce_rank_eckart_young(rng):
    b = ol.build_regression(noisy_instance(rng), 3, 3)
    L = rng.standard_normal((6, 9))
    red = ol.reduce_rank(L, b, order=2)
    approx = red.Us @ np.diag(red.Ss) @ red.Vs.T
    assert abs(np.linalg.norm(L - approx) ** 2 - np.sum(red.singvals[2:] ** 2)) < 1e-10


def test_reduce_rank_noise_free_gap(rng):
    m, d = noise_free(rng, 3, 1, 2)
    b = ol.build_regression(d, 4, 4)
    s = ol.reduce_rank(ol.ols_projected(b).L, b).singvals
    assert s[3] / s[2] < 1e-6
    assert ol.reduce_rank(ol.ols_projected(b).L, b).order_used == 3


def test_reduce_rank_flags_order_beyond_rank(rng):
    m, d = noise_free(rng, 1, 1, 1)
    b = ol.build_regression(d, 4, 4)
    red = ol.reduce_rank(ol.ols_projected(b).L, b, order=3)
    assert any(f.startswith("order_exceeds_rank") for f in red.flags)


def test_reduce_rank_cca_canonical_correlations(rng):
    b = ol.build_regression(noisy_instance(rng, 2000), 3, 3)
    red = ol.reduce_rank(ol.ols_projected(b).L, b, "cca")
    assert np.all(red.singvals <= 1 + 1e-9) and np.all(red.singvals >= 0)


# ---------------------------------------------------------------- extraction
def test_extract_via_state_scalar():
    m = SsModel([[0.9]], [[1.0]], [[1.0]], [[0.0]])
    u = np.random.default_rng(0).standard_normal((1, 500))
    d = simulate_open(m, u)
    b = ol.build_regression(d, 5, 5)
    est = ol._attach(ol.ols_projected(b), ol.reduce_rank(ol.ols_projected(b).L, b, order=1))
    model, w, v = ol.extract_via_state(est, b)
    assert abs(model.A[0, 0] - 0.9) < 1e-6


def test_extract_via_state_static_system(rng):
    D = np.array([[1.5, -0.5]])
    u = rng.standard_normal((2, 400))
    d = DataSet(u, D @ u)
    b = ol.build_regression(d, 3, 3)
    est = ol.ols_joint(b)
    est = ol._attach(est, ol.reduce_rank(est.L, b, order=1))
    model, _, _ = ol.extract_via_state(est, b)
    assert np.allclose(model.D, D, atol=1e-8)
    assert np.linalg.norm(model.C) * np.linalg.norm(model.B) < 1e-6


def test_extract_via_state_degenerate(rng):
    d = DataSet(rng.standard_normal((1, 60)), np.zeros((1, 60)))
    b = ol.build_regression(d, 3, 3)
    est = ol.ols_projected(b)
    est = ol._attach(est, ol.reduce_rank(est.L, b, order=1))
    with pytest.raises(DegenerateState):
        ol.extract_via_state(est, b)


def test_shift_invariance_scalar():
    C, A = ol.shift_invariance(np.array([[1.0], [0.5]]), 1)
    assert C[0, 0] == 1.0 and A[0, 0] == pytest.approx(0.5)


def test_extract_via_observability_markov(rng):
    m, d = noise_free(rng, 2, 1, 1)
    b = ol.build_regression(d, 4, 4)
    est = ol.ols_projected(b)
    est = ol._attach(est, ol.reduce_rank(est.L, b, order=2))
    model = ol.extract_via_observability(est, b, d)
    for g, gt in zip(model.markov(5), m.markov(5)):
        assert np.max(np.abs(g - gt)) < 1e-6


def test_extract_via_observability_needs_two_blocks(rng):
    m, d = noise_free(rng, 1, 1, 1)
    b = ol.build_regression(d, 3, 1)
    est = ol.ols_projected(b)
    est = ol._attach(est, ol.reduce_rank(est.L, b, order=1))
    with pytest.raises(ValueError):
        ol.extract_via_observability(est, b, d)


# -------------------------------------------------------------- Kalman gain
def test_kalman_gain_zero_residuals():
    m = SsModel([[0.5]], [[1.0]], [[1.0]], [[0.0]])
    noise, K, flags = ol.estimate_kalman_gain(m, np.zeros((1, 50)), np.zeros((1, 50)))
    assert "R_regularized" in flags and abs(K[0, 0]) < 1e-6


def test_kalman_gain_covariances_from_known_noise():
    from subid.simdata import gen_noise
    true = NoiseSpec([[0.5]], [[1.0]], [[0.2]])
    V, W = gen_noise(true, 100_000, 8)
    m = SsModel([[0.8]], [[1.0]], [[1.0]], [[0.0]])
    est, _, _ = ol.estimate_kalman_gain(m, W, V)
    for name in "QRS":
        assert abs(getattr(est, name)[0, 0] - getattr(true, name)[0, 0]) < 0.05 * abs(getattr(true, name)[0, 0])


def test_kalman_gain_from_identification():
    m = SsModel([[0.9]], [[1.0]], [[1.0]], [[0.0]], [[0.5]])
    gains = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        d = simulate_open(m, rng.standard_normal((1, 100_000)), innovation_cov=[[0.09]], seed=seed)
        res = ol.identify_ol(d, p=6, f=6, order=1)
        gains.append((res.model.K @ res.model.C)[0, 0])
    assert abs(np.median(gains) - 0.5) < 0.05


# ------------------------------------------------------------------ pipeline
@pytest.mark.parametrize("algo", ALGOS)
@pytest.mark.parametrize("extraction", ["state", "observability"])
def test_identify_noise_free_two_state(rng, algo, extraction):
    m, d = noise_free(rng, 2, 1, 1)
    res = ol.identify_ol(d, p=5, f=5, order=2, algorithm=algo, extraction=extraction)
    assert eig_distance(m, res.model) < 1e-6
    assert res.order == 2 and res.algorithm == algo


def test_identify_auto_order(rng):
    m, d = noise_free(rng, 3, 1, 2)
    assert ol.identify_ol(d, p=5, f=5).order == 3


def test_identify_noisy_median_eigenvalue_error():
    m = SsModel([[0.7, 0.2], [-0.2, 0.6]], [[1.0], [0.5]], [[1.0, 0.3]], [[0.2]], [[0.3], [0.1]])
    errs = [eig_distance(m, ol.identify_ol(snr_data(m, 5000, s), p=8, f=8, order=2).model)
            for s in range(20)]
    assert np.median(errs) < 0.02


def test_identify_bad_window(rng):
    d = DataSet(rng.standard_normal((1, 9)), rng.standard_normal((1, 9)))
    with pytest.raises(BadWindow) as info:
        ol.identify_ol(d, p=5, f=5)
    assert "regression" in str(info.value)


def test_identify_similarity_invariance(rng):
    m, d = noise_free(rng, 3, 2, 2)
    T = rng.standard_normal((3, 3)) + 2 * np.eye(3)
    d2 = simulate_open(m.similarity(T), d.U)
    r1 = ol.identify_ol(d, p=5, f=5, order=3)
    r2 = ol.identify_ol(d2, p=5, f=5, order=3)
    assert eig_distance(r1.model, r2.model) < 1e-8
    assert markov_error(r1.model, r2.model, 5) < 1e-8
    assert markov_error(m, r1.model, 5) < 1e-6


def test_identify_cca_weighting(rng):
    m, d = noise_free(rng, 2, 1, 1)
    res = ol.identify_ol(d, p=5, f=5, order=2, weighting="cca")
    assert eig_distance(m, res.model) < 1e-6


def test_ident_result_json(rng):
    m, d = noise_free(rng, 2, 1, 1)
    res = ol.identify_ol(d, p=4, f=4, order=2)
    blob = res.to_dict()
    assert set(blob) == {"model", "order", "singular_values", "algorithm", "p", "f", "diagnostics"}
    assert {"residual_fro", "rank_flags"} <= set(blob["diagnostics"])
    back = ol.IdentResult.from_dict(blob)
    assert np.array_equal(back.model.A, res.model.A)


def test_options_validation():
    with pytest.raises(ValueError):
        ol.IdentOptions(algorithm="magic").validate()
    with pytest.raises(ValueError):
        ol.IdentOptions(p=0).validate()
