"""Subspace identification that remains consistent under output feedback.

All three methods start from a high-order one-step-ahead predictor (VARX),
whose regressors ``z(t) = [y(t); u(t)]`` are uncorrelated with the current
innovation even when ``u`` depends on past outputs:

* IEM regresses each future output block on the past and on previously
  estimated innovations;
* SSARX removes the predictable future with VARX Markov parameters and runs a
  canonical correlation analysis;
* PBSID forms the banded product ``Gamma_f Omega_p`` directly from the VARX
  Markov parameters.

Under feedback the plant is assumed to have ``D = 0``. The final realization is
obtained from the predictor-form state equation
``x(t+1) = (A - K C) x(t) + B u(t) + K y(t)``, whose regressors are all
uncorrelated with the innovation, so ``A``, ``B`` and ``K`` are consistent.
"""
from dataclasses import dataclass
from typing import List

import numpy as np

from . import numerics as nx
from .exceptions import BadWindow, DegenerateState, NeedDeeperVarx, RankDeficientRegressors, SubidError
from .openloop import (
    AUTO,
    IdentResult,
    SubspaceEstimate,
    _attach,
    build_regression,
    estimate_kalman_gain,
    fit_from_states,
    observability_estimate,
    reduce_rank,
    shift_invariance,
    stage,
    state_map,
)
from .ssmodel import SsModel
from .stacking import PAST, hankel, toeplitz_from_markov


@dataclass(eq=False)
class MarkovSet:
    """Predictor Markov parameters ``Gu[k] = C At^k Bt`` and ``Gy[k] = C At^k K``."""

    D: np.ndarray
    Gu: List[np.ndarray]
    Gy: List[np.ndarray]
    ell: int
    rank_flags: tuple = ()


def varx_markov(data, ell, estimate_d=False, rcond=None, strict=False):
    """High-order VARX fit ``y(t) = sum_i [Gy, Gu]_{i-1} z(t-i) (+ D u(t)) + e(t)``.

    Parameters
    ----------
    data : DataSet
    ell : int
        Number of past lags.
    estimate_d : bool
        Include ``u(t)``; must stay ``False`` for closed-loop data.
    """
    n_u, n_y, N = data.n_u, data.n_y, data.N
    if ell < 1:
        raise BadWindow("ell must be >= 1")
    need = (n_u + n_y) * ell + n_u + 10
    if N < need:
        raise BadWindow(f"VARX of depth {ell} needs N >= {need}, got {N}")
    if data.closed_loop and estimate_d:
        raise ValueError("D cannot be estimated from closed-loop data")
    M = N - ell
    z = np.vstack([data.Y, data.U])
    reg = hankel(z, ell, M, ell, PAST).data
    if estimate_d:
        reg = np.vstack([reg, data.U[:, ell:]])
    res = nx.lstsq_rows(data.Y[:, ell:], reg, rcond)
    flags = ()
    if res.rank_deficient:
        deficiency = reg.shape[0] - res.rank
        if strict:
            raise RankDeficientRegressors(f"VARX regressors rank deficient by {deficiency}", deficiency)
        flags = (f"varx_rank_deficient:{deficiency}",)
    nz = n_y + n_u
    Gy, Gu = [], []
    # block k of the past vector multiplies z(t - ell + k), i.e. lag ell - k
    for lag in range(1, ell + 1):
        k = ell - lag
        blk = res.coef[:, k * nz:(k + 1) * nz]
        Gy.append(blk[:, :n_y])
        Gu.append(blk[:, n_y:])
    D = res.coef[:, ell * nz:] if estimate_d else np.zeros((n_y, n_u))
    return MarkovSet(D, Gu, Gy, ell, flags)


def markov_from_predictor(Atil, Btil, K, C, D, ell):
    """Exact :class:`MarkovSet` of a predictor realization (test oracle and helper)."""
    Gu, Gy = [], []
    Ak = np.eye(Atil.shape[0])
    for _ in range(ell):
        Gu.append(C @ Ak @ Btil)
        Gy.append(C @ Ak @ K)
        Ak = Ak @ Atil
    return MarkovSet(np.asarray(D, dtype=float), Gu, Gy, ell)


def build_gamma_omega(mk, p, f, banded=True):
    """Block matrix with block ``(i, j)`` equal to ``C At^(p-1-j+i) [K, Bt]``.

    With ``banded`` the blocks whose exponent reaches ``p`` are zero, which is
    exact when ``At`` is nilpotent of degree ``p``.
    """
    if banded and f > p:
        raise ValueError("f must not exceed p")
    depth = p if banded else f + p - 1
    if mk.ell < depth:
        raise NeedDeeperVarx(f"need Markov depth >= {depth}, got {mk.ell}")
    n_y, n_u = mk.Gy[0].shape[0], mk.Gu[0].shape[1]
    nz = n_y + n_u
    out = np.zeros((f * n_y, p * nz))
    for i in range(f):
        for j in range(p):
            e = p - 1 - j + i
            if banded and e >= p:
                continue
            out[i * n_y:(i + 1) * n_y, j * nz:j * nz + n_y] = mk.Gy[e]
            out[i * n_y:(i + 1) * n_y, j * nz + n_y:(j + 1) * nz] = mk.Gu[e]
    return out


def fit_predictor_states(X, blocks, rcond=None, estimate_d=False):
    """Realization from a state sequence via the predictor-form state equation.

    ``C`` (and ``D``) come from ``y(t) = C x(t) + D u(t) + e(t)`` and
    ``[At, Bt, K]`` from ``x(t+1) = At x(t) + Bt u(t) + K y(t)``; then
    ``A = At + K C`` and ``B = Bt + K D``.

    Returns
    -------
    model : SsModel (with ``K``)
    e : array
        Output residuals (innovation estimates).
    """
    n = X.shape[0]
    if X.shape[1] < 2:
        raise BadWindow("need at least two state columns")
    if not np.any(X) or not np.all(np.isfinite(X)):
        raise DegenerateState("estimated state sequence is identically zero")
    n_y, n_u = blocks.n_y, blocks.n_u
    Xn, Xp = X[:, :-1], X[:, 1:]
    y = blocks.Yf[:n_y, :-1]
    u = blocks.Uf[:n_u, :-1]
    if estimate_d:
        CD = nx.lstsq_rows(y, np.vstack([Xn, u]), rcond).coef
        C, D = CD[:, :n], CD[:, n:]
    else:
        C = nx.lstsq_rows(y, Xn, rcond).coef
        D = np.zeros((n_y, n_u))
    theta = nx.lstsq_rows(Xp, np.vstack([Xn, u, y]), rcond).coef
    Atil, Btil, K = theta[:, :n], theta[:, n:n + n_u], theta[:, n + n_u:]
    model = SsModel(Atil + K @ C, Btil + K @ D, C, D, K)
    return model, y - C @ Xn - D @ u


def _fit_bk_given_ac(A, C, X, blocks, rcond=None):
    """``B`` and ``K`` from ``x(t+1) - A x(t) = B u(t) + K (y(t) - C x(t))`` with ``D = 0``."""
    n_y, n_u = blocks.n_y, blocks.n_u
    Xn, Xp = X[:, :-1], X[:, 1:]
    y = blocks.Yf[:n_y, :-1]
    u = blocks.Uf[:n_u, :-1]
    eps = y - C @ Xn
    theta = nx.lstsq_rows(Xp - A @ Xn, np.vstack([u, eps]), rcond).coef
    B, K = theta[:, :n_u], theta[:, n_u:]
    return SsModel(A, B, C, np.zeros((n_y, n_u)), K), eps


def _result(model, est, blocks, algorithm, diag):
    return IdentResult(model, est.order_used, np.asarray(est.singvals), algorithm,
                       blocks.p, blocks.f, None, diag)


def iem_identify(data, p, f, order=AUTO, rcond=None):
    """Innovation estimation method.

    Stage ``i`` regresses block row ``i`` of ``Yf`` on ``Zp``, the future
    inputs ``u(t) .. u(t+i-2)`` and the innovation estimates of the earlier
    stages; its residual becomes the next innovation estimate. The stacked
    ``Zp`` coefficients estimate ``Gamma_f Omega_p``; ``A`` and ``C`` follow
    from shift invariance and ``B``, ``K`` from the predictor state equation.
    ``D`` is fixed at zero.
    """
    if f < 2:
        raise ValueError("iem needs f >= 2 for shift-invariance extraction")
    with stage("regression"):
        blocks = build_regression(data, p, f)
    n_y, n_u = blocks.n_y, blocks.n_u
    nz = blocks.Zp.shape[0]
    L = np.zeros((f * n_y, nz))
    E = []
    flags = []
    for i in range(f):
        with stage(f"iem stage {i + 1}"):
            parts = [blocks.Zp, blocks.Uf[:i * n_u]] + E
            reg = np.vstack(parts)
            target = blocks.Yf[i * n_y:(i + 1) * n_y]
            res = nx.lstsq_rows(target, reg, rcond)
            if res.rank_deficient:
                flags.append(f"stage_{i + 1}_rank_deficient:{reg.shape[0] - res.rank}")
            L[i * n_y:(i + 1) * n_y] = res.coef[:, :nz]
            E.append(target - res.coef @ reg)
    est = SubspaceEstimate(L, None, diagnostics={"rank_flags": flags, "innovations": E[0]})
    with stage("rank_reduction"):
        est = _attach(est, reduce_rank(L, blocks, "past", order, rcond))
    with stage("extraction"):
        Gam = observability_estimate(est, rcond)
        C, A = shift_invariance(Gam, n_y, rcond)
        X = state_map(est, rcond) @ blocks.Zp
        model, eps = _fit_bk_given_ac(A, C, X, blocks, rcond)
    est.diagnostics["residual_fro"] = float(np.linalg.norm(eps))
    return _result(model, est, blocks, "iem", est.diagnostics)


def pbsid_identify(data, p, f=None, order=AUTO, rcond=None, closed_loop=True):
    """Predictor-based subspace identification.

    VARX Markov parameters of depth ``p`` fill the banded ``Gamma_f Omega_p``;
    the state sequence is read from the SVD of ``Gamma_f Omega_p Zp``.
    """
    f = p if f is None else f
    if f > p:
        raise ValueError("f must not exceed p")
    with stage("regression"):
        blocks = build_regression(data, p, f)
    with stage("varx"):
        mk = varx_markov(data, p, estimate_d=not closed_loop, rcond=rcond)
    GO = build_gamma_omega(mk, p, f, banded=True)
    Q = GO @ blocks.Zp / np.sqrt(blocks.M)
    with stage("rank_reduction"):
        est = SubspaceEstimate(GO, None, diagnostics={"rank_flags": list(mk.rank_flags)})
        red = reduce_rank(Q, blocks, "identity", order, rcond)
        est = _attach(est, red)
    if est.order_used < 1 or not np.any(est.Ss > 0):
        raise DegenerateState("extraction: no nonzero singular values retained")
    X = np.sqrt(est.Ss)[:, None] * est.Vs.T * np.sqrt(blocks.M)
    return _finish_states(X, est, blocks, "pbsid", rcond, closed_loop)


def ssarx_identify(data, p, f=None, order=AUTO, rcond=None, closed_loop=True, regularize=1e-10):
    """SSARX: VARX pre-estimation followed by canonical correlation analysis.

    The predictable future ``Hu Uf + Hy Yf`` is removed from ``Yf`` using the
    VARX Markov parameters; CCA between the remainder ``s`` and ``Zp`` yields
    ``X = S^{1/2} V^T Rzz^{-1/2} Zp``.
    """
    f = p if f is None else f
    if f > p:
        raise ValueError("f must not exceed p")
    with stage("regression"):
        blocks = build_regression(data, p, f)
    with stage("varx"):
        mk = varx_markov(data, p, estimate_d=not closed_loop, rcond=rcond)
    n_y, n_u = blocks.n_y, blocks.n_u
    Hu = toeplitz_from_markov([mk.D] + mk.Gu[:f - 1], f, n_y, n_u)
    Hy = toeplitz_from_markov([np.zeros((n_y, n_y))] + mk.Gy[:f - 1], f, n_y, n_y)
    s = blocks.Yf - Hu @ blocks.Uf - Hy @ blocks.Yf
    if not np.any(s):
        raise DegenerateState("future residual s is identically zero")
    M = blocks.M
    Rss = s @ s.T / M
    Rsz = s @ blocks.Zp.T / M
    Rzz = blocks.Zp @ blocks.Zp.T / M
    flags = list(mk.rank_flags)
    Rss, f1 = _regularize(Rss, regularize, "Rss")
    Rzz, f2 = _regularize(Rzz, regularize, "Rzz")
    flags += f1 + f2
    Wl = nx.sym_inv_sqrt(Rss, rcond)
    Wz = nx.sym_inv_sqrt(Rzz, rcond)
    with stage("rank_reduction"):
        est = SubspaceEstimate(Rsz, None, diagnostics={"rank_flags": flags})
        # the whitened cross covariance is already weighted: identity weighting here
        red = reduce_rank(Wl @ Rsz @ Wz, blocks, "identity", order, rcond)
        est = _attach(est, red)
    if est.order_used < 1 or not np.any(est.Ss > 0):
        raise DegenerateState("extraction: no nonzero canonical correlations retained")
    Om = (np.sqrt(est.Ss)[:, None] * est.Vs.T) @ Wz
    est.diagnostics["canonical_correlations"] = np.asarray(red.singvals)
    X = Om @ blocks.Zp
    return _finish_states(X, est, blocks, "ssarx", rcond, closed_loop)


def _regularize(R, scale, name):
    w = np.linalg.eigvalsh(0.5 * (R + R.T)) if R.size else np.zeros(0)
    if w.size and w[0] <= 0:
        return R + scale * max(float(np.trace(R)), 1.0) * np.eye(R.shape[0]), [f"{name}_regularized"]
    return R, []


def _finish_states(X, est, blocks, algorithm, rcond, closed_loop):
    with stage("extraction"):
        if closed_loop:
            model, e = fit_predictor_states(X, blocks, rcond)
            est.diagnostics["residual_fro"] = float(np.linalg.norm(e))
            return _result(model, est, blocks, algorithm, est.diagnostics)
        model, w, v = fit_from_states(X, blocks, rcond, estimate_d=True)
    est.diagnostics["residual_fro"] = float(np.linalg.norm(v))
    try:
        noise, K, gflags = estimate_kalman_gain(model, w, v)
        model = model.with_gain(K)
        est.diagnostics["gain_flags"] = gflags
    except (SubidError, ValueError, np.linalg.LinAlgError) as exc:
        est.diagnostics["gain_flags"] = [f"gain_failed:{type(exc).__name__}"]
    return _result(model, est, blocks, algorithm, est.diagnostics)


def identify_cl(data, algorithm, p, f=None, order=AUTO, rcond=None, closed_loop=True):
    """Dispatch to :func:`iem_identify`, :func:`ssarx_identify` or :func:`pbsid_identify`."""
    if algorithm == "iem":
        return iem_identify(data, p, p if f is None else f, order, rcond)
    if algorithm == "ssarx":
        return ssarx_identify(data, p, f, order, rcond, closed_loop)
    if algorithm == "pbsid":
        return pbsid_identify(data, p, f, order, rcond, closed_loop)
    raise ValueError(f"unknown closed-loop algorithm {algorithm!r}")
