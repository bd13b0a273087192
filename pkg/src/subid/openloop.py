"""Open-loop subspace identification.

The pipeline is: build the block-Hankel regression ``Yf = L Zp + H Uf + noise``,
estimate ``L`` (and optionally the Toeplitz matrix ``H``) by least squares,
reduce the rank of ``L`` with a weighted SVD and finally extract a realization
``(A, B, C, D)`` and a Kalman gain ``K``.
"""
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

import numpy as np

from . import numerics as nx
from .exceptions import (
    BadWindow,
    DegenerateState,
    NotPsd,
    RankDeficientRegressors,
    RiccatiDivergence,
    ShiftSolveIllConditioned,
    SubidError,
)
from .ssmodel import NoiseSpec, SsModel, riccati_solve
from .stacking import FUTURE, PAST, duplication_selector, hankel, toeplitz_from_markov, unvec, vec

AUTO = "auto"
ALGORITHMS = ("ols_joint", "ols_projected", "moesp_rq", "cls_vectorized", "cls_twostep", "cls_causal")
EXTRACTIONS = ("state", "observability")
WEIGHTINGS = ("identity", "cca")

# condition-number ceiling for the shift-invariance solve
SHIFT_COND_MAX = 1e10


@contextmanager
def stage(label):
    """Prefix any library error raised inside the block with ``label``."""
    try:
        yield
    except SubidError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = label
            exc.args = (f"{label}: {exc}",) + tuple(exc.args[1:])
        raise


@dataclass(frozen=True, eq=False)
class RegressionBlocks:
    """Column-aligned data blocks; column ``j`` refers to the present time ``p + j``."""

    Yf: np.ndarray
    Zp: np.ndarray
    Uf: np.ndarray
    p: int
    f: int
    M: int
    n_u: int
    n_y: int


@dataclass(eq=False)
class SubspaceEstimate:
    L: np.ndarray
    H: Optional[np.ndarray] = None
    singvals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    order_used: int = 0
    Us: Optional[np.ndarray] = None
    Ss: Optional[np.ndarray] = None
    Vs: Optional[np.ndarray] = None
    W_l: Optional[np.ndarray] = None
    W_r: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class IdentOptions:
    p: int = 10
    f: int = 10
    order: Union[int, str] = AUTO
    algorithm: str = "ols_projected"
    extraction: str = "state"
    weighting: str = "identity"
    rcond: Optional[float] = None
    twostep_iters: int = 3
    estimate_gain: bool = True

    def validate(self):
        if int(self.p) < 1 or int(self.f) < 1:
            raise ValueError("p and f must be >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.extraction not in EXTRACTIONS:
            raise ValueError(f"unknown extraction {self.extraction!r}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.order != AUTO and int(self.order) < 1:
            raise ValueError("order must be a positive integer or 'auto'")
        if self.twostep_iters < 0:
            raise ValueError("twostep_iters must be >= 0")
        return self


@dataclass(eq=False)
class IdentResult:
    model: SsModel
    order: int
    singular_values: np.ndarray
    algorithm: str
    p: int
    f: int
    noise: Optional[NoiseSpec] = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        diag = {
            "residual_fro": float(self.diagnostics.get("residual_fro", float("nan"))),
            "rank_flags": list(self.diagnostics.get("rank_flags", [])),
        }
        for key in ("gain_flags", "weight_flags"):
            if key in self.diagnostics:
                diag[key] = list(self.diagnostics[key])
        return {
            "model": self.model.to_dict(),
            "order": int(self.order),
            "singular_values": [float(s) for s in self.singular_values],
            "algorithm": self.algorithm,
            "p": int(self.p),
            "f": int(self.f),
            "diagnostics": diag,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            SsModel.from_dict(d["model"]),
            int(d["order"]),
            np.asarray(d.get("singular_values", []), dtype=float),
            d.get("algorithm", ""),
            int(d.get("p", 0)),
            int(d.get("f", 0)),
            None,
            dict(d.get("diagnostics", {})),
        )


class MoespFactors(NamedTuple):
    R32: np.ndarray
    Q2: np.ndarray
    Lhat_basis: np.ndarray
    R: np.ndarray
    Q: np.ndarray


class ReducedRank(NamedTuple):
    Us: np.ndarray
    Ss: np.ndarray
    Vs: np.ndarray
    order_used: int
    singvals: np.ndarray
    W_l: np.ndarray
    W_r: np.ndarray
    flags: list


# ---------------------------------------------------------------- regression
def build_regression(data, p, f):
    """Past/future block-Hankel matrices with ``M = N - p - f + 1`` columns."""
    N = data.N
    if p < 1 or f < 1:
        raise BadWindow("p and f must be >= 1")
    if N < p + f:
        raise BadWindow(f"need N >= p + f = {p + f} samples, got {N}")
    M = N - p - f + 1
    z = np.vstack([data.Y, data.U])
    Zp = hankel(z, p, M, p, PAST).data
    Yf = hankel(data.Y, f, M, p, FUTURE).data
    if data.n_u:
        Uf = hankel(data.U, f, M, p, FUTURE).data
    else:
        Uf = np.zeros((0, M))
    return RegressionBlocks(Yf, Zp, Uf, p, f, M, data.n_u, data.n_y)


def _rank_check(res, n_reg, what, strict):
    flags = []
    if res.rank_deficient:
        deficiency = n_reg - res.rank
        if strict:
            raise RankDeficientRegressors(
                f"{what} has rank {res.rank} < {n_reg} (deficiency {deficiency})", deficiency)
        flags.append(f"{what}_rank_deficient:{deficiency}")
    return flags


def _residual(blocks, L, H):
    R = blocks.Yf - L @ blocks.Zp
    if H is not None and H.size:
        R = R - H @ blocks.Uf
    return float(np.linalg.norm(R))


def ols_joint(blocks, rcond=None, strict=False):
    """Unstructured joint least squares ``[L, H] = Yf [Zp; Uf]^+``.

    Rank-deficient regressors (typical for noise-free data) yield the
    minimum-norm solution and a diagnostic flag, or an error when ``strict``.
    """
    Phi = np.vstack([blocks.Zp, blocks.Uf])
    res = nx.lstsq_rows(blocks.Yf, Phi, rcond)
    flags = _rank_check(res, Phi.shape[0], "zp_uf", strict)
    nz = blocks.Zp.shape[0]
    L, H = res.coef[:, :nz], res.coef[:, nz:]
    return SubspaceEstimate(L, H, diagnostics={"rank_flags": flags, "residual_fro": _residual(blocks, L, H)})


def perp_projector(Uf, rcond=None):
    """Explicit ``M x M`` projector onto the orthogonal complement of row(Uf)."""
    Uf = np.atleast_2d(np.asarray(Uf, dtype=float))
    basis = nx.row_space_basis(Uf, rcond) if Uf.shape[0] else np.zeros((0, Uf.shape[1]))
    return np.eye(Uf.shape[1]) - basis.T @ basis


def _uf_basis(blocks, rcond):
    if blocks.Uf.shape[0] == 0:
        return np.zeros((0, blocks.M))
    return nx.row_space_basis(blocks.Uf, rcond)


def ols_projected(blocks, rcond=None, strict=False):
    """``L = Yf P Zp^T (Zp P Zp^T)^{-1}`` where ``P`` removes the row space of ``Uf``."""
    flags = []
    if blocks.Uf.shape[0] and nx.rank(blocks.Uf, rcond) < blocks.Uf.shape[0]:
        if strict:
            raise RankDeficientRegressors("Uf is rank deficient")
        flags.append("uf_rank_deficient")
    basis = _uf_basis(blocks, rcond)
    Zpp = nx.project_out_rows(blocks.Zp, basis)
    Yfp = nx.project_out_rows(blocks.Yf, basis)
    res = nx.lstsq_rows(Yfp, Zpp, rcond)
    flags += _rank_check(res, Zpp.shape[0], "zp_projected", strict)
    L = res.coef
    return SubspaceEstimate(L, None, diagnostics={
        "rank_flags": flags, "residual_fro": float(np.linalg.norm(Yfp - L @ Zpp))})


def moesp_rq(blocks, rcond=None):
    """Block lower-triangular RQ factorization of ``[Uf; Zp; Yf]``.

    Returns ``R32``, ``Q2`` satisfying ``R32 Q2 = L W_r`` with ``W_r = Zp P``
    and the matching estimate ``Lhat_basis = R32 R22^+`` of ``L``.
    """
    Uf, Zp, Yf = blocks.Uf, blocks.Zp, blocks.Yf
    stacked = np.vstack([Uf, Zp, Yf])
    if stacked.shape[0] > stacked.shape[1]:
        raise BadWindow(f"RQ needs at least {stacked.shape[0]} columns, got {stacked.shape[1]}")
    R, Q = nx.rq(stacked)
    a, b = Uf.shape[0], Uf.shape[0] + Zp.shape[0]
    R22 = R[a:b, a:b]
    R32 = R[b:, a:b]
    Q2 = Q[a:b]
    return MoespFactors(R32, Q2, R32 @ nx.pinv(R22, rcond), R, Q)


def oblique_projection(blocks, rcond=None, strict=True):
    """Oblique projection of row(Yf) along row(Uf) onto row(Zp)."""
    basis = _uf_basis(blocks, rcond)
    Zpp = nx.project_out_rows(blocks.Zp, basis)
    gram = Zpp @ Zpp.T
    r = nx.rank(Zpp, rcond)
    if r < gram.shape[0] and strict:
        raise RankDeficientRegressors(
            f"Zp P has rank {r} < {gram.shape[0]}", gram.shape[0] - r)
    cross = nx.project_out_rows(blocks.Yf, basis) @ Zpp.T
    return cross @ nx.pinv(gram, None if rcond is None else rcond ** 2) @ blocks.Zp


# ------------------------------------------------------- structured least squares
def markov_from_h(H, f, n_y, n_u):
    """First block column of a lower block-Toeplitz matrix: ``[G_0, ..., G_{f-1}]``."""
    return [H[k * n_y:(k + 1) * n_y, :n_u] for k in range(f)]


def _toeplitz_project(H, f, n_y, n_u):
    """Nearest (Frobenius) lower block-Toeplitz matrix: average each block diagonal."""
    markov = []
    for k in range(f):
        blocks = [H[i * n_y:(i + 1) * n_y, (i - k) * n_u:(i - k + 1) * n_u] for i in range(k, f)]
        markov.append(np.mean(blocks, axis=0))
    return toeplitz_from_markov(markov, f, n_y, n_u), markov


def cls_vectorized(blocks, rcond=None, strict=False):
    """Least squares with ``H`` constrained to lower block-Toeplitz form.

    ``L`` is eliminated by projecting out row(Zp); the free Markov parameters
    ``theta = vec([G_0 ... G_{f-1}])`` then solve
    ``vec(Yf P_z) = ((Uf P_z)^T kron I) Pi theta`` and ``L`` is refitted.
    """
    f, n_y, n_u = blocks.f, blocks.n_y, blocks.n_u
    zbasis = nx.row_space_basis(blocks.Zp, rcond)
    Yz = nx.project_out_rows(blocks.Yf, zbasis)
    Uz = nx.project_out_rows(blocks.Uf, zbasis)
    flags = []
    if n_u:
        # compress the M columns onto the row space of Uz: Uz = Ru Qu
        Ru, Qu = nx.rq(Uz) if Uz.shape[0] <= Uz.shape[1] else (Uz, np.eye(Uz.shape[1]))
        target = vec(Yz @ Qu.T)
        Pi = duplication_selector(f, n_y, n_u)
        design = np.kron(Ru.T, np.eye(f * n_y)) @ Pi
        res = nx.lstsq_rows(target[None, :], design.T, rcond)
        flags += _rank_check(res, design.shape[1], "markov_design", strict)
        theta = res.coef.ravel()
        H = unvec(Pi @ theta, (f * n_y, f * n_u))
    else:
        H = np.zeros((f * n_y, 0))
    res = nx.lstsq_rows(blocks.Yf - H @ blocks.Uf, blocks.Zp, rcond)
    flags += _rank_check(res, blocks.Zp.shape[0], "zp", strict)
    L = res.coef
    return SubspaceEstimate(L, H, diagnostics={"rank_flags": flags, "residual_fro": _residual(blocks, L, H)})


def cls_causal(blocks, rcond=None, strict=False):
    """Row-block regressions that exclude non-causal future inputs.

    Block row ``i`` of ``Yf`` is regressed on ``[Zp; u(t) ... u(t+i)]``. The
    returned ``H`` is the nearest block-Toeplitz matrix to the stacked
    lower-triangular coefficients, which are kept as ``diagnostics['H_raw']``.
    """
    f, n_y, n_u = blocks.f, blocks.n_y, blocks.n_u
    nz = blocks.Zp.shape[0]
    L = np.zeros((f * n_y, nz))
    H_raw = np.zeros((f * n_y, f * n_u))
    flags = []
    for i in range(f):
        rows = slice(i * n_y, (i + 1) * n_y)
        reg = np.vstack([blocks.Zp, blocks.Uf[:(i + 1) * n_u]])
        res = nx.lstsq_rows(blocks.Yf[rows], reg, rcond)
        flags += _rank_check(res, reg.shape[0], f"block_row_{i + 1}", strict)
        L[rows] = res.coef[:, :nz]
        H_raw[rows, :(i + 1) * n_u] = res.coef[:, nz:]
    H, _ = _toeplitz_project(H_raw, f, n_y, n_u)
    return SubspaceEstimate(L, H, diagnostics={
        "rank_flags": flags, "residual_fro": _residual(blocks, L, H), "H_raw": H_raw})


def cls_twostep(blocks, iters=3, order=AUTO, rcond=None, strict=False):
    """Alternate between realization-based Toeplitz ``H`` and a refit of ``L``.

    Each iteration extracts ``(A, B, C, D)`` from the current ``L`` through
    the shifted-state route, rebuilds ``H`` from its Markov parameters and
    re-solves ``min ||Yf - H Uf - L Zp||`` for ``L``. ``iters = 0`` returns the
    unstructured joint estimate. Residual norms per iteration are kept in
    ``diagnostics['residual_trace']``.
    """
    est = ols_joint(blocks, rcond, strict)
    trace = [est.diagnostics["residual_fro"]]
    flags = list(est.diagnostics["rank_flags"])
    f, n_y, n_u = blocks.f, blocks.n_y, blocks.n_u
    for k in range(iters):
        with stage(f"cls_twostep iteration {k + 1}"):
            red = reduce_rank(est.L, blocks, "identity", order, rcond)
            est = _attach(est, red)
            model, _, _ = extract_via_state(est, blocks, rcond)
            H = toeplitz_from_markov(model.markov(f - 1), f, n_y, n_u)
            res = nx.lstsq_rows(blocks.Yf - H @ blocks.Uf, blocks.Zp, rcond)
        L = res.coef
        resid = _residual(blocks, L, H)
        trace.append(resid)
        est = SubspaceEstimate(L, H, diagnostics={"rank_flags": flags, "residual_fro": resid})
    est.diagnostics["residual_trace"] = trace
    return est


# ------------------------------------------------------------- rank reduction
def _auto_order(s, cap):
    if s.size == 0 or s[0] == 0.0:
        return 0
    kmax = min(s.size - 1, cap)
    if kmax < 1:
        return 1
    floor = np.finfo(float).eps * s[0]
    ratios = s[:kmax] / np.maximum(s[1:kmax + 1], floor)
    return int(np.argmax(ratios)) + 1


def _cov(m):
    return (m @ m.T) / m.shape[1]


def reduce_rank(L, blocks, weighting="identity", order=AUTO, rcond=None):
    """Weighted SVD ``W_l L W_r = U S V^T`` truncated to the model order.

    ``cca`` weighting uses ``W_l = cov(Yf P)^{-1/2}`` and ``W_r = cov(Zp P)^{1/2}``
    so that the singular values are canonical correlations between the
    input-free future outputs and the past. ``past`` weighting keeps
    ``W_l = I`` and uses ``W_r = cov(Zp)^{1/2}``, so the SVD acts on the fitted
    data ``L Zp`` rather than on coefficients that are poorly determined when
    the past regressors are nearly collinear.
    """
    L = nx.as_matrix(L, "L")
    flags = []
    if weighting == "identity":
        W_l, W_r = np.eye(L.shape[0]), np.eye(L.shape[1])
    elif weighting == "cca":
        basis = _uf_basis(blocks, rcond)
        W_l = nx.sym_inv_sqrt(_cov(nx.project_out_rows(blocks.Yf, basis)), rcond)
        Rz = _cov(nx.project_out_rows(blocks.Zp, basis))
        W_r = nx.sym_sqrt(Rz)
        if nx.rank(Rz, rcond) < Rz.shape[0]:
            flags.append("w_r_rank_deficient")
    elif weighting == "past":
        W_l = np.eye(L.shape[0])
        Rz = _cov(blocks.Zp)
        W_r = nx.sym_sqrt(Rz)
        if nx.rank(Rz, rcond) < Rz.shape[0]:
            flags.append("w_r_rank_deficient")
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    U, S, V = nx.svd(W_l @ L @ W_r)
    if order == AUTO or order is None:
        n = _auto_order(S, 2 * blocks.p * blocks.n_y)
    else:
        n = int(order)
        if n > S.size:
            raise ValueError(f"order {n} exceeds the available {S.size} singular values")
        if S.size and (S[0] == 0.0 or S[n - 1] <= nx._rc(rcond) * S[0]):
            flags.append(f"order_exceeds_rank:{nx.rank(W_l @ L @ W_r, rcond)}")
    return ReducedRank(U[:, :n], S[:n], V[:, :n], n, S, W_l, W_r, flags)


def _attach(est, red):
    est.Us, est.Ss, est.Vs = red.Us, red.Ss, red.Vs
    est.order_used, est.singvals = red.order_used, red.singvals
    est.W_l, est.W_r = red.W_l, red.W_r
    est.diagnostics.setdefault("rank_flags", [])
    est.diagnostics["rank_flags"] = list(est.diagnostics["rank_flags"]) + list(red.flags)
    return est


# ----------------------------------------------------------------- extraction
def state_map(est, rcond=None):
    """``Omega = S^{1/2} V^T W_r^{-1}`` mapping ``Zp`` columns to state estimates."""
    if est.order_used < 1 or est.Ss is None or not np.any(est.Ss > 0):
        raise DegenerateState("no nonzero singular values retained")
    Wr_inv = nx.pinv(est.W_r, rcond) if est.W_r is not None else np.eye(est.Vs.shape[0])
    return (np.sqrt(est.Ss)[:, None] * est.Vs.T) @ Wr_inv


def observability_estimate(est, rcond=None):
    """``Gamma_f = W_l^{-1} U S^{1/2}``."""
    if est.order_used < 1 or est.Ss is None or not np.any(est.Ss > 0):
        raise DegenerateState("no nonzero singular values retained")
    Wl_inv = nx.pinv(est.W_l, rcond) if est.W_l is not None else np.eye(est.Us.shape[0])
    return Wl_inv @ (est.Us * np.sqrt(est.Ss))


def fit_from_states(X, blocks, rcond=None, estimate_d=True):
    """Joint least squares of ``[x(t+1); y(t)] = [[A, B], [C, D]] [x(t); u(t)]``.

    ``X`` holds state estimates at times ``p .. p+M-1``. With
    ``estimate_d=False`` the output equation is fitted with ``D = 0``.
    Returns the model and the residual sequences ``(w, v)``.
    """
    n = X.shape[0]
    if X.shape[1] < 2:
        raise BadWindow("need at least two state columns")
    scale = float(np.max(np.abs(X))) if X.size else 0.0
    if scale == 0.0 or not np.all(np.isfinite(X)):
        raise DegenerateState("estimated state sequence is identically zero")
    n_y, n_u = blocks.n_y, blocks.n_u
    Xn, Xp = X[:, :-1], X[:, 1:]
    y = blocks.Yf[:n_y, :-1]
    u = blocks.Uf[:n_u, :-1]
    reg = np.vstack([Xn, u])
    if estimate_d:
        theta = nx.lstsq_rows(np.vstack([Xp, y]), reg, rcond).coef
        A, B = theta[:n, :n], theta[:n, n:]
        C, D = theta[n:, :n], theta[n:, n:]
    else:
        AB = nx.lstsq_rows(Xp, reg, rcond).coef
        A, B = AB[:, :n], AB[:, n:]
        C = nx.lstsq_rows(y, Xn, rcond).coef
        D = np.zeros((n_y, n_u))
    model = SsModel(A, B, C, D)
    w, v = state_residuals(model, X, blocks)
    return model, w, v


def state_residuals(model, X, blocks):
    """Residuals ``(w, v)`` of ``model`` against a state sequence in its coordinates."""
    n_y, n_u = blocks.n_y, blocks.n_u
    Xn, Xp = X[:, :-1], X[:, 1:]
    y = blocks.Yf[:n_y, :-1]
    u = blocks.Uf[:n_u, :-1]
    w = Xp - model.A @ Xn - model.B @ u
    v = y - model.C @ Xn - model.D @ u
    return w, v


def extract_via_state(est, blocks, rcond=None, estimate_d=True):
    """Realization from the shifted state sequence ``X = Omega Zp``.

    Returns
    -------
    model : SsModel
    w, v : arrays
        State and output residuals of the joint least-squares fit.
    """
    Om = state_map(est, rcond)
    X = Om @ blocks.Zp
    if est.Ss is not None and np.any(est.Ss <= 0):
        raise DegenerateState("a retained singular value is zero")
    return fit_from_states(X, blocks, rcond, estimate_d)


def shift_invariance(Gam, n_y, rcond=None):
    """``C`` and ``A`` from the shift structure of an observability matrix."""
    Gam = nx.as_matrix(Gam, "Gamma")
    if Gam.shape[0] < 2 * n_y:
        raise ValueError("shift invariance needs f >= 2 block rows")
    n = Gam.shape[1]
    if n > Gam.shape[0] - n_y:
        raise ValueError(f"order {n} exceeds (f - 1) * n_y = {Gam.shape[0] - n_y}")
    upper, lower = Gam[:-n_y], Gam[n_y:]
    s = nx.svd(upper).S
    if s.size == 0 or s[-1] == 0.0 or s[0] / s[-1] > SHIFT_COND_MAX:
        cond = np.inf if s.size == 0 or s[-1] == 0.0 else s[0] / s[-1]
        raise ShiftSolveIllConditioned(f"shifted observability block has condition {cond:.3e}")
    A = np.linalg.lstsq(upper, lower, rcond=None)[0]
    return Gam[:n_y].copy(), A


def regress_bd(A, C, U, Y, estimate_d=True, rcond=None):
    """``B`` and ``D`` from ``y(t) = sum_{tau<t} C A^{t-tau-1} B u(tau) + D u(t)``.

    Zero initial state is assumed. The regressor for ``B[:, j]`` is
    ``C S_j(t)`` with ``S_j(t+1) = A S_j(t) + u_j(t) I``.
    """
    n = A.shape[0]
    n_y, N = Y.shape
    n_u = U.shape[0]
    if n_u == 0:
        return np.zeros((n, 0)), np.zeros((n_y, 0))
    S = np.zeros((n_u, n, n))
    # design rows indexed by (t, output); columns: vec(B) then vec(D)
    nB = n * n_u
    nD = n_y * n_u if estimate_d else 0
    design = np.zeros((N, n_y, nB + nD))
    eye_n = np.eye(n)
    for t in range(N):
        for j in range(n_u):
            design[t, :, j * n:(j + 1) * n] = C @ S[j]
        if estimate_d:
            design[t, :, nB:] = np.kron(U[:, t][None, :], np.eye(n_y))
        S = A @ S + U[:, t][:, None, None] * eye_n
    Phi = design.reshape(N * n_y, nB + nD)
    target = Y.T.reshape(-1)
    theta = nx.lstsq_rows(target[None, :], Phi.T, rcond).coef.ravel()
    B = unvec(theta[:nB], (n, n_u))
    D = unvec(theta[nB:], (n_y, n_u)) if estimate_d else np.zeros((n_y, n_u))
    return B, D


def extract_via_observability(est, blocks, data, rcond=None, estimate_d=True):
    """Realization from ``Gamma_f = W_l^{-1} U S^{1/2}``.

    ``C`` is the first block row, ``A`` solves the shift equation and ``B, D``
    come from an output-error regression over the whole record.
    """
    if blocks.f < 2:
        raise ValueError("observability extraction needs f >= 2")
    Gam = observability_estimate(est, rcond)
    C, A = shift_invariance(Gam, blocks.n_y, rcond)
    B, D = regress_bd(A, C, data.U, data.Y, estimate_d, rcond)
    return SsModel(A, B, C, D)


def estimate_kalman_gain(model, w, v, regularize=1e-10):
    """Noise covariances from residuals and the matching steady-state gain.

    Returns
    -------
    noise : NoiseSpec
    K : array
    flags : list of str
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    n = model.n_x
    if w.shape[1] != v.shape[1]:
        raise ValueError("residual sequences must be column aligned")
    if w.shape[1] < 10 * max(n, 1):
        raise ValueError(f"need at least {10 * max(n, 1)} residual columns")
    M = w.shape[1]
    Q = w @ w.T / M
    R = v @ v.T / M
    S = w @ v.T / M
    Q, R = 0.5 * (Q + Q.T), 0.5 * (R + R.T)
    flags = []
    if R.size and np.min(np.linalg.eigvalsh(R)) <= 0:
        bump = regularize * max(float(np.trace(R)), 1.0)
        R = R + bump * np.eye(R.shape[0])
        flags.append("R_regularized")
    noise = NoiseSpec(Q, R, S)
    if n == 0:
        return noise, np.zeros((0, model.n_y)), flags
    _, K, _ = riccati_solve(model, noise)
    return noise, K, flags


# ------------------------------------------------------------------ pipeline
def _estimate_l(blocks, opts):
    algo = opts.algorithm
    if algo == "ols_joint":
        return ols_joint(blocks, opts.rcond)
    if algo == "ols_projected":
        return ols_projected(blocks, opts.rcond)
    if algo == "moesp_rq":
        fac = moesp_rq(blocks, opts.rcond)
        L = fac.Lhat_basis
        return SubspaceEstimate(L, None, diagnostics={"rank_flags": [], "residual_fro": _residual(blocks, L, None)})
    if algo == "cls_vectorized":
        return cls_vectorized(blocks, opts.rcond)
    if algo == "cls_causal":
        return cls_causal(blocks, opts.rcond)
    if algo == "cls_twostep":
        return cls_twostep(blocks, opts.twostep_iters, opts.order, opts.rcond)
    raise ValueError(f"unknown algorithm {algo!r}")


def finish_identification(est, blocks, data, opts, algorithm, estimate_d=True):
    """Extraction plus optional gain estimation shared by all pipelines."""
    diag = est.diagnostics
    diag.setdefault("rank_flags", [])
    with stage("extraction"):
        X = state_map(est, opts.rcond) @ blocks.Zp
        if opts.extraction == "state":
            model, w, v = fit_from_states(X, blocks, opts.rcond, estimate_d)
        else:
            model = extract_via_observability(est, blocks, data, opts.rcond, estimate_d)
            # Gamma and Omega share one state basis, so X is in the model's coordinates
            w, v = state_residuals(model, X, blocks)
    noise = None
    if opts.estimate_gain and model.n_x:
        try:
            noise, K, gflags = estimate_kalman_gain(model, w, v)
            model = model.with_gain(K)
            diag["gain_flags"] = gflags
        except (RiccatiDivergence, NotPsd, ValueError, np.linalg.LinAlgError, SubidError) as exc:
            diag["gain_flags"] = [f"gain_failed:{type(exc).__name__}"]
    return IdentResult(model, est.order_used, np.asarray(est.singvals), algorithm,
                       blocks.p, blocks.f, noise, diag)


def identify_ol(data, opts=None, **kwargs):
    """End-to-end open-loop identification.

    Parameters
    ----------
    data : DataSet
    opts : IdentOptions, optional
        Keyword arguments override or replace the options.

    Returns
    -------
    IdentResult
    """
    opts = IdentOptions(**kwargs) if opts is None else opts
    opts.validate()
    with stage("regression"):
        blocks = build_regression(data, int(opts.p), int(opts.f))
    with stage(opts.algorithm):
        est = _estimate_l(blocks, opts)
    with stage("rank_reduction"):
        red = reduce_rank(est.L, blocks, opts.weighting, opts.order, opts.rcond)
        est = _attach(est, red)
    return finish_identification(est, blocks, data, opts, opts.algorithm)
