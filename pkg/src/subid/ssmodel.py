"""LTI state-space models, Kalman filtering and structural checks.

Models are immutable value objects. Matrices follow the usual convention::

    x(t+1) = A x(t) + B u(t) [+ K e(t)]
    y(t)   = C x(t) + D u(t) [+ e(t)]

so that ``A`` is ``n_x x n_x``, ``B`` is ``n_x x n_u``, ``C`` is ``n_y x n_x``,
``D`` is ``n_y x n_u`` and the optional innovation gain ``K`` is ``n_x x n_y``.
A model with ``n_x = 0`` is a static gain ``D``.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import numerics as nx
from .exceptions import (
    BadShape,
    LeadingBlockSingular,
    MissingGain,
    NotObservable,
    NotPsd,
    NumericalFailure,
    RiccatiDivergence,
    Unsupported,
)
from .stacking import ext_controllability, ext_observability, past_vector, toeplitz_h

# singular-value threshold for structural rank decisions
RANK_TOL = 1e-8


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _mat(a, shape, name):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.zeros(shape)
    a = a.reshape(shape) if a.ndim < 2 and a.size == shape[0] * shape[1] else a
    if a.shape != shape:
        raise BadShape(f"{name} has shape {a.shape}, expected {shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return a


@dataclass(frozen=True, eq=False)
class SsModel:
    """Discrete-time LTI realization ``(A, B, C, D)`` with optional Kalman gain ``K``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    K: Optional[np.ndarray] = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.size == 0:
            A = np.zeros((0, 0))
        if A.shape[0] != A.shape[1]:
            raise BadShape(f"A must be square, got {A.shape}")
        n_x = A.shape[0]
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        n_y, n_u = D.shape
        B = _mat(self.B, (n_x, n_u), "B")
        C = _mat(self.C, (n_y, n_x), "C")
        D = _mat(D, (n_y, n_u), "D")
        A = _mat(A, (n_x, n_x), "A")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "C", _frozen(C))
        object.__setattr__(self, "D", _frozen(D))
        if self.K is not None:
            object.__setattr__(self, "K", _frozen(_mat(self.K, (n_x, n_y), "K")))

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]

    @property
    def n_y(self):
        return self.C.shape[0]

    def with_gain(self, K):
        return SsModel(self.A, self.B, self.C, self.D, K)

    def similarity(self, T):
        """Realization in the coordinates ``x' = T x``."""
        T = np.asarray(T, dtype=float)
        Ti = np.linalg.inv(T)
        K = None if self.K is None else T @ self.K
        return SsModel(T @ self.A @ Ti, T @ self.B, self.C @ Ti, self.D, K)

    def markov(self, depth):
        """Impulse response blocks ``[D, CB, CAB, ...]`` of length ``depth + 1``."""
        out = [np.array(self.D)]
        M = self.B.copy()
        for _ in range(depth):
            out.append(self.C @ M)
            M = self.A @ M
        return out

    def to_dict(self):
        d = {
            "n_x": self.n_x,
            "n_u": self.n_u,
            "n_y": self.n_y,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
        }
        if self.K is not None:
            d["K"] = self.K.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        n_x, n_u, n_y = int(d["n_x"]), int(d["n_u"]), int(d["n_y"])

        def get(key, shape):
            return np.asarray(d[key], dtype=float).reshape(shape)

        K = get("K", (n_x, n_y)) if d.get("K") is not None else None
        return cls(get("A", (n_x, n_x)), get("B", (n_x, n_u)), get("C", (n_y, n_x)),
                   get("D", (n_y, n_u)), K)


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Joint covariance of measurement noise ``v`` and process noise ``w``.

    ``E[[v; w][v; w]^T] = [[R, S^T], [S, Q]]``.
    """

    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if Q.size == 0:
            Q = np.zeros((0, 0))
        n_x, n_y = Q.shape[0], R.shape[0]
        S = _mat(self.S, (n_x, n_y), "S")
        if Q.shape != (n_x, n_x) or R.shape != (n_y, n_y):
            raise BadShape("Q and R must be square")
        object.__setattr__(self, "Q", _frozen(Q))
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "S", _frozen(S))

    @property
    def joint(self):
        return np.block([[self.R, self.S.T], [self.S, self.Q]])

    def validate(self, tol=1e-10):
        """Raise :class:`NotPsd` unless ``R > 0`` and the joint matrix is PSD."""
        J = self.joint
        if np.max(np.abs(J - J.T), initial=0.0) > tol * max(1.0, np.max(np.abs(J))):
            raise NotPsd("joint noise covariance is not symmetric")
        if self.R.size and np.min(np.linalg.eigvalsh(0.5 * (self.R + self.R.T))) <= 0:
            raise NotPsd("R must be positive definite")
        if np.min(np.linalg.eigvalsh(0.5 * (J + J.T))) < -tol * max(1.0, np.max(np.abs(J))):
            raise NotPsd("joint noise covariance is not PSD")
        return self

    @classmethod
    def innovation(cls, K, cov_e):
        """Noise pair ``w = K e``, ``v = e`` induced by an innovation covariance."""
        K = np.atleast_2d(np.asarray(K, dtype=float))
        Re = np.atleast_2d(np.asarray(cov_e, dtype=float))
        return cls(K @ Re @ K.T, Re, K @ Re)

    def to_dict(self):
        return {"Q": self.Q.tolist(), "R": self.R.tolist(), "S": self.S.tolist()}

    @classmethod
    def from_dict(cls, d):
        R = np.atleast_2d(np.asarray(d["R"], dtype=float))
        Q = np.atleast_2d(np.asarray(d["Q"], dtype=float))
        S = np.asarray(d["S"], dtype=float).reshape(Q.shape[0], R.shape[0])
        return cls(Q, R, S)


@dataclass(frozen=True, eq=False)
class PredictorModel:
    Atil: np.ndarray
    Btil: np.ndarray
    K: np.ndarray
    C: np.ndarray
    D: np.ndarray


@dataclass(frozen=True, eq=False)
class ObserverPredictorModel:
    Abrv: np.ndarray
    Bbrv: np.ndarray
    Lambda: np.ndarray
    K: np.ndarray
    C: np.ndarray
    D: np.ndarray


@dataclass(frozen=True)
class StructureReport:
    stable: bool
    observable: bool
    controllable: bool
    minimal: bool
    minphase: Optional[bool] = None


def _full_rank(m, n):
    if n == 0:
        return True
    s = nx.svd(m).S
    return bool(s.size >= n and s[0] > 0 and s[n - 1] > RANK_TOL * s[0])


def check_structure(m, noise=None):
    """Stability, observability, controllability and minimum-phase flags."""
    n = m.n_x
    stable = nx.spectral_radius(m.A) < 1 - 1e-10
    observable = _full_rank(ext_observability(m.A, m.C, max(n, 1)), n)
    Bc = m.B
    if noise is not None:
        Bc = np.hstack([m.B, nx.sym_sqrt(noise.Q)])
    controllable = _full_rank(ext_controllability(m.A, Bc, max(n, 1)), n)
    minphase = None
    if m.K is not None:
        minphase = nx.spectral_radius(m.A - m.K @ m.C) < 1
    return StructureReport(stable, observable, controllable, observable and controllable, minphase)


def riccati_step(A, C, Q, R, S, P):
    """One step of the prediction Riccati recursion; returns ``(P_next, K)``."""
    G = S + A @ P @ C.T
    Re = R + C @ P @ C.T
    try:
        K = np.linalg.solve(Re.T, G.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("R + C P C^T is singular") from exc
    P_next = A @ P @ A.T + Q - K @ G.T
    return 0.5 * (P_next + P_next.T), K


def riccati_solve(m, noise, p0=None, tol=1e-12, max_iter=100000):
    """Steady-state prediction error covariance by fixed-point iteration.

    Iterates the Riccati difference equation from ``p0`` (identity by default)
    until ``||P_{k+1} - P_k||_F < tol * ||P_k||_F``.

    Returns
    -------
    P, K, iters
    """
    A, C = m.A, m.C
    Q, R, S = noise.Q, noise.R, noise.S
    P = np.eye(m.n_x) if p0 is None else np.array(p0, dtype=float)
    K = np.zeros((m.n_x, m.n_y))
    eps = np.finfo(float).eps
    a2 = np.linalg.norm(A, 2) ** 2 if m.n_x else 0.0
    for it in range(1, max_iter + 1):
        P_next, K = riccati_step(A, C, Q, R, S, P)
        delta = np.linalg.norm(P_next - P)
        ref = np.linalg.norm(P)
        P = P_next
        # the roundoff floor stops one-ulp limit cycles and covers a fixed point at P = 0
        floor = 16 * eps * (a2 * ref + np.linalg.norm(Q))
        if delta <= tol * ref or delta <= floor:
            _, K = riccati_step(A, C, Q, R, S, P)
            return P, K, it
        if not np.all(np.isfinite(P)):
            break
    raise RiccatiDivergence(f"no convergence after {max_iter} iterations", last=P, iters=max_iter)


def to_predictor(m):
    if m.K is None:
        raise MissingGain("predictor form needs the Kalman gain K")
    return PredictorModel(m.A - m.K @ m.C, m.B - m.K @ m.D, m.K, m.C, m.D)


def to_observer_predictor(m, Lambda):
    if m.K is None:
        raise MissingGain("observer-predictor form needs the Kalman gain K")
    L = _mat(Lambda, (m.n_x, m.n_y), "Lambda")
    return ObserverPredictorModel(m.A - L @ m.C, m.B - L @ m.D, L, m.K, m.C, m.D)


def deadbeat_gain(m):
    """Observer gain placing every eigenvalue of ``A - L C`` at the origin.

    Ackermann's formula with desired characteristic polynomial ``z^n``:
    ``L = A^n O^{-1} e_n`` where ``O`` is the observability matrix.
    Single-output systems only.
    """
    if m.n_y != 1:
        raise Unsupported("deadbeat_gain handles n_y = 1 only; supply Lambda for MIMO")
    n = m.n_x
    O = ext_observability(m.A, m.C, n)
    if not _full_rank(O, n):
        raise NotObservable("(A, C) is not observable")
    e_n = np.zeros((n, 1))
    e_n[-1, 0] = 1.0
    return np.linalg.matrix_power(m.A, n) @ np.linalg.solve(O, e_n)


def kalman_predict(m, noise, u, y, x0=None, p0=None):
    """Prediction-only Kalman filter.

    Parameters
    ----------
    m : SsModel
    noise : NoiseSpec
    u : (n_u, N) array
    y : (n_y, N) array
    x0, p0 : initial estimate and its error covariance (zeros by default)

    Returns
    -------
    xhat : (n_x, N + 1) array
        ``xhat[:, t]`` is the prediction of ``x(t)`` from data up to ``t - 1``;
        the last column is the one-step prediction past the data.
    gains : list of (n_x, n_y) arrays
        ``gains[t]`` is the gain used to form ``xhat[:, t + 1]``.
    """
    u = np.asarray(u, dtype=float).reshape(m.n_u, -1)
    y = np.asarray(y, dtype=float).reshape(m.n_y, -1)
    N = y.shape[1]
    if u.shape[1] != N:
        raise BadShape("u and y must have the same number of samples")
    x = np.zeros(m.n_x) if x0 is None else np.asarray(x0, dtype=float).ravel()
    P = np.zeros((m.n_x, m.n_x)) if p0 is None else np.array(p0, dtype=float)
    A, B, C, D = m.A, m.B, m.C, m.D
    xhat = np.empty((m.n_x, N + 1))
    xhat[:, 0] = x
    gains = []
    for t in range(N):
        P, K = riccati_step(A, C, noise.Q, noise.R, noise.S, P)
        x = A @ x + B @ u[:, t] + K @ (y[:, t] - C @ x - D @ u[:, t])
        xhat[:, t + 1] = x
        gains.append(K)
    return xhat, gains


def kf_data_form(m, gains, x0hat, u, y, t):
    """Kalman filter state at time ``t`` as an explicit combination of data.

    ``xhat(t) = (A^t - Delta_t Gamma_t) xhat(0) + Delta_t y_t^-(t)
    + (Omega_t(A, B) - Delta_t H_t) u_t^-(t)`` with
    ``Delta_t = [(A - K(t-1) C) Delta_{t-1}, K(t-1)]`` and an empty ``Delta_0``.
    """
    x0hat = np.asarray(x0hat, dtype=float).ravel()
    if t == 0:
        return x0hat.copy()
    u = np.asarray(u, dtype=float).reshape(m.n_u, -1)
    y = np.asarray(y, dtype=float).reshape(m.n_y, -1)
    A, B, C, D = m.A, m.B, m.C, m.D
    Delta = np.zeros((m.n_x, 0))
    for k in range(t):
        Delta = np.hstack([(A - gains[k] @ C) @ Delta, gains[k]])
    Gam = ext_observability(A, C, t)
    H = toeplitz_h(A, B, C, D, t)
    Om = ext_controllability(A, B, t)
    yp = past_vector(y, t, t)
    up = past_vector(u, t, t)
    At = np.linalg.matrix_power(A, t)
    return (At - Delta @ Gam) @ x0hat + Delta @ yp + (Om - Delta @ H) @ up


def exact_state_deterministic(m, u, y, t):
    """Recover ``x(t)`` exactly from the last ``n_x`` samples of noise-free data.

    Uses the first ``n_x`` rows of ``Gamma_{n_x}(A, C)`` which must be
    invertible (always true for observable single-output systems).
    """
    n = m.n_x
    if n == 0:
        return np.zeros(0)
    if t < n:
        raise ValueError(f"t must be >= n_x = {n}")
    u = np.asarray(u, dtype=float).reshape(m.n_u, -1)
    y = np.asarray(y, dtype=float).reshape(m.n_y, -1)
    Gam = ext_observability(m.A, m.C, n)[:n]
    s = nx.svd(Gam).S
    if s[-1] <= RANK_TOL * s[0]:
        raise LeadingBlockSingular("first n_x rows of the observability matrix are singular")
    H = toeplitz_h(m.A, m.B, m.C, m.D, n)[:n]
    yp = past_vector(y, n, t)[:n]
    up = past_vector(u, n, t)
    An = np.linalg.matrix_power(m.A, n)
    x_past = np.linalg.solve(Gam, yp - H @ up)
    return An @ x_past + ext_controllability(m.A, m.B, n) @ up
