"""Dense linear-algebra primitives.

Everything here is a pure function of its inputs. Truncation thresholds are
relative to the largest singular value (or eigenvalue) and default to
:func:`default_rcond`, which honours the ``SUBID_RCOND`` environment variable.
"""
import os
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .exceptions import BadShape, NotPsd, NumericalFailure

_RCOND = 1e-12


def default_rcond():
    """Global relative truncation threshold (``SUBID_RCOND`` overrides)."""
    env = os.environ.get("SUBID_RCOND")
    if env:
        try:
            return float(env)
        except ValueError:
            pass
    return _RCOND


def _rc(rcond):
    return default_rcond() if rcond is None else float(rcond)


def as_matrix(m, name="matrix"):
    """Return ``m`` as a finite 2-D float array (1-D input becomes a column)."""
    a = np.asarray(m, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    elif a.ndim != 2:
        raise BadShape(f"{name} must be 2-D, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return a


class SvdResult(NamedTuple):
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


class LstsqResult(NamedTuple):
    coef: np.ndarray
    rank: int
    rank_deficient: bool


def svd(m, full_matrices=False):
    """Singular value decomposition ``m = U @ diag(S) @ V.T``.

    Falls back to the slower but more robust ``gesvd`` driver when the default
    divide-and-conquer routine fails to converge.
    """
    a = as_matrix(m)
    try:
        U, S, Vt = scipy.linalg.svd(a, full_matrices=full_matrices, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        try:
            U, S, Vt = scipy.linalg.svd(a, full_matrices=full_matrices, lapack_driver="gesvd")
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    return SvdResult(U, S, Vt.T)


def rq(m):
    """Factor ``m = r @ q`` with ``r`` lower triangular and orthonormal rows in ``q``.

    Obtained from the economy QR factorization of ``m.T``. Requires
    ``rows(m) <= cols(m)``.
    """
    a = as_matrix(m)
    if a.shape[0] > a.shape[1]:
        raise BadShape(f"rq needs rows <= cols, got {a.shape}")
    q, r = np.linalg.qr(a.T, mode="reduced")
    return r.T, q.T


def rank(m, rcond=None):
    s = svd(m).S
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > _rc(rcond) * s[0]))


def pinv(m, rcond=None):
    """Moore-Penrose pseudo-inverse with relative truncation ``rcond``."""
    a = as_matrix(m)
    U, S, V = svd(a)
    if S.size == 0 or S[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    keep = S > _rc(rcond) * S[0]
    return (V[:, keep] / S[keep]) @ U[:, keep].T


def lstsq_rows(target, regressors, rcond=None):
    """Solve ``min ||target - theta @ regressors||_F`` for ``theta``.

    Parameters
    ----------
    target : (n_t, M) array
    regressors : (n_r, M) array
    rcond : float, optional
        Singular directions of ``regressors`` below ``rcond * s_max`` are
        discarded, which yields the minimum-norm solution.

    Returns
    -------
    LstsqResult
        ``coef`` of shape (n_t, n_r), numerical rank of the regressors and a
        ``rank_deficient`` flag.
    """
    T = as_matrix(target, "target")
    R = as_matrix(regressors, "regressors")
    if T.shape[1] != R.shape[1]:
        raise BadShape(f"column mismatch: target {T.shape} vs regressors {R.shape}")
    n_r = R.shape[0]
    if n_r == 0:
        return LstsqResult(np.zeros((T.shape[0], 0)), 0, False)
    U, S, V = svd(R)
    if S.size == 0 or S[0] == 0.0:
        return LstsqResult(np.zeros((T.shape[0], n_r)), 0, True)
    keep = S > _rc(rcond) * S[0]
    r = int(np.sum(keep))
    coef = ((T @ V[:, keep]) / S[keep]) @ U[:, keep].T
    return LstsqResult(coef, r, r < n_r)


def row_space_basis(m, rcond=None):
    """Orthonormal rows spanning the row space of ``m`` (numerical rank)."""
    a = as_matrix(m)
    U, S, V = svd(a)
    if S.size == 0 or S[0] == 0.0:
        return np.zeros((0, a.shape[1]))
    keep = S > _rc(rcond) * S[0]
    return V[:, keep].T


def project_out_rows(m, basis):
    """Remove from the rows of ``m`` their component in span(rows of ``basis``).

    ``basis`` must have orthonormal rows; this is ``m @ (I - basis.T @ basis)``
    without forming the M x M projector.
    """
    if basis.shape[0] == 0:
        return np.array(m, dtype=float, copy=True)
    return m - (m @ basis.T) @ basis


def sym_sqrt(m, clip=True):
    """Symmetric square root of a PSD matrix; negative eigenvalues clipped at 0."""
    a = as_matrix(m)
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    if clip:
        w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def sym_inv_sqrt(m, rcond=None, tol=1e-10):
    """Return ``W`` with ``W @ m @ W = I`` on the numerically nonzero eigenspace.

    Raises
    ------
    NotPsd
        If ``m`` is asymmetric beyond ``tol`` or has an eigenvalue below
        ``-tol * max(1, lambda_max)``.
    """
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise BadShape("sym_inv_sqrt needs a square matrix")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if np.max(np.abs(a - a.T), initial=0.0) > tol * scale:
        raise NotPsd("matrix is not symmetric")
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    lmax = float(w[-1]) if w.size else 0.0
    if w.size and w[0] < -tol * max(1.0, abs(lmax)):
        raise NotPsd(f"negative eigenvalue {w[0]:.3e}")
    keep = w > _rc(rcond) * lmax if lmax > 0 else np.zeros_like(w, dtype=bool)
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / np.sqrt(w[keep])
    return (v * inv) @ v.T


def eigvals(m):
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise BadShape("eigvals needs a square matrix")
    try:
        return np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigenvalue iteration failed: {exc}") from exc


def spectral_radius(m):
    if np.size(m) == 0:
        return 0.0
    return float(np.max(np.abs(eigvals(m))))


def principal_angles(a, b, rcond=None):
    """Principal angles (radians) between col(a) and col(b), rank-truncated."""
    qa = row_space_basis(as_matrix(a).T, rcond)
    qb = row_space_basis(as_matrix(b).T, rcond)
    if qa.shape[0] == 0 or qb.shape[0] == 0:
        return np.zeros(0)
    return scipy.linalg.subspace_angles(qa.T, qb.T)
