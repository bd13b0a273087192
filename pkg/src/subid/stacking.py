"""Stacked vectors, block-Hankel data matrices and structural block matrices.

Time indices are 0-based. For a signal ``r`` stored as an ``n_r x N`` array::

    past vector    r_l^-(t) = [r(t-l); ...; r(t-1)]
    future vector  r_l^+(t) = [r(t); ...; r(t+l-1)]

so ``r_l^-(t) == r_l^+(t - l)``.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import BadShape, BadWindow

PAST = "past"
FUTURE = "future"


def _signal(signal):
    s = np.asarray(signal, dtype=float)
    if s.ndim == 1:
        s = s.reshape(1, -1)
    if s.ndim != 2:
        raise BadShape("signal must be an n_r x N array")
    return s


@dataclass(frozen=True, eq=False)
class HankelBlock:
    data: np.ndarray
    ell: int
    m_cols: int
    n_r: int
    direction: str
    t0: int


def past_vector(signal, ell, t):
    """``r_ell^-(t)`` as a 1-D array (oldest sample first)."""
    s = _signal(signal)
    if ell == 0:
        return np.zeros(0)
    if t - ell < 0 or t - 1 >= s.shape[1]:
        raise BadWindow(f"past window of length {ell} at t={t} leaves the data")
    return s[:, t - ell:t].T.reshape(-1)


def future_vector(signal, ell, t):
    s = _signal(signal)
    if t < 0 or t + ell > s.shape[1]:
        raise BadWindow(f"future window of length {ell} at t={t} leaves the data")
    return s[:, t:t + ell].T.reshape(-1)


def hankel(signal, ell, m_cols, t0, direction=PAST):
    """Block-Hankel matrix whose column ``j`` is the stacked vector at ``t0 + j``.

    A past block starting at ``t0`` holds ``r(t0 + j - ell + k)`` in row block
    ``k``; a future block holds ``r(t0 + j + k)``.
    """
    s = _signal(signal)
    n_r, N = s.shape
    if ell < 1 or m_cols < 1:
        raise BadWindow("ell and m_cols must be >= 1")
    start = t0 - ell if direction == PAST else t0
    if direction not in (PAST, FUTURE):
        raise ValueError(f"direction must be 'past' or 'future', got {direction!r}")
    if start < 0 or start + ell + m_cols - 1 > N:
        raise BadWindow(
            f"{direction} Hankel block (ell={ell}, M={m_cols}, t0={t0}) needs samples "
            f"{start}..{start + ell + m_cols - 2} but only 0..{N - 1} exist")
    data = np.empty((ell * n_r, m_cols))
    for k in range(ell):
        data[k * n_r:(k + 1) * n_r] = s[:, start + k:start + k + m_cols]
    return HankelBlock(data, ell, m_cols, n_r, direction, t0)


def ext_observability(A, C, ell):
    """``[C; CA; ...; CA^(ell-1)]``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if ell < 1:
        raise ValueError("ell must be >= 1")
    blocks = [C]
    for _ in range(ell - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def ext_controllability(A, B, ell):
    """Reversed extended controllability matrix ``[A^(ell-1) B, ..., AB, B]``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim < 2:
        B = B.reshape(A.shape[0], -1)
    if ell < 1:
        raise ValueError("ell must be >= 1")
    blocks = [B]
    for _ in range(ell - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks[::-1])


def toeplitz_from_markov(markov, ell, n_y, n_u):
    """Block lower-triangular Toeplitz matrix with ``markov[k]`` on sub-diagonal ``k``.

    Missing entries (``k >= len(markov)``) are zero.
    """
    H = np.zeros((ell * n_y, ell * n_u))
    for i in range(ell):
        for j in range(i + 1):
            k = i - j
            if k < len(markov):
                H[i * n_y:(i + 1) * n_y, j * n_u:(j + 1) * n_u] = markov[k]
    return H


def toeplitz_h(A, B, C, D, ell):
    """``H_ell(A, B, C, D)``: ``D`` on the diagonal, ``C A^(k-1) B`` below it."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    n_y, n_u = D.shape
    B = np.asarray(B, dtype=float).reshape(A.shape[0], n_u)
    C = C.reshape(n_y, A.shape[0])
    markov = [D]
    M = B
    for _ in range(ell - 1):
        markov.append(C @ M)
        M = A @ M
    return toeplitz_from_markov(markov, ell, n_y, n_u)


def duplication_selector(f, n_y, n_u):
    """0/1 matrix mapping ``vec([G_0, ..., G_{f-1}])`` to ``vec(H_f)``.

    ``vec`` stacks columns (Fortran order); ``G_0 = D`` and ``G_k = C A^(k-1) B``.
    """
    if f < 1:
        raise ValueError("f must be >= 1")
    rows_h = f * n_y
    Pi = np.zeros((rows_h * f * n_u, n_y * n_u * f))
    for i in range(f):
        for j in range(i + 1):
            k = i - j
            for b in range(n_u):
                for a in range(n_y):
                    h_idx = (j * n_u + b) * rows_h + i * n_y + a
                    g_idx = (k * n_u + b) * n_y + a
                    Pi[h_idx, g_idx] = 1.0
    return Pi


def vec(m):
    return np.asarray(m).reshape(-1, order="F")


def unvec(v, shape):
    return np.asarray(v).reshape(shape, order="F")
