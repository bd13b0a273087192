"""Similarity-invariant model comparison and data-fit scores."""
import numpy as np

from . import numerics as nx
from .simdata import simulate

MARKOV_EPS = 1e-12


def _sorted_eigs(m):
    ev = nx.eigvals(m.A) if m.n_x else np.zeros(0, dtype=complex)
    return sorted(ev, key=lambda z: (abs(z), np.angle(z)))


def _greedy(a, b):
    """Match each of ``a`` (in order) to the nearest unused element of ``b``."""
    free = list(b)
    worst = 0.0
    for z in a:
        if not free:
            worst = max(worst, abs(z))
            continue
        k = int(np.argmin([abs(z - w) for w in free]))
        worst = max(worst, abs(z - free.pop(k)))
    for w in free:
        worst = max(worst, abs(w))
    return worst


def eig_distance(truth, est):
    """Largest distance between greedily matched eigenvalues of ``A``.

    Eigenvalues are visited by increasing modulus, then angle; unmatched
    eigenvalues count with their modulus. The greedy pass is run in both
    directions and the larger value returned, making the metric symmetric.
    """
    a, b = _sorted_eigs(truth), _sorted_eigs(est)
    return float(max(_greedy(a, b), _greedy(b, a)))


def markov_error(truth, est, depth=5):
    """``max_k ||G_k_est - G_k|| / (||G_k|| + 1e-12)`` for ``k = 0 .. depth``."""
    if truth.n_u != est.n_u or truth.n_y != est.n_y:
        raise ValueError("models must share n_u and n_y")
    g_true = truth.markov(depth)
    g_est = est.markov(depth)
    errs = [np.linalg.norm(ge - gt) / (np.linalg.norm(gt) + MARKOV_EPS)
            for gt, ge in zip(g_true, g_est)]
    return float(max(errs))


def vaf(model, data, skip=0):
    """Variance accounted for (percent) per output channel.

    The model is simulated from a zero initial state on ``data.U``; the first
    ``skip`` samples are excluded. Channels whose output has zero variance get
    ``None``.
    """
    if model.n_u != data.n_u or model.n_y != data.n_y:
        raise ValueError("model and data dimensions differ")
    yhat, _ = simulate(model, data.U)
    y = data.Y[:, skip:]
    err = y - yhat[:, skip:]
    out = []
    for i in range(y.shape[0]):
        vy = np.var(y[i])
        if vy == 0.0:
            out.append(None)
            continue
        out.append(float(100.0 * max(0.0, 1.0 - np.var(err[i]) / vy)))
    return out


def report(truth, est, data=None, depth=5):
    """Metrics report as a JSON-ready dict."""
    return {
        "eig_distance": eig_distance(truth, est),
        "markov_error": markov_error(truth, est, depth),
        "vaf": vaf(est, data) if data is not None else [],
    }
