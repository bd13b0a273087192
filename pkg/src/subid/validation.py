"""Input validation for the estimator layer.

Estimator inputs follow the scikit-learn convention of one row per sample;
the functional modules use one column per sample. These helpers convert
between the two and reject malformed data early.
"""
import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import BadShape
from .simdata import DataSet


def as_signal(a, name):
    """Return a samples-first 2-D float array (a 1-D input is a single channel)."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return check_array(arr, ensure_2d=True, ensure_min_features=0, input_name=name)


def check_io(U, Y):
    """Validate an input/output pair and return it as a :class:`DataSet`.

    Parameters
    ----------
    U : array-like, shape (N, n_u) or (N,) or None
        ``None`` means no measured inputs.
    Y : array-like, shape (N, n_y) or (N,)
    """
    Y = as_signal(Y, "Y")
    if U is None:
        U = np.zeros((Y.shape[0], 0))
    else:
        U = as_signal(U, "U")
    if U.shape[0] != Y.shape[0]:
        raise BadShape(f"U has {U.shape[0]} samples but Y has {Y.shape[0]}")
    return DataSet(U.T, Y.T)


def check_window(p, f, n_samples):
    """Reject horizons that leave no regression columns."""
    p, f = int(p), int(f)
    if p < 1 or f < 1:
        raise ValueError("p and f must be >= 1")
    if n_samples < p + f:
        raise ValueError(f"need at least p + f = {p + f} samples, got {n_samples}")
    return p, f


def check_order(order):
    if order is None or order == "auto":
        return "auto"
    order = int(order)
    if order < 1:
        raise ValueError("order must be a positive integer or 'auto'")
    return order
