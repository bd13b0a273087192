"""scikit-learn style front end to the identification pipelines."""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .closedloop import identify_cl
from .evalmetrics import vaf
from .openloop import ALGORITHMS as OL_ALGORITHMS
from .openloop import IdentOptions, identify_ol
from .simdata import DataSet, simulate
from .validation import as_signal, check_io, check_order, check_window

CL_ALGORITHMS = ("iem", "ssarx", "pbsid")


class SubspaceIdentifier(BaseEstimator):
    """Identify a state-space model from input/output records.

    Parameters
    ----------
    p, f : int
        Past and future horizons.
    order : int or "auto"
        Model order; ``"auto"`` picks the largest singular-value gap.
    algorithm : str
        One of the open-loop estimators (``ols_joint``, ``ols_projected``,
        ``moesp_rq``, ``cls_vectorized``, ``cls_twostep``, ``cls_causal``) or a
        closed-loop one (``iem``, ``ssarx``, ``pbsid``).
    extraction : {"state", "observability"}
        Realization route for the open-loop estimators.
    weighting : {"identity", "cca"}
    rcond : float, optional
        Relative truncation threshold; defaults to the library setting.
    twostep_iters : int
    closed_loop : bool
        For the closed-loop algorithms, fix ``D = 0``.

    Attributes
    ----------
    model_ : SsModel
    order_ : int
    singular_values_ : ndarray
    result_ : IdentResult
    """

    def __init__(self, p=10, f=10, order="auto", algorithm="ols_projected", extraction="state",
                 weighting="identity", rcond=None, twostep_iters=3, closed_loop=True):
        self.p = p
        self.f = f
        self.order = order
        self.algorithm = algorithm
        self.extraction = extraction
        self.weighting = weighting
        self.rcond = rcond
        self.twostep_iters = twostep_iters
        self.closed_loop = closed_loop

    def fit(self, U, Y):
        """Fit on samples-first arrays ``U`` (N, n_u) and ``Y`` (N, n_y)."""
        data = check_io(U, Y)
        p, f = check_window(self.p, self.f, data.N)
        order = check_order(self.order)
        if self.algorithm in CL_ALGORITHMS:
            data = DataSet(data.U, data.Y, closed_loop=self.closed_loop)
            res = identify_cl(data, self.algorithm, p, f, order, self.rcond, self.closed_loop)
        elif self.algorithm in OL_ALGORITHMS:
            opts = IdentOptions(p=p, f=f, order=order, algorithm=self.algorithm,
                                extraction=self.extraction, weighting=self.weighting,
                                rcond=self.rcond, twostep_iters=self.twostep_iters)
            res = identify_ol(data, opts)
        else:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        self.result_ = res
        self.model_ = res.model
        self.order_ = res.order
        self.singular_values_ = np.asarray(res.singular_values)
        self.n_features_in_ = data.n_u
        return self

    def predict(self, U):
        """Simulated output (N, n_y) from a zero initial state."""
        check_is_fitted(self, "model_")
        U = as_signal(U, "U")
        if U.shape[1] != self.model_.n_u:
            raise ValueError(f"expected {self.model_.n_u} input channels, got {U.shape[1]}")
        Y, _ = simulate(self.model_, U.T)
        return Y.T

    def score(self, U, Y):
        """Mean variance-accounted-for over output channels, as a fraction."""
        check_is_fitted(self, "model_")
        data = check_io(U, Y)
        scores = [v for v in vaf(self.model_, data) if v is not None]
        return float(np.mean(scores)) / 100.0 if scores else float("nan")
