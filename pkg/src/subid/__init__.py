"""Subspace identification of linear state-space models.

Open-loop estimators (least squares on block-Hankel data, constrained
Toeplitz fits, MOESP-type RQ) and closed-loop estimators (IEM, SSARX,
PBSID), with simulation utilities, evaluation metrics, a scikit-learn style
estimator and a command line interface.
"""
from .closedloop import iem_identify, identify_cl, pbsid_identify, ssarx_identify, varx_markov
from .estimators import SubspaceIdentifier
from .evalmetrics import eig_distance, markov_error, vaf
from .exceptions import SubidError
from .openloop import IdentOptions, IdentResult, build_regression, identify_ol
from .simdata import DataSet, ExcitationSpec, LoopSpec, simulate_closed, simulate_open
from .ssmodel import NoiseSpec, SsModel, kalman_predict, riccati_solve

__all__ = [
    "DataSet", "ExcitationSpec", "IdentOptions", "IdentResult", "LoopSpec", "NoiseSpec",
    "SsModel", "SubidError", "SubspaceIdentifier", "build_regression", "eig_distance",
    "iem_identify", "identify_cl", "identify_ol", "kalman_predict", "markov_error",
    "pbsid_identify", "riccati_solve", "simulate_closed", "simulate_open", "ssarx_identify",
    "vaf", "varx_markov",
]
__version__ = "0.1.0"
