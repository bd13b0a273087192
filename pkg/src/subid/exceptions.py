"""Exception hierarchy shared by every module of the package."""


class SubidError(Exception):
    """Base class for all errors raised by :mod:`subid`."""


class NumericalFailure(SubidError):
    pass


class BadShape(SubidError, ValueError):
    pass


class NotPsd(SubidError, ValueError):
    pass


class RiccatiDivergence(NumericalFailure):
    """Fixed-point iteration did not converge; ``last`` holds the final iterate."""

    def __init__(self, message, last=None, iters=None):
        super().__init__(message)
        self.last = last
        self.iters = iters


class MissingGain(SubidError, ValueError):
    pass


class Unsupported(SubidError, NotImplementedError):
    pass


class NotObservable(SubidError, ValueError):
    pass


class LeadingBlockSingular(NumericalFailure):
    pass


class BadWindow(SubidError, ValueError):
    pass


class RankDeficientRegressors(NumericalFailure):
    def __init__(self, message, deficiency=0):
        super().__init__(message)
        self.deficiency = deficiency


class DegenerateState(NumericalFailure):
    pass


class ShiftSolveIllConditioned(NumericalFailure):
    pass


class NeedDeeperVarx(SubidError, ValueError):
    pass


class BadLoopSpec(SubidError, ValueError):
    pass


class StageError(SubidError):
    """Wraps a failure inside an identification pipeline with the stage label."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
