"""Exception hierarchy.

Data problems (bad input files, invariant violations) derive from
``PanelDataError``; problems that arise while estimating derive from
``EstimationError``. The CLI maps the two families to exit codes 1 and 2.
"""


class DidError(Exception):
    """Base class for every error raised by didkit."""


class PanelDataError(DidError, ValueError):
    """Input data violates the panel contract."""


class MissingColumnError(PanelDataError):
    pass


class TreatmentReversalError(PanelDataError):
    pass


class DuplicateRecordError(PanelDataError):
    pass


class EstimationError(DidError):
    """An estimator could not produce a result."""


class InestimableError(EstimationError):
    """The requested quantity is not estimable on this sample.

    Raised for empty or undersized cells and empty cohorts. Grid estimation
    skips pairs that raise it, and the bootstrap counts replicates that raise
    it as failed instead of aborting.
    """


class EmptyCellError(InestimableError):
    pass


class EmptyCohortError(InestimableError):
    pass


class CollinearityError(EstimationError):
    pass


class SupportError(EstimationError):
    pass


class NoPrePeriodsError(EstimationError):
    pass


class BootstrapInstabilityError(EstimationError):
    pass
