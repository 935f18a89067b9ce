"""Exception hierarchy for otnav."""


class OtnavError(Exception):
    """Base class for all errors raised by this package."""


class RangeError(OtnavError, IndexError):
    """A cell index or coordinate falls outside the grid."""


class OverlapError(OtnavError, ValueError):
    """Two entities (robot, target, obstacle) were placed on the same cell."""


class ImbalanceError(OtnavError, ValueError):
    """Balanced transport requested but the marginal masses differ."""


class InfeasibleError(OtnavError):
    """No finite-cost transport plan exists for the requested arc set."""


class MalformedPlanError(OtnavError):
    """A transport plan cannot be decomposed into robot-to-target chains."""


class StallError(OtnavError):
    """A replan iteration routed no new robot."""


class DegenerateError(OtnavError, ValueError):
    """Input too small to build the requested object."""


class TooLargeError(OtnavError, ValueError):
    """Problem exceeds the exhaustive enumeration bound."""


class InfeasibleMpcError(OtnavError):
    """The contraction constraint could not be met.

    The best-effort solution is attached as ``solution`` so callers can
    still apply it.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution
