"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line driver:
2 for bad input, 3 for numerical failure, 4 for a safety fault.
"""


class DemoReplayError(Exception):
    exit_code = 3


class InputError(DemoReplayError, ValueError):
    exit_code = 2


class NumericalError(DemoReplayError, ArithmeticError):
    exit_code = 3


class DimensionMismatch(InputError):
    pass


class AngleNearPi(NumericalError):
    """Rotation angle too close to pi for an unambiguous logarithm."""


class RankDeficientModel(InputError):
    """Jacobian has fewer columns than task rows, so det(J J^T) is identically 0."""


class NonFinite(NumericalError):
    pass


class DivergedTracking(NumericalError):
    def __init__(self, message, error=None, time=None):
        super().__init__(message)
        self.error = error
        self.time = time


class ZeroDuration(InputError):
    pass


class AllDiverged(NumericalError):
    pass


class TooFewMarkers(InputError):
    pass


class DegenerateGeometry(InputError):
    pass


class NoRegistrableFrames(InputError):
    pass


class DegenerateComponent(NumericalError):
    pass


class FrameMismatch(InputError):
    pass


class NoOverlap(InputError):
    pass


class WindowOutOfRange(InputError):
    pass


class TorqueLimitExceeded(DemoReplayError):
    exit_code = 4

    def __init__(self, joint, time=None, torque=None, limit=None):
        when = "" if time is None else f" at t={time:.6g} s"
        super().__init__(
            f"torque limit exceeded on joint {joint + 1}{when}: "
            f"|{torque:.6g}| > {limit:.6g} N*m"
        )
        self.joint = joint
        self.time = time
        self.torque = torque
        self.limit = limit
