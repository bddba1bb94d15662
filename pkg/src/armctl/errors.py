"""Exception and warning types shared across the package."""


class ArmctlError(Exception):
    """Base class for all errors raised by this package."""


# --- URDF / model errors ---------------------------------------------------

class MalformedXml(ArmctlError):
    pass


class BranchingChain(ArmctlError):
    pass


class MissingInertial(ArmctlError):
    pass


class UnsupportedJointType(ArmctlError):
    pass


class LimitViolation(ArmctlError):
    pass


class UnknownLink(ArmctlError):
    pass


class NotADescendant(ArmctlError):
    pass


# --- geometry / dynamics errors --------------------------------------------

class NotARotation(ArmctlError):
    pass


class DimensionMismatch(ArmctlError):
    pass


class SingularTask(Warning):
    """Task-space matrix was ill-conditioned; the damped fallback was used.

    Reported as a warning: the control loop must keep running, the damped
    inverse is still returned.
    """


# --- simulation / harness errors -------------------------------------------

class NonFiniteState(ArmctlError):
    pass


class ScenarioParseError(ArmctlError):
    pass


class CsvFormatError(ArmctlError):
    pass


class NonMonotoneTime(ArmctlError):
    pass


# --- protocol errors --------------------------------------------------------

class BindError(ArmctlError):
    pass


class MalformedMessage(ArmctlError):
    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset
