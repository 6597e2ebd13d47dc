"""Exception hierarchy shared by all modules."""


class BathyoptError(Exception):
    """Base class for every error raised by this package."""

    code = "error"

    def to_record(self) -> dict:
        return {"error": self.code, "type": type(self).__name__, "message": str(self)}


class InvalidDomainError(BathyoptError, ValueError):
    code = "invalid-domain"


class InvalidRegionError(BathyoptError, ValueError):
    code = "invalid-region"


class InvalidDirectionError(BathyoptError, ValueError):
    code = "invalid-direction"


class IncompatibleFieldError(BathyoptError, ValueError):
    code = "incompatible-field"


class ConstraintViolationError(BathyoptError, ValueError):
    """Raised when a control leaves the admissible box.

    ``offending`` holds the triangle indices at fault, if known.
    """

    code = "constraint-violation"

    def __init__(self, message, offending=None):
        super().__init__(message)
        self.offending = [] if offending is None else [int(t) for t in offending]

    def to_record(self) -> dict:
        rec = super().to_record()
        rec["offending"] = self.offending[:100]
        return rec


class SolverFailureError(BathyoptError, RuntimeError):
    code = "solver-failure"


class AccuracyFailureError(BathyoptError, RuntimeError):
    code = "accuracy-failure"


class InvalidLevelsError(BathyoptError, ValueError):
    code = "invalid-levels"


class ConfigError(BathyoptError, ValueError):
    code = "invalid-config"
