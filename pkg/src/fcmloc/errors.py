class FcmError(Exception):
    """Base class for errors raised by fcmloc."""


class ConfigError(FcmError, ValueError):
    pass


class InvalidInputError(FcmError, ValueError):
    pass


class DivergenceError(FcmError, RuntimeError):
    def __init__(self, t, message=None):
        self.t = float(t)
        super().__init__(message or f"simulation diverged at t={self.t:.4f} s")


class EstimationError(FcmError, ValueError):
    pass


class SingularEffectivenessError(FcmError, ArithmeticError):
    pass


class AlignmentError(FcmError, ValueError):
    pass


class LoadError(FcmError, ValueError):
    pass


class GenerationError(FcmError, RuntimeError):
    pass
