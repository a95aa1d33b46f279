"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid argument to a constructor or estimator."""


class DensityEvaluationError(ArithmeticError):
    """A density returned a non-finite value at a sample point."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class FlowNumericError(ArithmeticError):
    """A coupling layer produced a non-finite intermediate."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class GradientError(ArithmeticError):
    """A gradient block contains non-finite entries."""

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class SaturationError(ArithmeticError):
    """The harmonic divergence estimate reached 1; RE^2 is unbounded."""


class TrainingDivergedError(RuntimeError):
    """The training objective stayed non-finite for several epochs."""

    def __init__(self, message, last_theta=None, last_log_r=None, epoch=None):
        super().__init__(message)
        self.last_theta = last_theta
        self.last_log_r = last_log_r
        self.epoch = epoch


class ModelFormatError(ValueError):
    """A saved flow file is malformed or inconsistent with its header."""
