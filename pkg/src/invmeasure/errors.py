"""Exception hierarchy shared by all stages."""


class InvMeasureError(Exception):
    """Base class for every error raised by this package."""


class NonFiniteInput(InvMeasureError, ValueError):
    pass


class DegreeOrder(InvMeasureError, ValueError):
    pass


class DegreeOverflow(InvMeasureError, ValueError):
    pass


class DimensionMismatch(InvMeasureError, ValueError):
    pass


class DimensionNotOne(InvMeasureError, ValueError):
    pass


class OrbitEscaped(InvMeasureError, RuntimeError):
    pass


class SimulationDiverged(InvMeasureError, RuntimeError):
    pass


class NonFiniteState(InvMeasureError, RuntimeError):
    pass


class NoCrossings(InvMeasureError, RuntimeError):
    pass


class NewtonDiverged(InvMeasureError, RuntimeError):
    pass


class NumericalBreakdown(InvMeasureError, RuntimeError):
    pass


class MaxIterExceeded(InvMeasureError, RuntimeError):
    """Raised only when the caller asks for strict convergence."""


class CenteringFailed(InvMeasureError, RuntimeError):
    pass


class SingularReference(InvMeasureError, RuntimeError):
    pass


class ExtractionFailed(InvMeasureError, RuntimeError):
    pass


class ConfigError(InvMeasureError, ValueError):
    pass


class StageError(InvMeasureError, RuntimeError):
    """Wraps a failure inside a pipeline stage and records which stage."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
