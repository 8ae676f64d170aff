"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration/validation
problems exit with 2, iterative-solver failures with 3.
"""


class DislomechError(Exception):
    """Base class for all package-specific errors."""


class DomainError(DislomechError, ValueError):
    """A parameter value lies outside the valid evaluation domain."""


class InvalidArgumentError(DislomechError, ValueError):
    """An argument violates a documented precondition."""


class SingularGeometryError(DislomechError):
    """The geometry map has a non-positive Jacobian determinant."""


class ConvergenceError(DislomechError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history if history is not None else []


class IndefinitenessError(DislomechError):
    """CG met a direction of non-positive curvature (matrix not SPD)."""


class InvalidMatrixError(DislomechError, ValueError):
    """A matrix violates the structural requirements of an operation."""


class UnsupportedGeometryError(DislomechError):
    """The operation requires an axis-aligned box patch."""


class DegeneratePlasticityError(DislomechError):
    """det(I + Theta) <= 0 somewhere; the plastic field is unphysically large."""


class InvalidLoopError(DislomechError, ValueError):
    """A Burgers-circuit polyline is not closed."""


class InvertedElementError(DislomechError):
    """det(grad y) <= 0 at a quadrature point of an accepted elastic state."""


class IncompressibleLimitError(DislomechError, ValueError):
    """Poisson ratio at the incompressible limit nu = 1/2."""


class SingularityError(DislomechError, ValueError):
    """Evaluation of a classical field at its singular point r = 0."""


class ConfigError(DislomechError, ValueError):
    """A run configuration field failed validation."""

    def __init__(self, field, message):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


class PipelineError(DislomechError):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage, cause):
        super().__init__(f"pipeline stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
