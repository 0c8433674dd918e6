"""Exception types shared across the package.

Numerical guard failures (bound violations, lost contractions, singular
Gram systems) are raised as errors rather than silently repaired: they
signal under-resolution or invalid parameters, and the caller should
change the setup, not trust a patched answer.
"""


class ConcentratorError(Exception):
    """Base class for all package errors."""


class NonSubcriticalExponent(ConcentratorError):
    """p outside the subcritical window (2, 6)."""


class NonPositiveLambda(ConcentratorError):
    """Zero-order coefficient lambda = a - omega^2 must be positive."""


class BracketFailure(ConcentratorError):
    """Shooting could not bracket the ground-state height below the ceiling."""


class GreenIdentityViolation(ConcentratorError):
    """The two quadrature routes for beta disagree beyond tolerance."""


class UnknownMetric(ConcentratorError):
    """Metric family name not in the registry."""


class BadParams(ConcentratorError):
    """Parameters invalid for the requested metric family."""


class SingularMetric(ConcentratorError):
    """Metric matrix not invertible (or indefinite) at a point."""


class StepFailure(ConcentratorError):
    """Geodesic integrator could not meet its tolerance."""


class OutsideBall(ConcentratorError):
    """No exponential-map preimage within the cutoff radius."""


class NoConvergence(ConcentratorError):
    """Iterative inversion failed to converge."""


class ShapeMismatch(ConcentratorError):
    """Grid fields combined across incompatible charts or resolutions."""


class MaxIterations(ConcentratorError):
    """Linear solver hit its iteration cap. Carries the achieved residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BoundViolation(ConcentratorError):
    """Computed field exited a maximum-principle bound beyond tolerance."""


class NotOrthogonal(ConcentratorError):
    """Input expected in the kernel-orthogonal complement fails the check."""


class SingularGram(ConcentratorError):
    """Kernel Gram matrix too ill-conditioned to project against."""


class NoContraction(ConcentratorError):
    """Fixed-point increments grew repeatedly; eps too large or grid too coarse."""


class ResolutionTooCoarse(ConcentratorError):
    """Grid cannot resolve the rescaled peak profile."""


class DegenerateDesign(ConcentratorError):
    """Expansion fit attempted without spread in the curvature values."""


class NoCriticalPoint(ConcentratorError):
    """Search region contains no usable critical point."""


class ParseError(ConcentratorError):
    """Config file unreadable or syntactically invalid."""


class ValidationError(ConcentratorError):
    """Config violates a declared invariant."""


class MissingStage(ConcentratorError):
    """Requested output depends on a pipeline stage that has not run."""
