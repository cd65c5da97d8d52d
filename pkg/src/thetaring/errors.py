"""Exception types shared across the package.

Errors fall into three rough bands: invalid input (bad period matrix,
out-of-range derivative order), numerical non-convergence (series radius,
Newton searches), and genericity failures (parameter draws that land on or
too close to a divisor, ill-conditioned linear systems).  The pipeline
treats the genericity band as retryable; everything else propagates.
"""


class ThetaRingError(Exception):
    """Base class for all package errors."""


class InvalidOmega(ThetaRingError):
    """Period matrix is not symmetric or its imaginary part is too small."""


class NonConvergent(ThetaRingError):
    """A theta series could not be summed to the requested accuracy."""


class RadiusCap(NonConvergent):
    """Required truncation radius exceeds the configured cap."""


class OnDivisor(ThetaRingError):
    """Evaluation point is too close to the theta divisor for a quotient."""


class NoConvergence(ThetaRingError):
    """Newton iteration failed to locate a root."""


class WrongCount(ThetaRingError):
    """Divisor intersection produced a number of classes other than two."""


class Degenerate(ThetaRingError):
    """Intersection points collide or a Jacobian/gradient matrix is singular."""


class IllConditioned(ThetaRingError):
    """A linear system exceeded its condition-number budget."""


class BadFit(ThetaRingError):
    """Least-squares fit failed its holdout residual check."""


class OrderCap(ThetaRingError):
    """Operator composition would exceed the configured order cap."""


class MissingDerivative(ThetaRingError):
    """An applied family does not supply a required partial derivative."""


class DivisorHit(ThetaRingError):
    """A denominator theta value dips below its floor on the sample domain."""


#: Genericity failures: the pipeline may redraw parameters and retry.
RETRYABLE = (WrongCount, Degenerate, IllConditioned, DivisorHit, OnDivisor,
             NoConvergence)
