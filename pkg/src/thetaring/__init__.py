"""Commuting rings of 2x2 matrix differential operators built from
genus-2 theta functions.

The package evaluates Riemann theta functions with characteristics,
locates the divisor data (a theta zero and the two intersection points of
a translated divisor pair), builds the vector Baker-Akhiezer family, and
assembles the ring of matrix differential operators in two variables that
act on it, together with a verification harness that measures every
defining identity numerically.
"""

from .errors import (BadFit, Degenerate, DivisorHit, IllConditioned,
                     InvalidOmega, MissingDerivative, NoConvergence,
                     NonConvergent, OnDivisor, OrderCap, RadiusCap,
                     ThetaRingError, WrongCount)
from .theta import (Characteristic, MultiIndex, RiemannMatrix, ThetaBackend,
                    ZERO_CHAR, get_backend, log_theta_deriv, theta_eval,
                    truncation_radius)
from .avgeom import find_theta_zero, intersect_divisors, reduce_mod_lattice
from .bamodule import BAParams
from .nakayashiki import OperatorRing, SpectralConfig, assemble_config, \
    change_of_basis
from .harness import (RunConfig, build_report, run_pipeline, serialize_ring,
                      to_json)

__all__ = [
    "BadFit", "Degenerate", "DivisorHit", "IllConditioned", "InvalidOmega",
    "MissingDerivative", "NoConvergence", "NonConvergent", "OnDivisor",
    "OrderCap", "RadiusCap", "ThetaRingError", "WrongCount",
    "Characteristic", "MultiIndex", "RiemannMatrix", "ThetaBackend",
    "ZERO_CHAR", "get_backend", "log_theta_deriv", "theta_eval",
    "truncation_radius",
    "find_theta_zero", "intersect_divisors", "reduce_mod_lattice",
    "BAParams",
    "OperatorRing", "SpectralConfig", "assemble_config", "change_of_basis",
    "RunConfig", "build_report", "run_pipeline", "serialize_ring", "to_json",
]

__version__ = "0.1.0"
