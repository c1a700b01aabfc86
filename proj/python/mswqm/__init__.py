"""Python access to the mswq library: simulate, reduce and control water-quality models."""

from ._core import (
    Case,
    McCormickEnvelope,
    NumericalError,
    OutOfScopeError,
    ValidationError,
    mccormick,
    route,
    solve_qp,
)

__all__ = [
    "Case",
    "McCormickEnvelope",
    "NumericalError",
    "OutOfScopeError",
    "ValidationError",
    "mccormick",
    "route",
    "solve_qp",
]
__version__ = "1.0.0"
