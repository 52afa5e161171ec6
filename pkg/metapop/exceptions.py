# -*- coding: utf-8 -*-
"""metapop.exceptions module."""

from typing import Any, Optional

# pylint: disable=too-many-ancestors


class MetapopError(Exception):
    """Base class for all errors raised by this library."""

    def __init__(
        self, *args: Any, message: Optional[str] = None, **_kwargs: Any
    ) -> None:
        """Initialize base MetapopError."""
        super().__init__(*args, message)
        self.message = message


class InvalidModel(MetapopError):
    """Rate model is malformed or violates a required hypothesis."""


class InvalidArgument(MetapopError, ValueError):
    """Argument out of its domain."""


class ConfigError(InvalidArgument):
    """Run configuration is malformed."""


class NoBound(MetapopError):
    """The comparison bound does not exist, (H2) is violated."""


class CouplingBug(MetapopError):
    """Pathwise domination of a coupled pair was violated."""

    def __init__(self, *args: Any, time: float, y: int, w: int, **kwargs: Any) -> None:
        """Initialize."""
        super().__init__(
            *args,
            message=f"Coupling violated at t={time}: Y={y}, W={w}",
            **kwargs,
        )
        self.time = time
        self.y = y
        self.w = w


class NoEquilibrium(MetapopError):
    """No nontrivial equilibrium exists, (H2) is violated."""

    def __init__(self, *args: Any, diagnostic: Any, **kwargs: Any) -> None:
        """Initialize from the diagnostic proving the absence of an equilibrium."""
        super().__init__(
            *args,
            message="(H2) is violated, there is no nontrivial equilibrium",
            **kwargs,
        )
        self.diagnostic = diagnostic


class NumericalError(MetapopError):
    """A numerical procedure failed."""


class TruncationDiverged(NumericalError):
    """Truncation grew to its cap without the tail becoming negligible."""

    def __init__(
        self, *args: Any, n: int, tail: float, message: Optional[str] = None, **kwargs: Any
    ) -> None:
        """Initialize."""
        if not message:
            message = f"Tail {tail:.3g} not negligible at truncation N={n}"
        super().__init__(*args, message=message, **kwargs)
        self.n = n
        self.tail = tail


class SpectralDomainError(NumericalError):
    """Resolvent or eigenvalue computation outside its domain."""


class FixedPointFailure(NumericalError):
    """Fixed point of G could not be bracketed."""


class StiffnessError(NumericalError):
    """Integrator step size underflowed."""


class IntegrationDiverged(NumericalError):
    """Integration lost mass or ran into the truncation cap."""


class ComparisonViolated(NumericalError):
    """Mean patch size escaped its comparison envelope."""

    def __init__(
        self, *args: Any, time: float, value: float, bound: float, **kwargs: Any
    ) -> None:
        """Initialize."""
        super().__init__(
            *args,
            message=f"s({time:.6g}) = {value:.12g} exceeds bound {bound:.12g}",
            **kwargs,
        )
        self.time = time
        self.value = value
        self.bound = bound
