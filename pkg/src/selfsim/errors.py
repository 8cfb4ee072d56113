"""Shared exception types.

Numerical primitives raise subclasses of :class:`NumericsError` so that
drivers can distinguish recoverable numerical failures (rejected optimizer
steps, exit code 3) from programming errors.
"""


class NumericsError(Exception):
    """Base class for numerical failures raised by selfsim primitives."""


class SingularPointError(NumericsError):
    """Division or reciprocal of a jet whose value coefficient is zero."""


class DomainError(NumericsError):
    """Primitive evaluated outside its domain (sqrt/log/pow of bad base)."""


class RangeError(NumericsError):
    """Overflow guard tripped (exponential with |pre-activation| > 700)."""


class SingularQuadratureError(NumericsError):
    """Collocation point coincides with a quadrature node."""


class PropagationError(NumericsError):
    """Non-finite value produced during residual propagation."""


class ContractError(ValueError):
    """Caller violated an interface contract (shapes, orders, flags)."""


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""
