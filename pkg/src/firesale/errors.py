"""Exception types raised across the package."""


class FiresaleError(Exception):
    """Base class for package errors."""


class InputError(FiresaleError, ValueError):
    """Malformed input data; ``row``/``field`` locate the offending entry when known."""

    def __init__(self, message, row=None, field=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.field = field


class DomainError(FiresaleError, ValueError):
    """Parameter outside the domain where a formula is defined."""


class PreconditionViolated(FiresaleError, ValueError):
    """A criterion was applied to a system it does not cover."""


class IntegrationFailure(FiresaleError, RuntimeError):
    """Quadrature did not reach the requested precision."""


class LadderNotConverged(FiresaleError, RuntimeError):
    """The epsilon ladder for chi* did not settle at its smallest epsilon."""

    def __init__(self, message, ladder=None):
        super().__init__(message)
        self.ladder = ladder
