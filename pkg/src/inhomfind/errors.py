"""Exception hierarchy shared by the solver and the CLI."""


class InhomfindError(Exception):
    """Base class for all package errors."""

    #: short machine-parseable tag used in CLI diagnostics
    kind = "error"


class CoincidentPointsError(InhomfindError, ValueError):
    kind = "coincident-points"


class InvariantError(InhomfindError, ValueError):
    kind = "invariant"


class ZeroRadiusError(InhomfindError, ValueError):
    kind = "zero-radius"


class SingularSystemError(InhomfindError, ArithmeticError):
    kind = "singular-system"


class UnderdeterminedError(InhomfindError, ValueError):
    kind = "underdetermined"


class ZeroScatteredFieldError(InhomfindError, ValueError):
    kind = "zero-scattered-field"


class ConfigError(InhomfindError, ValueError):
    kind = "config"


class FormatError(InhomfindError, ValueError):
    """Malformed input file; the message carries line or field location."""

    kind = "parse"
