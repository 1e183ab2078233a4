"""Exception hierarchy shared by all modules."""


class StarstabError(Exception):
    """Base class for library errors."""


class ConfigError(StarstabError):
    """Invalid user input or configuration record."""


class InvalidLawError(ConfigError):
    """Pressure law violates an admissibility assumption."""


class NumericalError(StarstabError):
    """A numerical procedure failed to converge or produced non-finite output."""


class StarSolveError(NumericalError):
    """Steady-state shooting failed (no vacuum boundary, step underflow)."""


class InvariantError(StarstabError):
    """A checked identity or invariant was violated beyond tolerance."""


class IndeterminateError(StarstabError):
    """A sign-based decision could not be made within the zero threshold."""
