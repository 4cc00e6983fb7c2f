"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Dimension mismatches, bad config fields, incompatible checkpoints."""


class MalformedEpisodeError(ValueError):
    """Episode violates the transition invariants (counter/decision laws)."""


class NumericalAbort(ArithmeticError):
    """A learner produced a non-finite loss; the run must stop."""
