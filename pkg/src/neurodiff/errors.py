"""Exception types shared across the toolkit."""


class ConfigError(ValueError):
    """Invalid problem, option, or experiment configuration."""


class DimensionMismatch(ConfigError):
    """Array dimensions are inconsistent (rhs output vs state, W vs b, ...)."""


class OutOfRange(ValueError):
    """A query time lies outside the covered interval."""


class HistoryQueryAhead(RuntimeError):
    """A delayed-state query asked for time beyond the completed history.

    This is a programming error in the rhs: with step size capped at the
    minimum lag every legal query lands in already-integrated intervals.
    """


class AdjointUnsupported(RuntimeError):
    """The adjoint backend cannot handle this problem class."""


class SolveFailure(RuntimeError):
    """A solver returned a non-success retcode where a solution was required.

    Carries the offending ``path`` (with partial results) when one exists;
    batched Monte-Carlo failures pass the retcode directly.
    """

    def __init__(self, path=None, message=None, retcode=None):
        self.path = path
        self.retcode = retcode if retcode is not None else (path.retcode if path is not None else None)
        name = self.retcode.name if self.retcode is not None else "unknown"
        super().__init__(message or f"solver failed: {name}")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training; ``record`` holds the trace."""

    def __init__(self, record, iteration):
        self.record = record
        self.iteration = iteration
        super().__init__(f"non-finite loss at iteration {iteration}")
