class NonConvergence(RuntimeError):
    """An iteration did not meet its tolerance; ``history`` holds the trace."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []


class TruncationOverflow(RuntimeError):
    """Exact computation needs cells beyond the configured maximum index."""


class ReducibleChain(ValueError):
    """Operation requires an irreducible chain on the truncation."""


class NoReturn(ValueError):
    """State lies on no cycle within the truncation."""
