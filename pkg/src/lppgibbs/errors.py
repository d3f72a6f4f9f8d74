"""Exception types shared by all modules; each maps to a CLI exit code."""


class LppGibbsError(Exception):
    exit_code = 1


class InvalidInput(LppGibbsError, ValueError):
    """Malformed parameters or violated preconditions (exit code 2)."""

    exit_code = 2


class RejectionExhausted(LppGibbsError, RuntimeError):
    """A rejection sampler ran out of attempts (exit code 3).

    ``acceptance`` holds the running acceptance estimate and ``attempts`` the
    number of proposals made.
    """

    exit_code = 3

    def __init__(self, message: str, attempts: int = 0, accepted: int = 0):
        super().__init__(message)
        self.attempts = attempts
        self.accepted = accepted

    @property
    def acceptance(self) -> float:
        return self.accepted / self.attempts if self.attempts else 0.0


class NumericalFailure(LppGibbsError, ArithmeticError):
    """Eigensolver or determinant failure (exit code 4)."""

    exit_code = 4


class FavFailure(LppGibbsError, ValueError):
    """Jump-ensemble data that fails the favourable-event windows (degenerate middle)."""

    exit_code = 2


class KMCancellationWarning(UserWarning):
    """Severe cancellation in a Karlin-McGregor determinant."""
