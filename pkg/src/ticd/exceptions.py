"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`TCDError`
and carries the process exit code the command-line front end uses for it.
Argument/domain errors also subclass :class:`ValueError` so that callers using
the estimator API can keep catching the builtin.
"""


class TCDError(Exception):
    exit_code = 1


class ConfigError(TCDError, ValueError):
    """Invalid configuration, hyperparameters or missing credentials."""

    exit_code = 2


class DataError(TCDError, ValueError):
    """Malformed or inconsistent input data / files."""

    exit_code = 3


class ParseError(DataError):
    """An LLM answer could not be turned into relation tuples."""


class TransportError(TCDError):
    """Completion endpoint unreachable, timed out, or returned an error status."""

    exit_code = 4

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class MissingCredentialError(TransportError, ConfigError):
    """The API-key environment variable of an HTTP client is unset.

    It is a configuration problem, but it surfaces when a completion is
    attempted, so the command line reports it with the transport exit code.
    """

    exit_code = 4

    def __init__(self, variable):
        super().__init__(f"API key environment variable {variable!r} is not set")
        self.variable = variable


class DivergenceError(TCDError, ArithmeticError):
    """The optimisation produced a non-finite loss."""

    exit_code = 5

    def __init__(self, message, trace_entry=None):
        super().__init__(message)
        self.trace_entry = trace_entry


class UsageError(TCDError, RuntimeError):
    """API called out of order (e.g. backward without a recorded forward)."""
