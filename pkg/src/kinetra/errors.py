"""Exception types shared across kinetra."""


class KinetraError(Exception):
    pass


class ConfigError(KinetraError, ValueError):
    """Invalid run configuration or operation parameters."""


class EscapeError(KinetraError):
    """A characteristic left the declared safety window.

    ``exit_time`` is the (signed) integration time at which the escape was
    first detected.
    """

    def __init__(self, exit_time, message=None):
        self.exit_time = float(exit_time)
        super().__init__(message or f"trajectory left the safety window at t={self.exit_time:.6g}")
