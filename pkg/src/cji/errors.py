"""Shared exception types."""


class ConfigError(Exception):
    """Invalid configuration (bad schema, out-of-range parameter, ...)."""


class CoefficientOverflowError(ConfigError):
    """A transform exponent would overflow double precision.

    Raised in log-domain before any exp() is attempted, naming the offending
    exponent so the user can shrink w or lambda.
    """


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class DivergenceError(RuntimeError):
    """A sampling chain produced a non-finite state."""

    def __init__(self, step_index, t, kappa1, kappa2):
        super().__init__(
            f"non-finite state at step {step_index} (t={t:.6g}, "
            f"kappa1={kappa1:.6g}, kappa2={kappa2:.6g})"
        )
        self.step_index = step_index
        self.t = t
        self.kappa1 = kappa1
        self.kappa2 = kappa2


class OracleError(RuntimeError):
    """Base class for external oracle failures."""


class OracleTimeoutError(OracleError):
    """The external oracle did not answer within the deadline."""


class OracleProtocolError(OracleError):
    """Malformed handshake, response, or correlation id from the oracle."""


class OracleRemoteError(OracleError):
    """The external oracle reported an error for a request."""
