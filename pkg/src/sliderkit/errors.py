"""Exception taxonomy for the slider engine.

Configuration problems (bad grids, bad sampler settings, unparseable
concept files) are distinguished from runtime failures (divergence,
transport faults) so the CLI can map them to distinct exit codes.
"""


class SliderKitError(Exception):
    """Base class for all engine errors."""


class ConfigError(SliderKitError):
    """Invalid configuration supplied by the caller (CLI exit code 1)."""


class NonFiniteScale(ConfigError):
    """A scale grid entry is NaN or infinite."""


class BadConfig(ConfigError):
    """Sampler configuration violates an invariant (e.g. T < 2)."""


class ShapeMismatch(SliderKitError):
    """Tensor operands do not share a shape."""


class NonFiniteState(SliderKitError):
    """An integration step produced NaN/Inf (divergence signal)."""


class UnknownCondition(SliderKitError):
    """A condition id was used before being registered with the backend."""


class SweepExecutionError(SliderKitError):
    """A denoiser or transport error during a sweep, annotated with context."""

    def __init__(self, message, scale=None, step=None):
        super().__init__(message)
        self.scale = scale
        self.step = step


class TransportError(SliderKitError):
    """Connection to an external adapter lost or unusable."""


class ProtocolError(SliderKitError):
    """Malformed or out-of-contract frame received from an adapter."""


class RemoteFailure(SliderKitError):
    """The adapter reported an error; the remote message is preserved."""


class TimeoutError(SliderKitError):
    """No response from the adapter within the configured deadline."""


class DegenerateGrid(SliderKitError):
    """The scale grid cannot support the requested metric (e.g. only eta=0)."""


class EmptyGroup(SliderKitError):
    """A benchmark aggregation group contains no reports."""


class TooFewPoints(SliderKitError):
    """Not enough probe points to fit a reparameterization curve."""


class DegenerateAlignment(SliderKitError):
    """Isotonic alignment values are constant; no invertible span exists."""


class NotInvertible(SliderKitError):
    """The fitted curve has no strictly increasing inverse over its domain."""


class ParseError(ConfigError):
    """Concept spec or plan file could not be parsed."""


class MissingField(ConfigError):
    """A concept spec entry lacks a required field."""

    def __init__(self, index, field):
        super().__init__(f"entry {index} is missing field '{field}'")
        self.index = index
        self.field = field


class IoError(SliderKitError):
    """Report or sweep files could not be written or read."""
