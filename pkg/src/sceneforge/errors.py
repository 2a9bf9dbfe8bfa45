"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not agree."""


class ParameterError(ValueError):
    """A parameter is outside its valid range."""


class EmptyInputError(ValueError):
    """An operation received no valid data (e.g. a fully invalid depth map)."""


class DegenerateDepthError(ValueError):
    """Depth statistics are degenerate (zero median, static trajectory, ...)."""


class ConfigurationError(ValueError):
    """A configuration value or combination is invalid.

    ``field_path`` locates the offending entry, e.g. ``"optimizer.lr_color"``.
    """

    def __init__(self, message: str, field_path: str = ""):
        super().__init__(f"{field_path}: {message}" if field_path else message)
        self.field_path = field_path


class StaleCacheError(RuntimeError):
    """A backward pass was handed a cache from a different forward pass."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and the partial report."""

    def __init__(self, stage: str, message: str, report=None):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
        self.report = report


class TransportError(RuntimeError):
    """Remote call failed at the network level after retries."""


class CompleterTimeoutError(TransportError):
    """Remote call exceeded its deadline."""


class ProtocolError(RuntimeError):
    """Remote response violates the wire protocol.

    ``field_path`` names the offending field, e.g. ``"frames[3]"``.
    """

    def __init__(self, message: str, field_path: str = ""):
        super().__init__(f"{field_path}: {message}" if field_path else message)
        self.field_path = field_path
