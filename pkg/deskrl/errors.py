"""Exception hierarchy shared by every deskrl module."""

from difflib import get_close_matches


class DeskRLError(Exception):
    """Base class for all framework errors."""


class DimensionError(DeskRLError, ValueError):
    """Array shapes do not line up."""


class StateError(DeskRLError, RuntimeError):
    """An object was used out of its lifecycle order."""


class ParameterError(DeskRLError, ValueError):
    """A numeric argument is outside its valid range."""


class BoundsError(DeskRLError, IndexError):
    """An index or discrete action is out of range."""


class NumericalError(DeskRLError, FloatingPointError):
    """A network input or output holds NaN or infinite values."""


class RegistryError(DeskRLError, LookupError):
    """A component name is not registered."""

    def __init__(self, kind: str, name: str, available: list[str]):
        self.kind = kind
        self.name = name
        self.available = sorted(available)
        self.suggestions = get_close_matches(name, self.available, n=3, cutoff=0.5)
        message = f"unknown {kind} '{name}'"
        if self.suggestions:
            message += f" (did you mean: {', '.join(self.suggestions)}?)"
        message += f"; available {kind}s: {', '.join(self.available)}"
        super().__init__(message)

    def __str__(self) -> str:
        return self.args[0]


class UnsupportedEnvironmentError(RegistryError):
    """The environment belongs to an external binding this framework does not ship."""

    def __init__(self, name: str, available: list[str], bindings: list[str]):
        super().__init__("env", name, available)
        self.args = (
            f"environment '{name}' needs an external binding that is not supported "
            f"({', '.join(bindings)}); built-in envs: {', '.join(self.available)}",
        )


class ConfigSchemaError(DeskRLError, ValueError):
    """A configuration document is missing a table or a required key."""


class ConfigTypeError(DeskRLError, TypeError):
    """A configuration value cannot be coerced to the expected type."""


class ConfigFileError(DeskRLError, FileNotFoundError):
    """A configuration document cannot be found or read."""


class ConfigurationError(DeskRLError, ValueError):
    """Components named in a configuration cannot be combined."""


class CompatibilityError(DeskRLError):
    """A checkpoint was written by an incompatible agent or format version."""


class CheckpointIntegrityError(DeskRLError):
    """A checkpoint payload is truncated or corrupted."""


class ActorFailure(DeskRLError):
    """An actor raised while collecting transitions."""

    def __init__(self, actor_id: int, cause: BaseException):
        self.actor_id = actor_id
        self.cause = cause
        super().__init__(f"actor {actor_id} failed: {type(cause).__name__}: {cause}")


class UsageError(DeskRLError):
    """The command line does not follow the launch grammar."""


class RecordFormatError(DeskRLError, ValueError):
    """A metrics or trajectory record cannot be parsed."""


class RunDirError(DeskRLError, OSError):
    """A run directory cannot be created under the logs root."""
