from click import UsageError


class CustomErrors(Exception):
    """Base class for custom errors"""

    def __eq__(self, other: object) -> bool:
        return type(self) == type(other)

    def __hash__(self) -> int:
        return hash(type(self))


class DomainError(CustomErrors, ValueError):
    """An argument lies outside the domain of the operation"""

    pass


class NonFiniteInput(DomainError):
    """A state, control or step contains nan / inf"""

    pass


class GainOutOfRange(DomainError):
    """Feedback gain outside (0, 1/T^2]"""

    pass


class EmptyTrajectory(DomainError):
    """A trajectory with no samples cannot be extrapolated"""

    pass


class CorridorViolation(CustomErrors):
    """
    The vehicle is already outside its lateral corridor.
    Only possible if an upstream bound was violated
    """

    pass


class HorizonMismatch(CustomErrors):
    """Obstacle trajectory does not cover the planning horizon"""

    pass


class NonFiniteCost(CustomErrors):
    """The objective evaluates to nan / inf at the initial guess"""

    pass


class StaleSnapshot(CustomErrors):
    """World snapshot is older than one step"""

    pass


class InitializationFailed(CustomErrors):
    """Vehicles could not be placed without overlap"""

    pass


class EmergencyReplanFailed(CustomErrors):
    """The reformulated (emergency) plan is still flagged by a collision detector"""

    def __init__(self, message: str, dump: dict | None = None) -> None:
        super().__init__(message)
        self.dump = dump if dump is not None else {}


class CollisionAuditFailure(CustomErrors):
    """Two vehicle rectangles overlap in the simulated world"""

    def __init__(self, message: str, dump: dict | None = None) -> None:
        super().__init__(message)
        self.dump = dump if dump is not None else {}


# Config file errors
class ConfigFileInvalid(UsageError):
    """Error raised when the config file cannot be parsed"""

    pass


class ConfigSchemaError(ConfigFileInvalid):
    """Error raised when the config file contains unknown keys or invalid values"""

    def __init__(self, keys: list[str], message: str | None = None) -> None:
        self.keys = list(keys)
        if message is None:
            message = f"Invalid config keys: {', '.join(self.keys)}"
        super().__init__(message)


# Instance file errors
class InstanceFileInvalid(UsageError):
    """Error raised when an OCP instance file is invalid"""

    pass
