"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ContractError(ValueError):
    """A caller violated an operation's contract (empty batch, non-scalar loss, ...)."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class InfeasibilityError(ValueError):
    """Requested sampling or routing is impossible with the given data."""


class DataIntegrityError(RuntimeError):
    """Stored artifacts do not match their recorded checksums."""


class CapabilityError(ValueError):
    """A report or export was requested from a model variant that cannot provide it."""


class RoutingError(ValueError):
    """A triplet's condition index has no mask column or specialist network."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss or gradient."""
