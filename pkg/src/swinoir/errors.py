"""Exception types raised across the package."""


class SwinOIRError(Exception):
    """Base class for all package errors."""


class ShapeError(SwinOIRError, ValueError):
    """Operand shapes violate an operation's shape contract."""


class DomainError(SwinOIRError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class ContractError(SwinOIRError, RuntimeError):
    """A precondition on call order or state was violated."""


class ConfigError(SwinOIRError, ValueError):
    """Inconsistent model or training configuration."""


class CheckpointError(SwinOIRError, IOError):
    """A checkpoint file is missing, malformed, or of an unsupported version."""


class DetectionParseError(SwinOIRError, ValueError):
    """A detection record could not be parsed or validated."""
