"""Exception types shared across the engine."""


class AdaptidxError(Exception):
    """Base class for all engine errors."""


class SchemaError(AdaptidxError):
    """Schema or block invariant violated."""


class BlockFormatError(AdaptidxError):
    """Block file is malformed (bad magic, truncated section, unknown tag)."""


class RegistryError(AdaptidxError):
    """Replica registry operation on an unknown block or inconsistent state."""


class ConfigError(AdaptidxError):
    """Cluster or policy configuration is invalid."""


class PlanningError(AdaptidxError):
    """A job cannot be planned (e.g. a block has no reachable replica)."""
