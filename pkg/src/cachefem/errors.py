"""Exception types raised across the package."""


class MeshError(ValueError):
    """Base class for problems with mesh input."""


class MeshParseError(MeshError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class MeshValidationError(MeshError):
    pass


class DegenerateElementError(MeshError):
    def __init__(self, element, message="degenerate element"):
        super().__init__(f"element {element}: {message}")
        self.element = element


class ConfigurationError(ValueError):
    """Inconsistent boundary, contact or material setup."""


class PartitionError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


class CommError(RuntimeError):
    """Transport failure during a scheduled exchange."""

    def __init__(self, message, stage=None, pair=None):
        where = []
        if stage is not None:
            where.append(f"stage {stage}")
        if pair is not None:
            where.append(f"pair {pair[0]}-{pair[1]}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.stage = stage
        self.pair = pair


class ProtocolError(CommError):
    """Message header or payload length did not match the expected exchange."""
