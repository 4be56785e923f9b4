"""Exception types shared across the package."""


class TileSparseError(Exception):
    """Base class for all tilesparse errors."""


class InvalidInputError(TileSparseError, ValueError):
    """User-supplied data violates a documented precondition."""


class ContractViolationError(TileSparseError, RuntimeError):
    """A caller-supplied hook or composed structure breaks an API contract."""


class CorruptEncodingError(TileSparseError, ValueError):
    """A serialized or hand-built encoding fails validation."""
