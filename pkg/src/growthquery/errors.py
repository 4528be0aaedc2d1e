"""Exception types shared across the package."""


class FormatError(Exception):
    """A byte stream does not parse as one of the package's file formats.

    ``offset`` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DimensionMismatchError(ValueError):
    """Two objects that must share a grid have different dimensions."""

    @classmethod
    def for_dims(cls, what: str, got, expected) -> "DimensionMismatchError":
        return cls(f"{what}: got dims {got}, expected {expected}")


class EmptyMaskError(ValueError):
    """An operation that needs at least one set voxel received none."""


class NumericalInstabilityError(RuntimeError):
    """The solver produced a non-finite or out-of-range value.

    ``step`` is the time step index at which the check fired.
    """

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (detected at step {step})")
        self.step = step


class DatabaseBuildError(RuntimeError):
    """Database generation gave up; carries acceptance diagnostics."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
