"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation requires."""


class RangeError(ValueError):
    """A value lies outside its permitted interval."""


class StateError(RuntimeError):
    """An object was used before it was ready, e.g. backward before forward."""


class ConsistencyError(ValueError):
    """On-disk data is self-inconsistent (counts, names, manifest)."""


class ParseError(ValueError):
    """A file could not be decoded. The message always names the file."""

    def __init__(self, path, reason):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")
