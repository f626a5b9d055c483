"""Exception types shared across the library."""


class MalformedFileError(ValueError):
    """Input bytes violate the declared file format."""


class KeyRangeError(ValueError):
    """A cell coordinate does not fit the packed 64-bit key layout."""


class UndefinedMetricError(ValueError):
    """The requested metric has no defined value (every class is absent)."""
