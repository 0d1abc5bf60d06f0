"""Exception types shared across the toolkit."""


class DataError(ValueError):
    """Invalid data: shape/spacing mismatches, bad file contents, out-of-range values."""


class DegenerateInputError(DataError):
    """An input distribution is too degenerate for the requested operation
    (e.g. constant volume where a percentile spread is required)."""
