class DataError(ValueError):
    """Base class for dataset input problems."""


class UnreadableFileError(DataError):
    pass


class HeaderError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass
