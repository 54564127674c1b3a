"""Exception hierarchy shared by the library and the CLI."""


class KscanError(Exception):
    """Base class for all kscan errors."""


class DataError(KscanError, ValueError):
    """Input data is malformed or violates a model's value constraints."""


class GridTooLargeError(KscanError):
    """A candidate-center grid would exceed the configured size guard."""

    def __init__(self, count, limit):
        super().__init__(
            f"grid would contain {count} centers, above the limit of {limit}; "
            "increase epsilon or raise max_centers"
        )
        self.count = count
        self.limit = limit
