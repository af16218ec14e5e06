"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError/UsageError -> 1,
DataError -> 2, NumericalFailure -> 3.
"""


class KdarError(Exception):
    pass


class UsageError(KdarError):
    pass


class ConfigError(KdarError):
    pass


class DataError(KdarError):
    pass


class ParseError(DataError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class EmptyDatasetError(DataError):
    pass


class EmptyAfterFilterError(DataError):
    pass


class CheckpointError(DataError):
    pass


class NumericalFailure(KdarError):
    pass
