"""Exception types that map onto CLI exit codes."""


class UsageError(Exception):
    exit_code = 1


class DataError(Exception):
    exit_code = 2


class NumericError(Exception):
    exit_code = 3
