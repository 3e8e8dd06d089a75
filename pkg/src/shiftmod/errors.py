"""Exception hierarchy; each class maps to a CLI exit code."""


class ShiftmodError(Exception):
    exit_code = 1


class ConfigError(ShiftmodError):
    exit_code = 2


class DataError(ShiftmodError):
    exit_code = 3


class EstimationError(ShiftmodError):
    exit_code = 4
