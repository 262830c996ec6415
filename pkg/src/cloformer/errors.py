"""Exception types. Each carries a short ``category`` used by the CLI error line."""


class CloError(Exception):
    category = "error"


class DimensionError(CloError, ValueError):
    category = "dimension"


class ArgumentError(CloError, ValueError):
    category = "argument"


class ConfigError(CloError, ValueError):
    category = "config"


class NumericError(CloError, ArithmeticError):
    category = "numeric"


class FormatError(CloError, ValueError):
    category = "format"
