"""Exception hierarchy shared across the package.

Each class carries the process exit code the CLI maps it to.
"""


class OADError(Exception):
    exit_code = 4


class DimensionError(OADError, ValueError):
    """Operand shapes are incompatible for the requested operation."""

    exit_code = 3


class ContractError(OADError, RuntimeError):
    """A caller violated an operation's precondition."""

    exit_code = 4


class ValidationError(OADError, ValueError):
    exit_code = 3


class ConfigError(OADError, ValueError):
    """Invalid model or run configuration."""

    exit_code = 2


class NumericError(OADError, ArithmeticError):
    exit_code = 4


class StreamFormatError(ValidationError):
    """A feature-stream file failed to parse or validate.

    ``code`` is one of ``bad_magic``, ``bad_version``, ``truncated_payload``,
    ``label_out_of_range``, ``non_finite_feature``, ``bad_csv``.
    """

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code
