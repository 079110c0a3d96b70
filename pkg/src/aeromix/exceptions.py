"""Exception hierarchy shared by all aeromix modules.

Every error carries an ``error_class`` slug so the command line driver can
report a single machine-parsable line.
"""


class AeromixError(Exception):
    error_class = "aeromix-error"
    exit_code = 1


class GridFormatError(AeromixError, ValueError):
    """Malformed or invalid AGF grid file."""

    error_class = "parse-error"
    exit_code = 3

    def __init__(self, message, path=None, line=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.line = line


class TableFormatError(AeromixError, ValueError):
    error_class = "parse-error"
    exit_code = 3


class DuplicateKeyError(TableFormatError):
    error_class = "duplicate-key"


class GeometryMismatchError(AeromixError, ValueError):
    error_class = "geometry-mismatch"
    exit_code = 4


class ValidationError(AeromixError, ValueError):
    error_class = "validation-error"
    exit_code = 4


class InsufficientDataError(AeromixError, ValueError):
    error_class = "insufficient-data"
    exit_code = 4


class DegenerateInputError(AeromixError, ValueError):
    error_class = "degenerate-input"
    exit_code = 4


class KrigingError(AeromixError, ArithmeticError):
    error_class = "numeric-error"
    exit_code = 4


class PipelineError(AeromixError, RuntimeError):
    error_class = "pipeline-error"
    exit_code = 4


class ConfigError(AeromixError, ValueError):
    error_class = "config-error"
    exit_code = 2


class InputMissingError(AeromixError, FileNotFoundError):
    error_class = "input-missing"
    exit_code = 2
