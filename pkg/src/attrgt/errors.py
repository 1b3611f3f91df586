"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class AttrGTError(Exception):
    exit_code = 3


class ConfigError(AttrGTError, ValueError):
    """Invalid configuration or domain-type construction."""

    exit_code = 3


class DimensionError(AttrGTError, ValueError):
    exit_code = 3


class UndefinedMetricError(AttrGTError, ArithmeticError):
    """A metric is undefined for its inputs (e.g. all-zero attribution)."""

    exit_code = 4


class SizeError(AttrGTError, ValueError):
    exit_code = 3


class TrainingError(AttrGTError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class FormatError(AttrGTError, OSError):
    """Malformed or unreadable blob/manifest/attribution file."""

    exit_code = 2

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = None if path is None else str(path)
