"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(ArithmeticError):
    """Non-finite or out-of-domain numeric input."""


class TapeError(RuntimeError):
    """Misuse of the autodiff tape (non-scalar loss, repeated backward)."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class IsolatedNodeError(ValueError):
    """A node without any incident hyperedge where one is required."""

    def __init__(self, node_ids, message=None):
        self.node_ids = tuple(node_ids)
        if message is None:
            message = f"isolated node(s) with zero degree: {list(self.node_ids)}"
        super().__init__(message)


class ParseError(ValueError):
    """Malformed dataset file; carries the offending path and line number."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class DataError(ValueError):
    """Semantically invalid dataset or batch contents."""
