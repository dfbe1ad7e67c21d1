class GraphTokensError(Exception):
    """Base class for every error raised by the toolkit."""

    exit_code = 3


class ConfigError(GraphTokensError):
    """Invalid configuration, spec or command-line usage."""

    exit_code = 2


class DimensionError(GraphTokensError, ValueError):
    """Shapes that do not line up."""


class NumericalError(GraphTokensError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class LabelingError(GraphTokensError):
    """A graph is missing the text labels an operation needs."""


class ParseError(GraphTokensError, ValueError):
    def __init__(self, message: str, position: str = ""):
        self.position = position
        super().__init__(f"{position}: {message}" if position else message)


class CoverageError(GraphTokensError):
    def __init__(self, message: str, gaps=()):
        self.gaps = list(gaps)
        shown = ", ".join(str(g) for g in self.gaps[:10])
        more = f" (+{len(self.gaps) - 10} more)" if len(self.gaps) > 10 else ""
        super().__init__(f"{message}: {shown}{more}" if self.gaps else message)


class OracleRefusedError(GraphTokensError):
    """The exhaustive PCST oracle only runs on small graphs."""
