"""Exception hierarchy shared across the package."""


class MTDNNError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MTDNNError, ValueError):
    pass


class NumericError(MTDNNError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""


class GraphError(MTDNNError, RuntimeError):
    pass


class ContractError(MTDNNError, ValueError):
    pass


class InputError(MTDNNError, ValueError):
    pass


class ConfigError(MTDNNError, ValueError):
    pass


class CheckpointError(MTDNNError, ValueError):
    pass


class ParseError(InputError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.path = path
        self.line = line
