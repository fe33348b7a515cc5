"""Exception hierarchy for the omqa toolkit.

Library code raises these; the CLI maps them to exit codes (see
``constants.EXIT_CODES``) and records them in the run ledger.
"""


class OmqaError(Exception):
    """Base class for data and contract errors."""

    exit_code = 2


class ParseError(OmqaError):
    """Malformed input line in a triple, ontology or query file."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class SchemaError(OmqaError):
    """A symbol is used with the wrong kind (entity vs. concept)."""


class UnknownSymbolError(OmqaError, LookupError):
    """A name or id is not interned in the symbol table."""


class ConfigError(OmqaError):
    """Invalid configuration value or run.cfg line."""


class InstantiationError(OmqaError):
    """A labeling does not fit the node/edge domains of a query shape."""


class UnsupportedShapeError(OmqaError):
    """The query's computation graph matches none of the supported shapes."""


class ArityError(OmqaError):
    """Operator called with too few inputs."""


class SamplingError(OmqaError):
    """Sampling request cannot be satisfied (e.g. no negative candidates)."""


class NumericError(OmqaError):
    """Non-finite value reached during a forward or backward pass."""

    def __init__(self, message: str, parameter: str | None = None):
        self.parameter = parameter
        super().__init__(message)


class CheckpointError(OmqaError):
    """Checkpoint magic/version mismatch or truncated file."""


class ContractError(OmqaError):
    """A caller violated an operation's precondition."""
