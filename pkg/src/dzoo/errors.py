"""Exception hierarchy shared across the attack engine."""


class DzooError(Exception):
    """Base class for all errors raised by this package."""


class EmbeddingFormatError(DzooError):
    """Embedding file violates the one-token-plus-d-reals line format."""


class DatasetFormatError(DzooError):
    """Dataset file violates the line-delimited json record format."""


class ConfigError(DzooError):
    """Benchmark or service configuration is invalid."""


class VictimError(DzooError):
    """Base class for victim-side failures during an attack."""


class VictimUnavailableError(VictimError):
    """Victim could not be reached after all retries; aborts the run."""


class VictimProtocolError(VictimError):
    """Victim answered, but the response is not a valid probability vector."""


class QueryBudgetExceeded(DzooError):
    """The query ledger's hard cap was hit mid-attack."""
