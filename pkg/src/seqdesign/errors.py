"""Exception taxonomy shared across the package.

Errors are split by contract kind so callers (CLI, HTTP service, tests) can
map them to exit codes / status codes without string matching.
"""


class SeqDesignError(Exception):
    """Base class for all package errors."""

    code = "error"


class DomainError(SeqDesignError):
    """An input lies outside the mathematical domain of an operation."""

    code = "domain_error"


class ContractError(SeqDesignError):
    """Shapes, dtypes or argument combinations violate an operation contract."""

    code = "contract_error"


class ConfigError(SeqDesignError):
    """Malformed configuration, unknown preset or override key."""

    code = "config_error"


class ProtocolError(SeqDesignError):
    """Session API called out of order (e.g. observe without a proposal)."""

    code = "protocol_error"


class HorizonError(SeqDesignError):
    """A rollout step was requested beyond the configured horizon."""

    code = "horizon_error"


class UnsupportedMetricError(SeqDesignError):
    """Metric requested for a simulator that cannot support it."""

    code = "unsupported_metric"


class CheckpointError(SeqDesignError):
    """Checkpoint missing, unreadable, or incompatible with the request."""

    code = "checkpoint_error"


class TrainingDiverged(SeqDesignError):
    """Non-finite training loss; carries the diagnostic batch seed."""

    code = "training_diverged"

    def __init__(self, message, batch_seed=None, step=None):
        super().__init__(message)
        self.batch_seed = batch_seed
        self.step = step
