"""Exception taxonomy shared by all repkd modules.

The CLI maps these onto process exit codes: configuration and usage
problems exit 2, missing or incompatible artifacts exit 3.
"""


class RepkdError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(RepkdError):
    """Caller passed inputs that break an internal API contract (shape/dim mismatch)."""


class InvalidInput(RepkdError):
    """Data-dependent input is invalid (empty sequence, out-of-vocabulary id, ...)."""


class InvalidConfig(RepkdError):
    """A configuration value is out of range or inconsistent."""


class DegenerateModel(RepkdError):
    """The model assigns zero probability to every complete alignment."""


class FormatError(RepkdError):
    """A binary artifact is corrupt, truncated, or has the wrong magic/version."""


class ConsistencyError(RepkdError):
    """Two artifacts that must agree (e.g. manifest vs. teacher file) do not."""


class MissingArtifact(RepkdError):
    """A required file (checkpoint, teacher reps, posteriors) does not exist."""
