"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid configuration: bad JSON, unknown keys, inconsistent options."""


class DataError(Exception):
    """Data fails schema or validation checks (missing columns, non-monotone
    censoring, out-of-range outcomes)."""


class EstimationError(Exception):
    """A nuisance fit or estimator step failed; message carries the time
    point / fold where it happened."""


class PolicyDomainError(EstimationError):
    """An exposure value lies outside the policy's declared support."""


class PositivityWarning(UserWarning):
    """Intervened exposure values fall outside the empirical exposure support."""
