"""Exception types shared across the toolkit.

The CLI maps these onto exit codes (config -> 1, data -> 2, anything
else -> 3), so raise the most specific one that applies.
"""


class DfkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(DfkitError):
    """Invalid configuration value or model specification."""


class DataError(DfkitError):
    """Invalid data content: manifests, score files, splits, coverage."""
