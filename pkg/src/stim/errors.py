class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(ValueError):
    """Malformed input data."""


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given labels (e.g. a single class)."""
