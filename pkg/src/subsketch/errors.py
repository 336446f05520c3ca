"""Exception types shared across modules."""


class DatasetFormatError(Exception):
    """Malformed dataset file; message carries the file and line number."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""
