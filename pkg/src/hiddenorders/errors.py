class InsufficientDataError(ValueError):
    """Not enough observations for the requested statistic."""


class ConfigError(ValueError):
    """An option value or configuration file cannot be used."""
