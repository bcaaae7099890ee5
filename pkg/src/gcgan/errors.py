"""Exception types shared across modules."""


class ConfigurationError(ValueError):
    """Sizes or settings that cannot work together."""
