"""Collector error types."""


class CollectError(Exception):
    """Configuration, data, or model problems surfaced before/while collecting."""
