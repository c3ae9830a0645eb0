"""Exceptions shared across persistence code."""


class MalformedFile(ValueError):
    """A persisted artifact failed to parse; the message names the offender."""
