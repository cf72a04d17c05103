"""Shared exception base so callers (and the CLI) can catch package errors broadly."""


class CasanovaError(Exception):
    """Base class for all errors raised by this package."""
