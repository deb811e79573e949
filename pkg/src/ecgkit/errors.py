"""Shared error base for the toolkit.

Every operational failure raises a subclass of :class:`EcgKitError` that
carries a stable machine-readable ``code``. The HTTP service and the CLI
surface these codes verbatim, so the set of codes is a public contract.
"""

from __future__ import annotations


class EcgKitError(Exception):
    """Base class for all structured toolkit errors."""

    code = "internal_error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


def error_codes() -> frozenset[str]:
    """Return the closed set of machine-readable error codes."""
    codes = {EcgKitError.code}
    stack = [EcgKitError]
    while stack:
        cls = stack.pop()
        for sub in cls.__subclasses__():
            codes.add(sub.code)
            stack.append(sub)
    return frozenset(codes)
