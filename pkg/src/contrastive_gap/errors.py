"""Exception hierarchy shared by every module."""

from __future__ import annotations


class ContrastiveGapError(Exception):
    """Base class for all errors raised by this package."""


class ZeroVector(ContrastiveGapError, ValueError):
    """A row could not be projected to the sphere because its norm vanished."""


class NumericalOverflow(ContrastiveGapError, ArithmeticError):
    """A stabilized computation still produced non-finite values."""


class DegenerateBatch(ContrastiveGapError, ValueError):
    """The batch is too small for the requested term (e.g. an empty negative sum)."""


class DegenerateData(ContrastiveGapError, ValueError):
    """The data carries no variance to analyse."""


class TooFewSamples(ContrastiveGapError, ValueError):
    """Not enough rows for a meaningful train/test split."""


class GridTooSmall(ContrastiveGapError, ValueError):
    """An attribute grid needs at least two attributes per subject."""


class Divergence(ContrastiveGapError, ArithmeticError):
    """Full-data loss blew past the divergence guard."""


class ConfigError(ContrastiveGapError, ValueError):
    """Invalid run configuration.

    Args:
        key: Dotted path of the offending key (may be empty for whole-file errors).
        reason: Human-readable explanation.
    """

    def __init__(self, key: str, reason: str):
        self.key = key
        self.reason = reason
        super().__init__(f"{key}: {reason}" if key else reason)
