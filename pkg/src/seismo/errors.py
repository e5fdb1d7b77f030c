"""Exception types raised across the package."""

from __future__ import annotations


class SeismoError(Exception):
    """Base class for all package errors."""


class NonFinite(SeismoError):
    """A simulation produced a non-finite or diverged state."""


class InvalidConfig(SeismoError):
    """A configuration value is out of its allowed range.

    ``path`` names the offending key (e.g. ``"excitation.duration"``) when known.
    """

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ZeroRecord(SeismoError):
    """A ground motion with zero peak acceleration cannot be scaled."""


class ParseError(SeismoError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class NonUniformSampling(SeismoError):
    pass


class SimulationFailure(SeismoError):
    """Too many samples diverged while assembling a dataset."""


class DegenerateChannel(SeismoError):
    """A normalizer channel has max == min on the training split."""


class VersionMismatch(SeismoError):
    pass


class ChecksumMismatch(SeismoError):
    pass


class CacheMismatch(SeismoError):
    """A forward cache does not belong to the model or gradient it is paired with."""


class LengthMismatch(SeismoError):
    pass


class ShapeMismatch(SeismoError):
    pass


class ZeroVariance(SeismoError):
    pass


class Diverged(SeismoError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
