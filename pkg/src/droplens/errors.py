"""Typed errors raised by droplens.

Every error carries an ``exit_code`` so the command-line front end can map
failures to distinct process exit statuses.
"""


class DropletError(Exception):
    exit_code = 1


# ingest
class IngestError(DropletError):
    exit_code = 19


class MissingManifest(IngestError):
    exit_code = 10


class InconsistentDimensions(IngestError):
    exit_code = 11


class NonMonotonicOrdinals(IngestError):
    exit_code = 12


class UnsupportedPixelFormat(IngestError):
    exit_code = 13


class NoFrames(IngestError):
    exit_code = 14


class InvalidField(IngestError):
    exit_code = 15


class MissingTrialId(IngestError):
    exit_code = 16


# imageproc
class AllDarkBackground(DropletError):
    exit_code = 20


class DimensionMismatch(DropletError):
    exit_code = 21


# photometry
class ConstantSeries(DropletError):
    exit_code = 30


class EmptyGroup(DropletError):
    exit_code = 31


class InsufficientData(DropletError):
    exit_code = 32


# physics
class NonPositiveInput(DropletError):
    exit_code = 41


class NonPositiveRadius(NonPositiveInput):
    exit_code = 40


# tracking
class TooShort(DropletError):
    exit_code = 50


# efficacy
class MissingControl(DropletError):
    exit_code = 60


class EmptyInput(DropletError):
    exit_code = 61


class UnknownLabel(DropletError):
    exit_code = 62


class DegenerateControl(DropletError):
    exit_code = 63


class DuplicateTrialId(DropletError):
    exit_code = 64


# synth
class SpecViolation(DropletError):
    exit_code = 70


# cli
class StrideExceedsStack(DropletError):
    exit_code = 80


class UnwritableOutput(DropletError):
    exit_code = 81


def exit_code_table():
    """Return ``[(exit_code, name), ...]`` for every concrete error, sorted."""
    seen = {}
    stack = [DropletError]
    while stack:
        cls = stack.pop()
        seen[cls.__name__] = cls.exit_code
        stack.extend(cls.__subclasses__())
    seen.pop("DropletError")
    seen.pop("IngestError")
    return sorted((code, name) for name, code in seen.items())
