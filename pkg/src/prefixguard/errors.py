"""Exception hierarchy shared across the package.

Two broad families matter to callers: ``DataError`` (bad or inconsistent
input data, CLI exit code 3) and ``BackendError`` (a generator or scorer
backend misbehaved, CLI exit code 4).
"""

from __future__ import annotations


class PrefixGuardError(Exception):
    """Base class for all package errors."""


class DataError(PrefixGuardError):
    """Invalid, inconsistent, or missing input data."""


class IndexOutOfRange(DataError):
    """A token index points outside its sentence."""


class InconsistentVerdict(DataError):
    """An edit pair was judged unfaithful but seed and modified are identical."""


class SchemaVersionError(DataError):
    """A corpus or trace file declares an unsupported schema version."""


class RecordOutOfRange(DataError):
    """A record's relative position falls outside (0, 1]."""


class EmptyInput(DataError):
    """An operation that needs at least one item received none."""


class EmptySummary(EmptyInput):
    """A summary with zero sentences cannot be assigned a faithfulness score."""


class MissingScore(DataError):
    """A candidate reached logit adjustment without an entailment probability."""


class EmptyCandidates(DataError):
    """Nucleus selection received an empty candidate list."""


class IncompleteTrace(DataError):
    """A decode trace lacks the counters needed for cost reconciliation."""


class BackendError(PrefixGuardError):
    """A generator or scorer backend failed or returned garbage."""


class TransportError(BackendError):
    """Network failure talking to a remote backend (after one retry)."""


class MalformedResponse(BackendError):
    """A backend response is missing fields or has the wrong shape."""


class ScoreOutOfRange(BackendError):
    """A backend returned an entailment probability outside [0, 1].

    Out-of-range scores are an error, never silently clamped.
    """


class UnknownPrefix(BackendError):
    """A mock generator was asked about a prefix its table does not declare."""


class UnknownHypothesis(BackendError):
    """A mock scorer was asked about a pair it has no entry for."""
