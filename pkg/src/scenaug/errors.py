"""Exception hierarchy shared across the toolkit.

Every error raised on purpose by this package derives from ScenaugError so
callers can catch one base class at pipeline boundaries.
"""

from __future__ import annotations


class ScenaugError(Exception):
    """Base class for all errors raised by scenaug."""


# --- scenario documents ----------------------------------------------------


class SchemaError(ScenaugError):
    """A scenario document is structurally wrong: missing key, wrong type."""


class IntegrityError(ScenaugError):
    """Cross-reference violations: dangling ids, duplicates, missing ego."""


class ValidationError(ScenaugError):
    """A field value violates its invariant (range, sign, enum member)."""


# --- geometry ---------------------------------------------------------------


class DomainError(ScenaugError):
    """Curve parameter outside [0, 1]."""


class DegenerateError(ScenaugError):
    """Geometry too degenerate to operate on (coincident points, zero length)."""


class RangeError(ScenaugError):
    """Arc-length position beyond the curve by more than the grace margin."""


class UnknownIdError(ScenaugError):
    """A lane or connector id that does not exist in the scenario."""


# --- prompt codec -----------------------------------------------------------


class CodecError(ScenaugError):
    """Base for errors while encoding or parsing agent-facing text."""


class MissingSectionError(CodecError):
    """A required response section header was not found."""


class VectorParseError(CodecError):
    """An agent vector line has the wrong arity or field types."""


class DictParseError(CodecError):
    """A modification dict is missing or malformed."""


class ToolArgError(CodecError):
    """A tool call line was recognized but its arguments are invalid."""


class RatingParseError(CodecError):
    """A quality rating could not be extracted (missing or non-integer score)."""


class StageInputError(CodecError):
    """A visual-QA prompt stage was invoked without its required inputs."""


# --- model backends ---------------------------------------------------------


class BackendError(ScenaugError):
    """A chat backend failed permanently (after retries, or non-retryable)."""


class ScriptExhaustedError(BackendError):
    """A scripted backend ran out of canned responses."""


class PredicateMismatchError(BackendError):
    """A scripted response's expectation did not match the incoming prompt.

    This signals drift between a recorded script and the code under test, so
    it fails loudly instead of returning the wrong canned text.
    """


# --- orchestration ----------------------------------------------------------


class ParseFailure(ScenaugError):
    """The editing agent's output stayed unparseable after the format retry."""


class ToolBudgetExceeded(ScenaugError):
    """The editing agent kept requesting tool calls past the per-run budget."""


# --- evaluation -------------------------------------------------------------


class ShapeError(ScenaugError):
    """A cost matrix is empty, ragged, or contains non-finite entries."""


# --- rendering --------------------------------------------------------------


class RasterError(ScenaugError):
    """Vector image bytes could not be rasterized."""


# --- simulation -------------------------------------------------------------


class RouteError(ScenaugError):
    """No drivable route could be derived for the ego vehicle."""


# --- arena ------------------------------------------------------------------


class ArenaError(ScenaugError):
    """Base for arena bookkeeping errors."""


class UnknownMatchupError(ArenaError):
    """A vote referenced a matchup id that was never served to this rater."""


class DuplicateVoteError(ArenaError):
    """A matchup id was voted on more than once."""
