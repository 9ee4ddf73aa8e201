"""Exception hierarchy shared by all emoalign modules.

The command-line layer maps these onto exit codes: argument/dimension
problems are usage errors (1), format/validation problems are data errors
(2), and numeric/degenerate problems are numeric errors (3).
"""


class EmoAlignError(Exception):
    """Base class for every error raised by this package."""


class ArgumentError(EmoAlignError):
    """A parameter value violates an operation's preconditions."""


class DimensionError(ArgumentError):
    """Array shapes are inconsistent with what an operation requires."""


class DataError(EmoAlignError):
    """Base class for problems with stored or loaded data."""


class FormatError(DataError):
    """A binary or JSON artifact does not follow its declared format."""


class ValidationError(DataError):
    """Structurally well-formed data violates a semantic invariant."""


class NumericError(EmoAlignError):
    """A computation produced or encountered non-finite values."""


class DegenerateInputError(NumericError):
    """Input is mathematically degenerate (e.g. zero-norm vector for cosine)."""
