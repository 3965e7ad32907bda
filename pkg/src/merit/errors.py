"""Exception types shared across the toolkit."""


class MeritError(Exception):
    """Base class for all toolkit errors."""


class FormatError(MeritError):
    """A binary or JSONL artifact is malformed (bad magic, truncation, ...)."""


class DegenerateOutputError(MeritError):
    """A projection head produced a pre-normalization vector with near-zero norm."""
