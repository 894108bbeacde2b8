"""Exception types shared across the toolkit.

Argument validation uses plain ValueError; the classes here mark domain
failures a caller may want to handle distinctly (bad input files, lexicon
gaps, degenerate numeric inputs).
"""


class TtasrError(Exception):
    """Base class for toolkit-specific failures."""


class FormatError(TtasrError):
    """Input file violates the expected on-disk format."""


class UnsupportedRateError(FormatError):
    """Audio sample rate outside the supported {8000, 16000} Hz set."""


class ManifestError(TtasrError):
    """Malformed manifest row; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"manifest line {line}: {message}")
        self.line = line


class OovError(TtasrError):
    """Character without a lexicon entry; carries character and offset."""

    def __init__(self, char: str, offset: int):
        super().__init__(f"out-of-lexicon character {char!r} at offset {offset}")
        self.char = char
        self.offset = offset


class ConfigError(TtasrError):
    """Configuration values are inconsistent or yield a degenerate setup."""


class DegenerateInputError(TtasrError):
    """Numerically degenerate input (e.g. zero-variance features)."""


class CheckpointError(TtasrError):
    """Checkpoint file unreadable or incompatible with the current config."""


class NumericError(TtasrError):
    """Non-finite values where finite ones are required (diverged training)."""
