"""Exception types shared across the package."""


class AlboxError(Exception):
    """Base class for all albox errors."""


class InvalidBoxError(AlboxError):
    """A rotated box has non-finite or non-positive dimensions."""


class ParseError(AlboxError):
    """A text record could not be parsed.

    ``line`` is the 1-based line number within the source, when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownClassError(ParseError):
    """An annotation names a category not present in the class list."""


class CalibrationError(ParseError):
    """A prediction's probability mass is too far from 1 to renormalize."""


class DegenerateProbabilityError(AlboxError):
    """A probability vector has no mass to normalize."""


class DuplicateLabelError(AlboxError):
    """A prediction was submitted for labeling more than once."""


class UnknownImageError(AlboxError):
    """A record references an image the pool does not contain."""


class SceneTooDenseError(AlboxError):
    """Rejection sampling could not place an object within the attempt cap."""


class ConfigError(AlboxError):
    """An experiment configuration is missing or inconsistent."""


class CheckpointMismatchError(AlboxError):
    """A checkpoint does not belong to the experiment being resumed."""
