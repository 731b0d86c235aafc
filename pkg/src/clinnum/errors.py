"""Exception types shared across the package."""


class ClinnumError(Exception):
    """Base class for all package errors."""


class MalformedNumeric(ClinnumError, ValueError):
    """Digits are present but no numeric form matches."""


class LengthMismatch(ClinnumError, ValueError):
    pass


class DimensionMismatch(ClinnumError, ValueError):
    pass


class ShapeError(ClinnumError, ValueError):
    pass


class NumericalError(ClinnumError, ArithmeticError):
    pass


class OutOfVocab(ClinnumError, IndexError):
    pass


class SequenceTooLong(ClinnumError, ValueError):
    pass


class EmptyDataset(ClinnumError, ValueError):
    pass


class DivergedLoss(ClinnumError, ArithmeticError):
    """Training loss became non-finite."""


class OutOfTableRange(ClinnumError, ValueError):
    pass


class TemplateError(ClinnumError, ValueError):
    """A generator template produced a span the tokenizer does not reproduce."""


class ClassTooSmallWarning(UserWarning):
    """A class has too few occurrences to be distributed across a split."""


class DegenerateClassWarning(UserWarning):
    """A class has no gold or predicted occurrences; its F1 is reported as 0."""


class ConfigError(ClinnumError, ValueError):
    """Invalid or inconsistent run configuration."""
