"""Exception types shared across the package."""


class ConceptfitError(Exception):
    """Base class for every error this package raises deliberately."""


class ValidationError(ConceptfitError):
    """A value or domain object failed one of its invariants."""


class DimensionMismatchError(ConceptfitError):
    """Two inputs disagree on the size of a shared axis."""

    def __init__(self, axis, expected, got):
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(
            f"dimension mismatch on axis '{axis}': expected {expected}, got {got}"
        )


class DataFormatError(ConceptfitError):
    """A data file is malformed; carries the offending line number(s)."""

    def __init__(self, message, path=None, lines=()):
        self.path = str(path) if path is not None else None
        self.lines = tuple(lines)
        where = f"{self.path}: " if self.path else ""
        if self.lines:
            plural = "s" if len(self.lines) > 1 else ""
            at = f" (line{plural} {', '.join(str(n) for n in self.lines)})"
        else:
            at = ""
        super().__init__(f"{where}{message}{at}")


class EmptyVocabularyError(ConceptfitError):
    """Vocabulary construction removed every candidate word."""


class InfeasibleSplitError(ConceptfitError):
    """A holdout split could not keep every question and learner covered."""


class NonFiniteGradientError(ConceptfitError):
    """A subproblem gradient came back with NaN or infinity."""

    def __init__(self, iteration):
        self.iteration = iteration
        super().__init__(f"non-finite gradient at solver iteration {iteration}")


class DivergenceError(ConceptfitError):
    """The outer loop produced a non-finite objective.

    Carries the last state with a finite objective and the partial report.
    """

    def __init__(self, message, state=None, report=None):
        self.state = state
        self.report = report
        super().__init__(message)
