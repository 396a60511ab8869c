from __future__ import annotations


class SurvfixError(ValueError):
    """Base class for input and estimation errors raised by this package."""


class EmptyCohortError(SurvfixError):
    pass


class DegenerateTestError(SurvfixError):
    pass


class ZeroVarianceError(SurvfixError):
    pass


class CollinearFeaturesError(SurvfixError):
    pass


class NoSignificantFeaturesError(SurvfixError):
    pass


class NoComparablePairsError(SurvfixError):
    pass


class UnstableBootstrapError(SurvfixError):
    pass


class BudgetTooSmallError(SurvfixError):
    pass


class UnknownVariableError(SurvfixError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class StageError(SurvfixError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException, index: int | None = None, bundle=None):
        where = f"stage {index} {stage!r}" if index is not None else f"stage {stage!r}"
        super().__init__(f"{where} failed: {cause}")
        self.stage = stage
        self.index = index
        self.cause = cause
        self.bundle = bundle
