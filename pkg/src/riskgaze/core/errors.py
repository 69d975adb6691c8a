"""
Exception hierarchy for the whole package.

Per-item problems (a bad frame, a degenerate feature) are raised by the
low-level functions and caught one level up, where they become flags in a
QualityReport or a StatReport row. Only stage-level failures reach the CLI.
"""

from __future__ import annotations


class RiskGazeError(Exception):
    """Base class for every error raised by riskgaze."""


# -------------------------
# ingest
# -------------------------

class MissingHeaderField(RiskGazeError, ValueError):
    pass


class UnknownRiskLabel(RiskGazeError, ValueError):
    pass


class NonMonotonicFrameIndex(RiskGazeError, ValueError):
    pass


class EmptyCohort(RiskGazeError, ValueError):
    pass


class MalformedRecord(RiskGazeError, ValueError):
    """A frame line that cannot be read as a frame (missing or non-numeric fields)."""


# -------------------------
# signals
# -------------------------

class DegenerateEye(RiskGazeError, ValueError):
    pass


class DegenerateConfiguration(RiskGazeError, ValueError):
    pass


class NonPositiveScale(RiskGazeError, ValueError):
    pass


# -------------------------
# postproc / functionals
# -------------------------

class EvenWindow(RiskGazeError, ValueError):
    pass


class LengthMismatch(RiskGazeError, ValueError):
    pass


class AllInvalid(RiskGazeError, ValueError):
    pass


class TooShort(RiskGazeError, ValueError):
    pass


class EmptySeries(RiskGazeError, ValueError):
    pass


# -------------------------
# stats
# -------------------------

class ZeroWithinVariance(RiskGazeError, ArithmeticError):
    pass


class ZeroVarianceBoth(RiskGazeError, ArithmeticError):
    pass


class RankDeficientDesign(RiskGazeError, ValueError):
    pass


class FewerThanTwoSubjectsPerGroup(RiskGazeError, ValueError):
    pass


# -------------------------
# select / classify
# -------------------------

class ConstantFeature(RiskGazeError, ValueError):
    pass


class UnstratifiableFold(RiskGazeError, ValueError):
    pass


class TooFewSamples(RiskGazeError, ValueError):
    pass


class SingleClassTrain(RiskGazeError, ValueError):
    pass


class EmptyTrueClass(RiskGazeError, ValueError):
    pass


# -------------------------
# synth / config / pipeline
# -------------------------

class InvalidSpec(RiskGazeError, ValueError):
    pass


class ConfigError(RiskGazeError, ValueError):
    pass


class StageError(RiskGazeError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
