"""Exception types raised across the package."""


class LowRankLabError(Exception):
    """Base class for all package errors."""


class InvalidModel(LowRankLabError):
    """A transition row cannot be turned into a probability vector."""


class MissingLatentRep(LowRankLabError):
    pass


class DimensionMismatch(LowRankLabError, ValueError):
    pass


class GenerationFailed(LowRankLabError):
    pass


class DegenerateRow(LowRankLabError):
    pass


class AllCandidatesInfeasible(LowRankLabError):
    pass


class NonConvergence(LowRankLabError):
    """Planner exceeded its provable iteration cap."""


class NotSimplex(LowRankLabError, ValueError):
    pass


class NotPSD(LowRankLabError, ValueError):
    pass


class InsufficientData(LowRankLabError):
    pass


class RealizabilityViolation(LowRankLabError):
    pass
