"""Exception hierarchy shared by every module.

Each error carries a stable ``name`` so the CLI can print it on stderr and
map it to an exit code.
"""


class BeamlabError(Exception):
    """Base class. ``kind`` is 'config' or 'numerical'."""

    kind = "numerical"

    @property
    def name(self) -> str:
        return type(self).__name__


class ConfigError(BeamlabError):
    kind = "config"


class ConfigInvalid(ConfigError):
    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


# geometry
class NonUnitTangent(BeamlabError):
    pass


class StepTooLarge(BeamlabError):
    pass


class TubeTooWide(BeamlabError):
    pass


class OutOfRange(BeamlabError):
    pass


class InfeasibleSeed(BeamlabError):
    pass


# beams
class NotPositiveImaginary(BeamlabError):
    pass


class SingularY(BeamlabError):
    pass


class BranchAmbiguity(BeamlabError):
    pass


class ChartRangeExceeded(BeamlabError):
    pass


class UnderResolved(BeamlabError):
    pass


# forward
class Inadmissible(ConfigError):
    def __init__(self, clauses):
        self.clauses = list(clauses)
        super().__init__("; ".join(self.clauses))


class Incompatible(ConfigError):
    def __init__(self, residuals: dict):
        self.residuals = dict(residuals)
        super().__init__(", ".join(f"{k}={v}" for k, v in self.residuals.items()))


class CflViolation(BeamlabError):
    pass


class BlowUp(BeamlabError):
    pass


class GridMismatch(BeamlabError):
    pass


# linearize
class LadderInconsistent(BeamlabError):
    pass


# transforms
class PathOutsideField(BeamlabError):
    pass


class DegenerateWeight(BeamlabError):
    pass


class ConjugatePointOnPath(BeamlabError):
    pass


class LadderDiverged(BeamlabError):
    pass


class InsufficientAngles(BeamlabError):
    pass


# reconstruct
class DegenerateHessian(BeamlabError):
    pass


class NoCriticalPoint(BeamlabError):
    pass


class MultipleIntersections(BeamlabError):
    pass


class TubeOverlapElsewhere(BeamlabError):
    pass


class SlowConvergence(BeamlabError):
    pass


class InductionIncomplete(BeamlabError):
    pass
