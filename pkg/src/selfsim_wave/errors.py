"""Exception hierarchy shared by all modules."""


class LabError(Exception):
    """Base class for every error raised by this package."""


class DegenerateInterval(LabError, ValueError):
    """Point lies on (or numerically at) the null cone."""


class OutOfDomain(LabError, ValueError):
    """Point outside the domain of a coordinate map."""


class PoleHit(LabError, ValueError):
    """Closed-form solution evaluated at (or beyond) its singular set."""


class BadResolution(LabError, ValueError):
    pass


class GridMismatch(LabError, ValueError):
    pass


class UnsupportedRapidity(LabError, ValueError):
    """Nonzero or off-axis rapidity on a sector that cannot represent it."""


class SectorUnsupported(LabError, ValueError):
    pass


class EigenFailure(LabError, RuntimeError):
    pass


class EigenvalueNotIsolated(LabError, RuntimeError):
    pass


class ResolventSingular(LabError, RuntimeError):
    pass


class NumericalFailure(LabError, RuntimeError):
    pass


class FitDiverged(LabError, RuntimeError):
    pass


class NoStoredState(LabError, LookupError):
    pass


class UnsupportedExponent(LabError, ValueError):
    pass


class NonPositiveValues(LabError, ValueError):
    pass


class BracketInvalid(LabError, ValueError):
    pass


class Inconclusive(LabError, RuntimeError):
    pass


class ConfigError(LabError, ValueError):
    pass
