"""Exception types raised across the package."""


class CVTAnimError(Exception):
    """Base class for all package errors."""


class DegenerateInput(CVTAnimError, ValueError):
    pass


class NonWatertight(CVTAnimError):
    pass


class VolumeTooSmall(CVTAnimError):
    pass


class DuplicateSites(CVTAnimError, ValueError):
    pass


class EmptyIntersection(CVTAnimError):
    pass


class TooManyPatches(CVTAnimError, ValueError):
    pass


class SolverDiverged(CVTAnimError):
    pass


class DegenerateCell(CVTAnimError, ValueError):
    pass


class NumericalBlowup(CVTAnimError):
    pass


class MaxIterations(CVTAnimError):
    pass


class MissingArtifact(CVTAnimError, FileNotFoundError):
    pass


class ConfigError(CVTAnimError, ValueError):
    pass
