"""Exception hierarchy shared by every nrloc module."""


class NrlocError(Exception):
    """Base class for all package errors."""


class ConfigError(NrlocError, ValueError):
    """Invalid configuration, scenario or argument (CLI exit code 2)."""


class GeometryError(NrlocError, ValueError):
    """Degenerate geometry, e.g. a UE placed on top of a base station."""


class UnsupportedOrientationError(ConfigError):
    """Array orientation with a nonzero pitch."""


class UnsupportedCombinationError(ConfigError):
    """Comb size / symbol count pair (or SSB case / band) not defined in the tables."""


class GridCollisionError(NrlocError):
    """Two configured signals occupy the same resource element.

    ``collisions`` holds ``(slot, symbol, subcarrier, cell_a, cell_b)`` tuples.
    """

    def __init__(self, collisions):
        self.collisions = list(collisions)
        first = self.collisions[:3]
        super().__init__(f"{len(self.collisions)} resource-element collisions, e.g. {first}")


class DetectionError(NrlocError):
    """No correlation peak / beam above the detection threshold (CLI exit code 3)."""


class AcquisitionError(DetectionError):
    """Beam sweep found no beam above the detection threshold."""


class SolverError(NrlocError):
    """Hard failure of a position solver (CLI exit code 3)."""


class RankDeficiencyError(SolverError):
    """Fewer independent constraints than unknowns."""
