"""Exception hierarchy shared across the library and mapped to CLI exit codes."""
from __future__ import annotations


class OpenContainError(Exception):
    """Base class for all library-specific failures."""


class MeshParseError(OpenContainError):
    """Mesh file is syntactically invalid.

    Carries the offending location: a 1-based line number for text formats,
    a byte offset for binary ones.
    """

    def __init__(self, path: str, where: str, message: str):
        self.path = str(path)
        self.where = where
        super().__init__(f"{path}: {where}: {message}")


class EmptyMeshError(OpenContainError):
    """Mesh has zero triangles after degenerate-triangle cleaning."""


class DegenerateGeometryError(OpenContainError):
    """Geometric quantity is undefined for this input (zero area, zero extent)."""


class SpawnOverlapError(OpenContainError):
    """Requested particle spawn positions are closer than one particle diameter."""


class SimulationUnstableError(OpenContainError):
    """Integration produced non-finite state or exceeded solver capacity."""


class ScheduleOverflowError(OpenContainError):
    """Perturbation schedule does not fit the step budget."""


class NotAContainerError(OpenContainError):
    """Pouring was requested for an object classified as not an open container."""


class CupFillError(OpenContainError):
    """The cup cannot hold the requested number of pour particles."""


class ManifestError(OpenContainError):
    """Dataset manifest is malformed."""


class DuplicatePathError(ManifestError):
    pass


class MissingMeshError(ManifestError):
    pass


class SingleClassError(OpenContainError):
    """AUC was requested for data containing only one class."""


class ConfigError(OpenContainError):
    """Run configuration failed validation."""
