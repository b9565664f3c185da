"""opencontain: decide whether a rigid mesh works as an open container by
simulating particle drops, and plan a pouring pose above the opening."""

__version__ = "0.1.0"

from . import errors, geometry, physics

__all__ = ["errors", "geometry", "physics", "__version__"]
