"""Exception types raised across the pipeline."""


class TriloopError(Exception):
    """Base class for all library errors."""


class EmptyInput(TriloopError, ValueError):
    """An operation received an empty point cloud or scan list."""


class DegenerateInput(TriloopError, ValueError):
    """Point configuration too degenerate for the requested solve."""


class MalformedRecord(TriloopError):
    """Binary scan file length is not a whole number of records."""


class UnsupportedFormat(TriloopError):
    """File header describes a format this reader does not handle."""


class NonPositiveLeaf(TriloopError, ValueError):
    """Voxel/pixel size must be strictly positive."""


class NoBoundary(TriloopError):
    """Plane has no boundary voxels; it yields no key points."""


class DuplicateFrame(TriloopError):
    """Frame id was already inserted into the descriptor database."""


class NoValidTransform(TriloopError):
    """RANSAC found fewer inlier pairs than the minimum required."""


class EmptyPlaneList(TriloopError, ValueError):
    """Plane overlap needs a non-empty plane list on both sides."""


class InsufficientOverlap(TriloopError):
    """Too few coinciding plane pairs to run plane-to-plane refinement."""


class ConfigError(TriloopError):
    """Invalid or inconsistent run configuration."""


class NoGroundTruth(TriloopError):
    """Precision/recall sweep requested without ground-truth loops."""
