class SolverError(Exception):
    """Base class for geometric solver failures."""


class DegenerateConfiguration(SolverError):
    """Input geometry admits no unique solution (collinear points, ...)."""


class InsufficientCorrespondences(SolverError):
    """Fewer correspondences than the minimal solver requires."""


class NoConsensus(SolverError):
    """RANSAC found no model with enough inliers."""


class InsufficientParallax(SolverError):
    """Viewing rays are too close to parallel to triangulate."""


class CheiralityFailure(SolverError):
    """Triangulated point lies behind at least one camera."""


class ReprojectionTooLarge(SolverError):
    """Triangulated point exceeds the reprojection error gate."""


class NumericalFailure(SolverError):
    """Normal equations stayed singular after damping escalation."""
