from .alignment import SimilarityTransform, umeyama_similarity
from .bundle import BundleConfig, BundleResult, FreezeMask, bundle_adjust
from .errors import (
    CheiralityFailure,
    DegenerateConfiguration,
    InsufficientCorrespondences,
    InsufficientParallax,
    NoConsensus,
    NumericalFailure,
    ReprojectionTooLarge,
    SolverError,
)
from .pnp import Correspondence2D3D, RansacConfig, ransac_pnp, refine_pose, solve_p3p
from .triangulation import TriangulationConfig, triangulate
from .twoview import epipolar_inlier_indices, estimate_relative_pose, refine_relative_pose

__all__ = [
    "BundleConfig",
    "BundleResult",
    "CheiralityFailure",
    "Correspondence2D3D",
    "DegenerateConfiguration",
    "FreezeMask",
    "InsufficientCorrespondences",
    "InsufficientParallax",
    "NoConsensus",
    "NumericalFailure",
    "RansacConfig",
    "ReprojectionTooLarge",
    "SimilarityTransform",
    "SolverError",
    "TriangulationConfig",
    "bundle_adjust",
    "epipolar_inlier_indices",
    "estimate_relative_pose",
    "refine_relative_pose",
    "ransac_pnp",
    "refine_pose",
    "solve_p3p",
    "triangulate",
    "umeyama_similarity",
]
