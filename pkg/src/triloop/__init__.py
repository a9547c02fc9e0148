"""Triangle-descriptor place recognition for 3D LiDAR point clouds.

Pipeline: accumulate scans into keyframes, segment planes by region growing
over voxel statistics, extract boundary-projection key points, encode them as
rotation/translation-invariant triangle descriptors, retrieve loop candidates
by hash voting, and verify geometrically with a full 6-dof relative pose.
"""

from .database import Candidate, DescriptorDatabase, HashKey, make_key
from .descriptors import TriangleDescriptor, build_descriptors, descriptor_signature
from .errors import TriloopError
from .geometry import Correspondences3, RigidTransform, solve_rigid_svd
from .ingest import (
    Keyframe,
    Scan,
    accumulate_keyframe,
    read_kitti_bin,
    read_pcd_ascii,
    read_poses,
    voxel_downsample,
)
from .keypoints import KeyPoint, PlaneImage, extract_keypoints, keyframe_keypoints
from .loop import (
    LoopResult,
    ScoredCandidate,
    plane_icp,
    plane_overlap,
    ransac_transform,
    score_candidates,
    verify_loop,
)
from .pipeline import FrameExtraction, MatchingSession, PipelineConfig, extract_frame
from .planes import Plane, Voxel, build_voxel_map, grow_planes, is_plane_voxel

__version__ = "0.1.0"

__all__ = [
    "Candidate",
    "Correspondences3",
    "DescriptorDatabase",
    "FrameExtraction",
    "HashKey",
    "Keyframe",
    "KeyPoint",
    "LoopResult",
    "MatchingSession",
    "PipelineConfig",
    "Plane",
    "PlaneImage",
    "RigidTransform",
    "Scan",
    "ScoredCandidate",
    "TriangleDescriptor",
    "TriloopError",
    "Voxel",
    "accumulate_keyframe",
    "build_descriptors",
    "build_voxel_map",
    "descriptor_signature",
    "extract_frame",
    "extract_keypoints",
    "grow_planes",
    "is_plane_voxel",
    "keyframe_keypoints",
    "make_key",
    "plane_icp",
    "plane_overlap",
    "ransac_transform",
    "read_kitti_bin",
    "read_pcd_ascii",
    "read_poses",
    "score_candidates",
    "solve_rigid_svd",
    "verify_loop",
    "voxel_downsample",
]
