"""Synthetic box-and-wall worlds for tests and demos.

Builds a walled yard with scattered boxes, samples its surfaces on a jittered
grid, and cuts range-limited scans along a traversal. Geometry is produced in
the world frame; scans are expressed in the sensor frame like real data.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .geometry import RigidTransform, rotation_about_axis
from .ingest import write_kitti_bin


def sample_rect(origin, edge_u, edge_v, step: float, rng: np.random.Generator,
                jitter: float = 0.01) -> np.ndarray:
    """Jittered grid of points on a rectangle spanned by two edge vectors."""
    origin = np.asarray(origin, dtype=np.float64)
    edge_u = np.asarray(edge_u, dtype=np.float64)
    edge_v = np.asarray(edge_v, dtype=np.float64)
    len_u = np.linalg.norm(edge_u)
    len_v = np.linalg.norm(edge_v)
    du = edge_u / len_u
    dv = edge_v / len_v
    normal = np.cross(du, dv)
    us = np.arange(step / 2, len_u, step)
    vs = np.arange(step / 2, len_v, step)
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    pts = origin + uu.reshape(-1, 1) * du + vv.reshape(-1, 1) * dv
    pts = pts + rng.normal(scale=jitter, size=pts.shape)
    pts = pts + rng.normal(scale=jitter / 5, size=(len(pts), 1)) * normal
    return pts


def sample_box(corner, size, step: float, rng: np.random.Generator,
               jitter: float = 0.01) -> np.ndarray:
    """Points on the top and four side faces of an axis-aligned box."""
    x, y, z = corner
    sx, sy, sz = size
    faces = [
        ((x, y, z + sz), (sx, 0, 0), (0, sy, 0)),      # top
        ((x, y, z), (sx, 0, 0), (0, 0, sz)),           # front (y = y0)
        ((x, y + sy, z), (sx, 0, 0), (0, 0, sz)),      # back
        ((x, y, z), (0, sy, 0), (0, 0, sz)),           # left (x = x0)
        ((x + sx, y, z), (0, sy, 0), (0, 0, sz)),      # right
    ]
    return np.vstack([sample_rect(o, u, v, step, rng, jitter) for o, u, v in faces])


def box_and_wall_world(
    seed: int = 0,
    extent: tuple[float, float] = (60.0, 24.0),
    wall_height: float = 5.0,
    n_boxes: int = 10,
    step: float = 0.25,
    jitter: float = 0.01,
    boxes: list[tuple[float, float, float, float, float]] | None = None,
) -> np.ndarray:
    """Walled rectangular yard with boxes, sampled as surface points.

    Boxes are placed randomly (clear of the mid corridor) unless an explicit
    list of (x, y, sx, sy, sz) footprints is given.
    """
    rng = np.random.default_rng(seed)
    length, width = extent
    h = wall_height
    parts = [
        sample_rect((0, 0, 0), (length, 0, 0), (0, width, 0), step, rng, jitter),  # floor
        sample_rect((0, 0, 0), (length, 0, 0), (0, 0, h), step, rng, jitter),      # wall y=0
        sample_rect((0, width, 0), (length, 0, 0), (0, 0, h), step, rng, jitter),  # wall y=W
        sample_rect((0, 0, 0), (0, width, 0), (0, 0, h), step, rng, jitter),       # wall x=0
        sample_rect((length, 0, 0), (0, width, 0), (0, 0, h), step, rng, jitter),  # wall x=L
    ]
    if boxes is None:
        boxes = []
        for _ in range(n_boxes):
            sx, sy = rng.uniform(2.0, 5.0, size=2)
            sz = rng.uniform(1.5, 4.0)
            # keep boxes off the traversal corridor through the middle
            x = rng.uniform(2.0, length - sx - 2.0)
            y = rng.uniform(2.0, width - sy - 2.0)
            if y < width / 2 + 3.0 and y + sy > width / 2 - 3.0:
                y = 2.0 if y < width / 2 else width - sy - 2.0
            boxes.append((x, y, sx, sy, sz))
    for x, y, sx, sy, sz in boxes:
        parts.append(sample_box((x, y, 0.0), (sx, sy, sz), step, rng, jitter))
    return np.vstack(parts)


def yaw_pose(x: float, y: float, z: float, yaw_deg: float) -> RigidTransform:
    return RigidTransform(rotation_about_axis((0, 0, 1), math.radians(yaw_deg)),
                          np.array([x, y, z]))


def out_and_back_poses(
    x_start: float,
    x_end: float,
    y_out: float,
    y_back: float,
    z: float = 1.5,
    spacing: float = 1.0,
) -> list[RigidTransform]:
    """Forward pass at y_out heading +x, return pass at y_back heading -x."""
    xs = np.arange(x_start, x_end + 1e-9, spacing)
    poses = [yaw_pose(float(x), y_out, z, 0.0) for x in xs]
    poses += [yaw_pose(float(x), y_back, z, 180.0) for x in xs[::-1]]
    return poses


def scan_at(world_points: np.ndarray, pose: RigidTransform, max_range: float) -> np.ndarray:
    """Range-cropped view of the world expressed in the sensor frame."""
    rel = world_points - pose.t
    mask = np.einsum("ij,ij->i", rel, rel) <= max_range * max_range
    return pose.inverse().apply(world_points[mask])


def write_sequence(directory, world_points: np.ndarray, poses: list[RigidTransform],
                   max_range: float = 14.0) -> tuple[Path, Path]:
    """Write .bin scans and a 12-float pose file; returns (scan_dir, pose_file)."""
    directory = Path(directory)
    scan_dir = directory / "scans"
    scan_dir.mkdir(parents=True, exist_ok=True)
    for i, pose in enumerate(poses):
        write_kitti_bin(scan_dir / f"{i:06d}.bin", scan_at(world_points, pose, max_range))
    pose_file = directory / "poses.txt"
    lines = []
    for pose in poses:
        m = pose.matrix()[:3, :]
        lines.append(" ".join(f"{v:.12e}" for v in m.ravel()))
    pose_file.write_text("\n".join(lines) + "\n")
    return scan_dir, pose_file
