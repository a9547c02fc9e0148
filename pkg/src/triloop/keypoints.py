"""Boundary-point projection, per-plane distance images, and key-point NMS.

Boundary points are projected onto their plane; each image pixel keeps the
maximum point-to-plane distance and the index of the 3D point that produced
it. A pixel becomes a key point when it strictly dominates its 5x5 occupied
neighborhood, so every key point is an actual input point, never a synthetic
coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoBoundary, NonPositiveLeaf
from .planes import Plane, Voxel, Cell

NMS_RADIUS = 2  # 5x5 neighborhood


@dataclass(frozen=True)
class KeyPoint:
    """Boundary-projection maximum carrying its plane's normal."""

    position: np.ndarray  # (3,) a point of the input cloud
    normal: np.ndarray    # (3,) unit plane normal
    plane_id: int
    frame_id: int
    strength: float       # pixel value (point-to-plane distance, meters)


@dataclass
class PlaneImage:
    """Raster of max point-to-plane distances over one plane's boundary points."""

    plane_id: int
    origin: np.ndarray        # (3,) plane center
    e1: np.ndarray            # (3,) in-plane axis
    e2: np.ndarray            # (3,) in-plane axis, u x e1
    normal: np.ndarray        # (3,)
    pixel_size: float
    offset: tuple[int, int]   # pixel index of grid[0, 0]
    values: np.ndarray        # (h, w) max distance, -inf where empty
    sources: np.ndarray       # (h, w) index into points, -1 where empty
    points: np.ndarray        # (m, 3) original 3D boundary points


def plane_axes(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic in-plane basis: e1 from the global axis least aligned
    with the normal, e2 = normal x e1."""
    u = np.asarray(normal, dtype=np.float64)
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(u)))] = 1.0
    e1 = axis - (axis @ u) * u
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    return e1, e2


def project_boundary(
    plane: Plane,
    voxmap: dict[Cell, Voxel],
    axes: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project the plane's boundary-voxel points onto the plane.

    Returns (points, distances, uv): the original 3D points, their unsigned
    point-to-plane distances, and their 2D in-plane coordinates.
    """
    if not plane.boundary_cells:
        raise NoBoundary(f"plane {plane.id} has no boundary voxels")
    e1, e2 = plane_axes(plane.normal) if axes is None else axes
    pts = np.vstack([voxmap[c].points for c in plane.boundary_cells])
    rel = pts - plane.center
    distances = np.abs(rel @ plane.normal)
    uv = np.stack([rel @ e1, rel @ e2], axis=1)
    return pts, distances, uv


def rasterize(
    points: np.ndarray,
    distances: np.ndarray,
    uv: np.ndarray,
    pixel_size: float,
    plane: Plane,
    axes: tuple[np.ndarray, np.ndarray] | None = None,
) -> PlaneImage:
    """Bin projections into pixels, keeping the max distance per pixel."""
    if pixel_size <= 0:
        raise NonPositiveLeaf(f"pixel_size must be > 0, got {pixel_size}")
    e1, e2 = plane_axes(plane.normal) if axes is None else axes
    pix = np.floor(uv / pixel_size).astype(np.int64)
    lo = pix.min(axis=0)
    hi = pix.max(axis=0)
    shape = (int(hi[0] - lo[0] + 1), int(hi[1] - lo[1] + 1))
    values = np.full(shape, -np.inf)
    sources = np.full(shape, -1, dtype=np.int64)
    rows = pix[:, 0] - lo[0]
    cols = pix[:, 1] - lo[1]
    for i in range(len(points)):
        r, c = rows[i], cols[i]
        if distances[i] > values[r, c]:
            values[r, c] = distances[i]
            sources[r, c] = i
    return PlaneImage(
        plane_id=plane.id,
        origin=plane.center,
        e1=e1,
        e2=e2,
        normal=plane.normal,
        pixel_size=pixel_size,
        offset=(int(lo[0]), int(lo[1])),
        values=values,
        sources=sources,
        points=points,
    )


def extract_keypoints(img: PlaneImage, min_dist: float, frame_id: int = 0) -> list[KeyPoint]:
    """Non-max suppression over 5x5 neighborhoods of occupied pixels.

    A pixel survives when its value is >= min_dist and strictly greater than
    every other occupied pixel in the window; exact ties go to the lower
    linearized pixel index.
    """
    values = img.values
    h, w = values.shape
    keypoints: list[KeyPoint] = []
    occupied = np.argwhere(np.isfinite(values))
    for r, c in occupied:
        v = values[r, c]
        if v < min_dist:
            continue
        r0, r1 = max(0, r - NMS_RADIUS), min(h, r + NMS_RADIUS + 1)
        c0, c1 = max(0, c - NMS_RADIUS), min(w, c + NMS_RADIUS + 1)
        lin = r * w + c
        wins = True
        for rr in range(r0, r1):
            for cc in range(c0, c1):
                if rr == r and cc == c:
                    continue
                nv = values[rr, cc]
                if np.isinf(nv):
                    continue
                if nv > v or (nv == v and rr * w + cc < lin):
                    wins = False
                    break
            if not wins:
                break
        if wins:
            keypoints.append(
                KeyPoint(
                    position=img.points[img.sources[r, c]].copy(),
                    normal=img.normal.copy(),
                    plane_id=img.plane_id,
                    frame_id=frame_id,
                    strength=float(v),
                )
            )
    return keypoints


def keyframe_keypoints(
    planes: list[Plane],
    voxmap: dict[Cell, Voxel],
    pixel_size: float = 0.5,
    min_dist: float = 0.2,
    frame_id: int = 0,
    max_keypoints: int = 200,
) -> list[KeyPoint]:
    """Extract key points for every plane and keep the strongest overall.

    Planes without boundary voxels are skipped. The cap keeps the descriptor
    count bounded on dense keyframes.
    """
    collected: list[KeyPoint] = []
    for plane in planes:
        try:
            pts, dists, uv = project_boundary(plane, voxmap)
        except NoBoundary:
            continue
        img = rasterize(pts, dists, uv, pixel_size, plane)
        collected.extend(extract_keypoints(img, min_dist, frame_id=frame_id))
    collected.sort(key=lambda k: (-k.strength, k.plane_id, tuple(k.position)))
    return collected[:max_keypoints]
