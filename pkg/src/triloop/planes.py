"""Voxel statistics, plane-voxel classification, and region growing.

A voxel is a plane candidate when the smallest covariance eigenvalue is below
sigma1 and the middle one above sigma2 (thin and extended). Planes grow
breadth-first from a seed voxel; occupied neighbors that refuse to merge are
the plane's boundary voxels and later seed key-point extraction.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, NonPositiveLeaf

MIN_VOXEL_POINTS = 10  # covariance of fewer points is too unstable to classify

FACE_NEIGHBORS = (
    (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1),
)
CUBE_NEIGHBORS = tuple(
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
)

Cell = tuple[int, int, int]


@dataclass
class Voxel:
    """Spatial hash cell with point statistics and an optional plane fit."""

    cell: Cell
    points: np.ndarray          # (n, 3)
    mean: np.ndarray            # (3,)
    covariance: np.ndarray      # (3, 3), population normalization (1/N)
    eigenvalues: np.ndarray | None = None  # descending (l1 >= l2 >= l3)
    normal: np.ndarray | None = None       # unit eigenvector of l3, sign-canonical
    is_plane: bool = False

    @property
    def count(self) -> int:
        return len(self.points)


@dataclass
class Plane:
    """Grown planar region: center point, normal, member and boundary cells."""

    id: int
    center: np.ndarray  # point-count weighted mean of member voxel means
    normal: np.ndarray  # smallest eigenvector of the merged point moments
    member_cells: list[Cell] = field(default_factory=list)
    boundary_cells: list[Cell] = field(default_factory=list)
    point_count: int = 0


def canonical_normal(n: np.ndarray) -> np.ndarray:
    """Flip an eigenvector so its largest-magnitude component is positive."""
    n = np.asarray(n, dtype=np.float64)
    if n[np.argmax(np.abs(n))] < 0:
        return -n
    return n


def build_voxel_map(cloud, voxel_size: float) -> dict[Cell, Voxel]:
    """Bin a cloud into cubic voxels with per-voxel mean/covariance/eigen stats.

    Voxels with fewer than MIN_VOXEL_POINTS points keep their moments but skip
    the eigendecomposition and can never classify as planes.
    """
    if voxel_size <= 0:
        raise NonPositiveLeaf(f"voxel_size must be > 0, got {voxel_size}")
    pts = np.asarray(cloud, dtype=np.float64)
    if len(pts) == 0:
        raise EmptyInput("cannot voxelize an empty cloud")

    cells = np.floor(pts / voxel_size).astype(np.int64)
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    counts = np.bincount(inverse, minlength=len(uniq))

    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, inverse, pts)
    means = sums / counts[:, None]

    # Two-pass covariance avoids cancellation for voxels far from the origin.
    centered = pts - means[inverse]
    cov_sums = np.zeros((len(uniq), 3, 3))
    np.add.at(cov_sums, inverse, centered[:, :, None] * centered[:, None, :])
    covs = cov_sums / counts[:, None, None]

    eligible = counts >= MIN_VOXEL_POINTS
    eigvals = np.full((len(uniq), 3), np.nan)
    eigvecs = np.full((len(uniq), 3, 3), np.nan)
    if np.any(eligible):
        w, v = np.linalg.eigh(covs[eligible])  # ascending eigenvalues
        eigvals[eligible] = w
        eigvecs[eligible] = v

    order = np.argsort(inverse, kind="stable")
    splits = np.cumsum(counts)[:-1]
    grouped = np.split(pts[order], splits)

    voxmap: dict[Cell, Voxel] = {}
    for i, cell in enumerate(map(tuple, uniq.tolist())):
        if eligible[i]:
            vals = eigvals[i][::-1].copy()  # descending: l1 >= l2 >= l3
            normal = canonical_normal(eigvecs[i][:, 0])
        else:
            vals = None
            normal = None
        voxmap[cell] = Voxel(
            cell=cell,
            points=grouped[i],
            mean=means[i],
            covariance=covs[i],
            eigenvalues=vals,
            normal=normal,
        )
    return voxmap


def is_plane_voxel(voxel: Voxel, sigma1: float, sigma2: float) -> bool:
    """Eigenvalue plane test: l3 < sigma1 and l2 > sigma2."""
    if voxel.eigenvalues is None:
        return False
    l1, l2, l3 = voxel.eigenvalues
    return bool(l3 < sigma1 and l2 > sigma2)


def classify_plane_voxels(voxmap: dict[Cell, Voxel], sigma1: float, sigma2: float) -> int:
    """Set is_plane on every voxel, returning the number of plane voxels."""
    n = 0
    for voxel in voxmap.values():
        voxel.is_plane = is_plane_voxel(voxel, sigma1, sigma2)
        n += voxel.is_plane
    return n


def grow_planes(
    voxmap: dict[Cell, Voxel],
    normal_merge_tol: float = 0.02,
    dist_merge_tol: float = 0.2,
    connectivity: int = 6,
) -> list[Plane]:
    """Partition plane voxels into planes by breadth-first region growing.

    A neighbor joins when its normal and the seed normal agree within
    normal_merge_tol (|dot| > 1 - tol) and its mean lies within dist_merge_tol
    of the seed plane. Occupied neighbors that do not join are recorded as
    boundary voxels of the growing plane. Seeds are visited in ascending cell
    order so plane ids are deterministic.
    """
    if connectivity == 6:
        offsets = FACE_NEIGHBORS
    elif connectivity == 26:
        offsets = CUBE_NEIGHBORS
    else:
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")

    assigned: dict[Cell, int] = {}
    planes: list[Plane] = []

    for cell in sorted(voxmap):
        seed = voxmap[cell]
        if not seed.is_plane or cell in assigned:
            continue

        plane = Plane(id=len(planes), center=np.zeros(3), normal=seed.normal.copy())
        boundary: list[Cell] = []
        boundary_seen: set[Cell] = set()
        # merged first/second moments around the seed mean (conditioning)
        origin = seed.mean
        weighted = np.zeros(3)
        second = np.zeros((3, 3))
        total = 0

        frontier = deque([cell])
        assigned[cell] = plane.id
        while frontier:
            current = frontier.popleft()
            voxel = voxmap[current]
            plane.member_cells.append(current)
            shifted = voxel.mean - origin
            weighted += shifted * voxel.count
            second += voxel.count * (voxel.covariance + np.outer(shifted, shifted))
            total += voxel.count
            for off in offsets:
                ncell = (current[0] + off[0], current[1] + off[1], current[2] + off[2])
                neighbor = voxmap.get(ncell)
                if neighbor is None or assigned.get(ncell) == plane.id:
                    continue
                if neighbor.is_plane and ncell not in assigned and _merges(seed, neighbor, normal_merge_tol, dist_merge_tol):
                    assigned[ncell] = plane.id
                    frontier.append(ncell)
                elif ncell not in boundary_seen:
                    boundary_seen.add(ncell)
                    boundary.append(ncell)

        mean = weighted / total
        merged_cov = second / total - np.outer(mean, mean)
        _, vecs = np.linalg.eigh(merged_cov)
        plane.center = origin + mean
        plane.normal = canonical_normal(vecs[:, 0])
        plane.point_count = total
        plane.boundary_cells = boundary
        planes.append(plane)
    return planes


def _merges(seed: Voxel, neighbor: Voxel, normal_tol: float, dist_tol: float) -> bool:
    if abs(float(seed.normal @ neighbor.normal)) <= 1.0 - normal_tol:
        return False
    return abs(float(seed.normal @ (neighbor.mean - seed.mean))) < dist_tol
