"""Canonical triangle descriptors built from key-point neighborhoods.

Every key point is joined with pairs drawn from its k nearest neighbors.
Vertices are relabeled so the side lengths come out ascending
(|p1p2| <= |p2p3| <= |p1p3|), which pins the vertex correspondence between
two matched triangles without enumerating permutations. Triangles that are
tiny, near-degenerate, or repeat an already-emitted quantized side triple
are dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.spatial import cKDTree

from .keypoints import KeyPoint

log = logging.getLogger(__name__)

MIN_SIDE_LENGTH = 0.5      # meters; smaller triangles jitter too much
DEGENERATE_SLACK = 0.1     # meters of triangle-inequality slack required
DEDUP_RESOLUTION = 0.01    # meters; side triples equal at this grid are duplicates


@dataclass(frozen=True)
class TriangleDescriptor:
    """Triangle of key points with per-vertex plane normals, sides ascending."""

    vertices: np.ndarray  # (3, 3) rows p1, p2, p3
    normals: np.ndarray   # (3, 3) rows n1, n2, n3
    sides: tuple[float, float, float]  # (l12, l23, l13), ascending
    frame_id: int

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def signature(self) -> np.ndarray:
        """Six rigid-invariant attributes: three sides, three |normal dots|."""
        n1, n2, n3 = self.normals
        return np.array(
            [
                self.sides[0],
                self.sides[1],
                self.sides[2],
                abs(float(n1 @ n2)),
                abs(float(n2 @ n3)),
                abs(float(n1 @ n3)),
            ]
        )


def descriptor_signature(descriptor: TriangleDescriptor) -> np.ndarray:
    return descriptor.signature()


def _canonical_order(pts: np.ndarray) -> tuple[int, int, int]:
    """Vertex permutation giving ascending sides, ties broken lexicographically."""
    d = {
        (0, 1): float(np.linalg.norm(pts[0] - pts[1])),
        (0, 2): float(np.linalg.norm(pts[0] - pts[2])),
        (1, 2): float(np.linalg.norm(pts[1] - pts[2])),
    }

    def side(i: int, j: int) -> float:
        return d[(i, j) if i < j else (j, i)]

    best = None
    best_key = None
    for perm in permutations((0, 1, 2)):
        a, b, c = perm
        if not (side(a, b) <= side(b, c) <= side(a, c)):
            continue
        key = (tuple(pts[a]), tuple(pts[b]), tuple(pts[c]))
        if best_key is None or key < best_key:
            best, best_key = perm, key
    return best


def _quantized_triple(sides: np.ndarray, resolution: float) -> tuple[int, int, int]:
    return tuple(int(round(s / resolution)) for s in sides)


def build_descriptors(
    keypoints: list[KeyPoint],
    k_neighbors: int = 20,
    frame_id: int = 0,
    min_side: float = MIN_SIDE_LENGTH,
    degenerate_slack: float = DEGENERATE_SLACK,
    dedup_resolution: float = DEDUP_RESOLUTION,
) -> list[TriangleDescriptor]:
    """Form deduplicated canonical triangles from key-point neighborhoods.

    Key points are processed in lexicographic position order, so the result
    depends only on the key-point multiset. Output is sorted by side triple.
    """
    if len(keypoints) < 3:
        log.warning("frame %d: %d key points, need 3 for descriptors", frame_id, len(keypoints))
        return []

    order = sorted(range(len(keypoints)), key=lambda i: tuple(keypoints[i].position))
    positions = np.array([keypoints[i].position for i in order])
    normals = np.array([keypoints[i].normal for i in order])
    m = len(positions)
    k = min(k_neighbors, m - 1)

    tree = cKDTree(positions)
    # k+1 because the anchor is its own nearest neighbor
    _, nn = tree.query(positions, k=k + 1)
    nn = np.atleast_2d(nn)

    # enumerate candidate vertex triples anchor-major, pairs in index order
    pair_a, pair_b = np.triu_indices(k, k=1)
    triples = []
    for anchor in range(m):
        nearest = [int(j) for j in nn[anchor] if int(j) != anchor][:k]
        nbr = np.array(sorted(nearest), dtype=np.int64)
        if len(nbr) < 2:
            continue
        if len(nbr) == k:
            ii, jj = nbr[pair_a], nbr[pair_b]
        else:
            ia, ib = np.triu_indices(len(nbr), k=1)
            ii, jj = nbr[ia], nbr[ib]
        rows = np.empty((len(ii), 3), dtype=np.int64)
        rows[:, 0] = anchor
        rows[:, 1] = ii
        rows[:, 2] = jj
        triples.append(rows)
    if not triples:
        return []
    idx = np.concatenate(triples)

    a, b, c = positions[idx[:, 0]], positions[idx[:, 1]], positions[idx[:, 2]]
    raw = np.stack(
        [
            np.linalg.norm(a - b, axis=1),  # side {anchor, i}
            np.linalg.norm(b - c, axis=1),  # side {i, j}
            np.linalg.norm(a - c, axis=1),  # side {anchor, j}
        ],
        axis=1,
    )
    lengths = np.sort(raw, axis=1)
    keep = (lengths[:, 0] >= min_side) & (
        lengths[:, 0] + lengths[:, 1] - lengths[:, 2] > degenerate_slack
    )
    idx, raw, lengths = idx[keep], raw[keep], lengths[keep]
    if not len(idx):
        return []

    # first occurrence per quantized side triple, in enumeration order
    quantized = np.round(lengths / dedup_resolution).astype(np.int64)
    _, first = np.unique(quantized, axis=0, return_index=True)
    first.sort()
    idx, raw, lengths = idx[first], raw[first], lengths[first]

    emitted: list[TriangleDescriptor] = []
    for perm, row, sides in zip(_canonical_orders(raw), idx, lengths):
        if perm is None:  # tied side lengths: lexicographic tie-break
            perm = _canonical_order(positions[row])
        verts = positions[row[list(perm)]]
        norms = normals[row[list(perm)]]
        emitted.append(
            TriangleDescriptor(
                vertices=verts,
                normals=norms,
                sides=(float(sides[0]), float(sides[1]), float(sides[2])),
                frame_id=frame_id,
            )
        )
    emitted.sort(key=lambda t: (t.sides, tuple(map(tuple, t.vertices))))
    return emitted


# local vertex order (of [anchor, i, j]) for each (smallest side, largest side)
# combination; sides are 0:{anchor,i} 1:{i,j} 2:{anchor,j}
_PERM_TABLE = {
    (0, 1): (1, 0, 2),
    (0, 2): (0, 1, 2),
    (1, 0): (1, 2, 0),
    (1, 2): (2, 1, 0),
    (2, 0): (0, 2, 1),
    (2, 1): (2, 0, 1),
}


def _canonical_orders(raw_sides: np.ndarray):
    """Canonical vertex permutation per triangle from its three raw sides.

    Fast path: with distinct side lengths, p1 is the vertex shared by the
    smallest and largest sides. Exact ties fall back to the permutation scan.
    """
    smallest = np.argmin(raw_sides, axis=1)
    largest = np.argmax(raw_sides, axis=1)
    sorted_sides = np.sort(raw_sides, axis=1)
    tied = (sorted_sides[:, 0] == sorted_sides[:, 1]) | (
        sorted_sides[:, 1] == sorted_sides[:, 2]
    )
    perms = []
    for row in range(len(raw_sides)):
        if tied[row]:
            perms.append(None)  # caller resolves via the permutation scan
        else:
            perms.append(_PERM_TABLE[(int(smallest[row]), int(largest[row]))])
    return perms
