"""Rigid 3D transforms and the closed-form SVD alignment solver.

Points are plain numpy arrays: shape (3,) for a single point, (N, 3) for a
cloud, float64, finite. Everything here is pure and safe to share across
threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput

ORTHONORMALITY_TOL = 1e-9
COLLINEARITY_TOL = 1e-9


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion p -> R @ p + t.

    R must be orthonormal with det +1 within 1e-9. Arrays are copied and
    frozen read-only on construction.
    """

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("transform contains non-finite values")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHONORMALITY_TOL:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > ORTHONORMALITY_TOL:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 homogeneous matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    def apply(self, points) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) cloud."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            return self.R @ pts + self.t
        return pts @ self.R.T + self.t

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self @ other).apply(p) == self.apply(other.apply(p))."""
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -(self.R.T @ self.t))


@dataclass(frozen=True)
class Correspondences3:
    """Paired source/target points for rigid alignment, equal length >= 3."""

    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        src = _as_points(self.source).copy()
        dst = _as_points(self.target).copy()
        if len(src) != len(dst):
            raise ValueError(f"length mismatch: {len(src)} source vs {len(dst)} target")
        src.setflags(write=False)
        dst.setflags(write=False)
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "target", dst)

    def __len__(self) -> int:
        return len(self.source)

    @property
    def source_centroid(self) -> np.ndarray:
        return self.source.mean(axis=0)

    @property
    def target_centroid(self) -> np.ndarray:
        return self.target.mean(axis=0)


def _all_collinear(points: np.ndarray, tol: float = COLLINEARITY_TOL) -> bool:
    """True if every point lies on one line, tested by normalized cross products."""
    base = points[0]
    direction = None
    for p in points[1:]:
        d = p - base
        n = np.linalg.norm(d)
        if n < tol:
            continue
        d = d / n
        if direction is None:
            direction = d
            continue
        if np.linalg.norm(np.cross(direction, d)) > tol:
            return False
    return True


def solve_rigid_svd(corr: Correspondences3) -> RigidTransform:
    """Least-squares rigid transform mapping corr.source onto corr.target.

    Kabsch solve: H = sum (p_a - q_a)(p_b - q_b)^T, R = V diag(1,1,det(VU^T)) U^T,
    t = -R q_a + q_b. The determinant factor guards against reflections on
    degenerate or mirrored inputs.
    """
    if len(corr) < 3:
        raise DegenerateInput(f"need at least 3 correspondences, got {len(corr)}")
    if _all_collinear(corr.source):
        raise DegenerateInput("source points are collinear; rotation is not unique")

    qa = corr.source_centroid
    qb = corr.target_centroid
    H = (corr.source - qa).T @ (corr.target - qb)
    U, _, Vt = np.linalg.svd(H)
    V = Vt.T
    d = np.sign(np.linalg.det(V @ U.T))
    R = V @ np.diag([1.0, 1.0, d]) @ U.T
    t = -R @ qa + qb
    return RigidTransform(R, t)


def rotation_about_axis(axis, angle_rad: float) -> np.ndarray:
    """Rotation matrix for a right-handed rotation about a 3-vector axis."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    x, y, z = a
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def rotation_from_quaternion(qx: float, qy: float, qz: float, qw: float) -> np.ndarray:
    """Rotation matrix from a (possibly unnormalized) quaternion."""
    n = math.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
    if n == 0.0:
        raise ValueError("zero quaternion")
    qx, qy, qz, qw = qx / n, qy / n, qz / n, qw / n
    return np.array(
        [
            [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)],
            [2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)],
            [2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)],
        ]
    )


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly sampled rotation matrix (random unit quaternion)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return rotation_from_quaternion(q[0], q[1], q[2], q[3])


def nearest_rotation(m) -> np.ndarray:
    """Project a near-rotation 3x3 matrix onto SO(3) (for file-sourced poses)."""
    U, _, Vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    d = np.sign(np.linalg.det(U @ Vt))
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def rotation_angle_deg(R) -> float:
    """Magnitude of a rotation in degrees.

    atan2 of the skew norm against the trace stays accurate for tiny angles,
    where the plain acos-of-trace form loses everything below ~1e-8 rad.
    """
    R = np.asarray(R)
    s = 0.5 * math.sqrt(
        (R[2, 1] - R[1, 2]) ** 2 + (R[0, 2] - R[2, 0]) ** 2 + (R[1, 0] - R[0, 1]) ** 2
    )
    c = (np.trace(R) - 1.0) / 2.0
    return math.degrees(math.atan2(s, c))
