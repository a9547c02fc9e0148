"""Geometric loop verification: RANSAC over matched triangles, plane-overlap
scoring, and plane-to-plane refinement of the relative transform.

The canonical vertex ordering of matched triangles fixes the 3-point
correspondence, so each RANSAC sample is a full closed-form solve. A candidate
is accepted when the fraction of the query's planes that coincide with the
candidate's planes under the solved transform reaches the acceptance
threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .database import Candidate
from .descriptors import TriangleDescriptor
from .errors import (
    DegenerateInput,
    EmptyPlaneList,
    InsufficientOverlap,
    NoValidTransform,
)
from .geometry import Correspondences3, RigidTransform, solve_rigid_svd
from .planes import Plane

MIN_INLIER_PAIRS = 4
MIN_REFINE_PAIRS = 10

PairList = list[tuple[TriangleDescriptor, TriangleDescriptor]]


@dataclass(frozen=True)
class LoopResult:
    """Accepted loop with its relative transform (query frame -> matched frame)."""

    query_id: int
    matched_id: int
    transform: RigidTransform
    overlap: float           # fraction of query planes coinciding, in [0, 1]
    inlier_pairs: int
    votes: int
    refined: RigidTransform | None = None


@dataclass(frozen=True)
class ScoredCandidate:
    """Verification scores for one retrieval candidate (eval re-scoring hook)."""

    frame_id: int
    votes: int
    overlap: float
    transform: RigidTransform | None
    inlier_pairs: int


def _vertex_correspondences(pairs: PairList) -> tuple[np.ndarray, np.ndarray]:
    src = np.concatenate([q.vertices for q, _ in pairs])
    dst = np.concatenate([s.vertices for _, s in pairs])
    return src, dst


def ransac_transform(
    pairs: PairList,
    iterations: int = 100,
    inlier_tol: float = 0.5,
    rng: np.random.Generator | None = None,
) -> tuple[RigidTransform, PairList]:
    """Robust transform from matched triangle pairs.

    Each iteration solves the closed-form alignment of one sampled pair's
    three vertices, then counts pairs whose vertices all land within
    inlier_tol. The best iteration's inliers are re-solved jointly.
    """
    if not pairs:
        raise NoValidTransform("no matched pairs to verify")
    rng = np.random.default_rng(0) if rng is None else rng

    src_all, dst_all = _vertex_correspondences(pairs)
    src_tris = src_all.reshape(-1, 3, 3)
    dst_tris = dst_all.reshape(-1, 3, 3)

    best_count = 0
    best_mask: np.ndarray | None = None
    for _ in range(iterations):
        pick = int(rng.integers(len(pairs)))
        try:
            t = solve_rigid_svd(Correspondences3(src_tris[pick], dst_tris[pick]))
        except DegenerateInput:
            continue
        moved = src_tris @ t.R.T + t.t
        ok = np.all(np.linalg.norm(moved - dst_tris, axis=2) < inlier_tol, axis=1)
        count = int(ok.sum())
        if count > best_count:
            best_count = count
            best_mask = ok

    if best_mask is None or best_count < MIN_INLIER_PAIRS:
        raise NoValidTransform(
            f"best sample has {best_count} inlier pairs, need {MIN_INLIER_PAIRS}"
        )
    inliers = [p for p, keep in zip(pairs, best_mask) if keep]
    src, dst = _vertex_correspondences(inliers)
    refined = solve_rigid_svd(Correspondences3(src, dst))
    return refined, inliers


def _normal_residuals(rotated_normals: np.ndarray, target_normals: np.ndarray) -> np.ndarray:
    """Sign-robust normal differences: the smaller of ||Ru - u'|| and ||Ru + u'||."""
    minus = np.linalg.norm(rotated_normals - target_normals, axis=1)
    plus = np.linalg.norm(rotated_normals + target_normals, axis=1)
    return np.minimum(minus, plus)


def plane_overlap(
    current: list[Plane],
    candidate: list[Plane],
    transform: RigidTransform,
    sigma_n: float = 0.2,
    sigma_d: float = 0.3,
    tree: cKDTree | None = None,
) -> float:
    """Fraction of current planes that coincide with a candidate plane under T.

    Each transformed current center is matched to its nearest candidate
    center; the pair coincides when the normals agree up to sign within
    sigma_n and the point-to-plane distance is below sigma_d.
    """
    if not current or not candidate:
        raise EmptyPlaneList("plane overlap needs non-empty plane lists")
    cand_centers = np.array([p.center for p in candidate])
    cand_normals = np.array([p.normal for p in candidate])
    if tree is None:
        tree = cKDTree(cand_centers)

    centers = np.array([p.center for p in current]) @ transform.R.T + transform.t
    normals = np.array([p.normal for p in current]) @ transform.R.T
    _, nearest = tree.query(centers)
    n_res = _normal_residuals(normals, cand_normals[nearest])
    d_res = np.abs(np.einsum("ij,ij->i", cand_normals[nearest], centers - cand_centers[nearest]))
    coinciding = np.count_nonzero((n_res < sigma_n) & (d_res < sigma_d))
    return coinciding / len(current)


def score_candidates(
    candidates: list[Candidate],
    current_planes: list[Plane],
    plane_store: dict[int, list[Plane]],
    sigma_n: float = 0.2,
    sigma_d: float = 0.3,
    iterations: int = 100,
    inlier_tol: float = 0.5,
    min_votes: int = 5,
    rng: np.random.Generator | None = None,
) -> list[ScoredCandidate]:
    """RANSAC + plane overlap for every candidate, in vote order.

    Candidates below min_votes, without a valid transform, or without stored
    planes score zero overlap.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    scored: list[ScoredCandidate] = []
    for cand in candidates:
        result = ScoredCandidate(cand.frame_id, cand.votes, 0.0, None, 0)
        planes = plane_store.get(cand.frame_id)
        if cand.votes >= min_votes and planes and current_planes:
            try:
                transform, inliers = ransac_transform(
                    list(cand.pairs), iterations=iterations, inlier_tol=inlier_tol, rng=rng
                )
                overlap = plane_overlap(
                    current_planes, planes, transform, sigma_n=sigma_n, sigma_d=sigma_d
                )
                result = ScoredCandidate(
                    cand.frame_id, cand.votes, overlap, transform, len(inliers)
                )
            except NoValidTransform:
                pass
        scored.append(result)
    return scored


def verify_loop(
    query_id: int,
    candidates: list[Candidate],
    current_planes: list[Plane],
    plane_store: dict[int, list[Plane]],
    sigma_pc: float = 0.5,
    sigma_n: float = 0.2,
    sigma_d: float = 0.3,
    iterations: int = 100,
    inlier_tol: float = 0.5,
    min_votes: int = 5,
    mode: str = "first",
    rng: np.random.Generator | None = None,
) -> LoopResult | None:
    """Accept the first candidate (vote order) whose plane overlap reaches
    sigma_pc; mode="best" scores all candidates and keeps the best overlap."""
    if mode not in ("first", "best"):
        raise ValueError(f"mode must be 'first' or 'best', got {mode}")
    rng = np.random.default_rng(0) if rng is None else rng

    best: LoopResult | None = None
    for cand in candidates:
        scored = score_candidates(
            [cand], current_planes, plane_store,
            sigma_n=sigma_n, sigma_d=sigma_d, iterations=iterations,
            inlier_tol=inlier_tol, min_votes=min_votes, rng=rng,
        )[0]
        if scored.transform is None or scored.overlap < sigma_pc:
            continue
        result = LoopResult(
            query_id=query_id,
            matched_id=scored.frame_id,
            transform=scored.transform,
            overlap=scored.overlap,
            inlier_pairs=scored.inlier_pairs,
            votes=scored.votes,
        )
        if mode == "first":
            return result
        if best is None or result.overlap > best.overlap:
            best = result
    return best


def plane_icp(
    current: list[Plane],
    candidate: list[Plane],
    initial: RigidTransform,
    sigma_n: float = 0.2,
    sigma_d: float = 0.3,
    max_iterations: int = 30,
    update_tol: float = 1e-6,
) -> RigidTransform:
    """Refine a transform by minimizing plane-pair normal and point-to-plane
    residuals with damped Gauss-Newton on a 6-dof local perturbation.

    Pairs are re-associated by nearest center each iteration and gated by the
    same sigma_n / sigma_d tests used for overlap scoring. Never returns a
    transform with higher cost than the initial one.
    """
    if not current or not candidate:
        raise EmptyPlaneList("plane refinement needs non-empty plane lists")
    cand_centers = np.array([p.center for p in candidate])
    cand_normals = np.array([p.normal for p in candidate])
    cur_centers = np.array([p.center for p in current])
    cur_normals = np.array([p.normal for p in current])
    tree = cKDTree(cand_centers)

    def associate(T: RigidTransform):
        centers = cur_centers @ T.R.T + T.t
        normals = cur_normals @ T.R.T
        _, nearest = tree.query(centers)
        tgt_n = cand_normals[nearest]
        tgt_c = cand_centers[nearest]
        n_res = _normal_residuals(normals, tgt_n)
        d_res = np.abs(np.einsum("ij,ij->i", tgt_n, centers - tgt_c))
        mask = (n_res < sigma_n) & (d_res < sigma_d)
        # per-pair normal sign that minimizes the residual
        minus = np.linalg.norm(normals - tgt_n, axis=1)
        plus = np.linalg.norm(normals + tgt_n, axis=1)
        signs = np.where(minus <= plus, 1.0, -1.0)
        return mask, nearest, signs

    def cost(T: RigidTransform, mask, nearest, signs) -> float:
        centers = cur_centers[mask] @ T.R.T + T.t
        normals = cur_normals[mask] @ T.R.T
        tgt_n = cand_normals[nearest[mask]]
        tgt_c = cand_centers[nearest[mask]]
        rn = (normals - signs[mask, None] * tgt_n) / sigma_n
        rd = np.einsum("ij,ij->i", tgt_n, centers - tgt_c) / sigma_d
        return float(np.sum(rn * rn) + np.sum(rd * rd))

    mask0, nearest0, signs0 = associate(initial)
    if int(mask0.sum()) < MIN_REFINE_PAIRS:
        raise InsufficientOverlap(
            f"{int(mask0.sum())} coinciding plane pairs under the initial transform, "
            f"need {MIN_REFINE_PAIRS}"
        )
    initial_cost = cost(initial, mask0, nearest0, signs0)

    T = initial
    damping = 1e-6
    for _ in range(max_iterations):
        mask, nearest, signs = associate(T)
        if int(mask.sum()) < MIN_REFINE_PAIRS:
            break
        centers = cur_centers[mask] @ T.R.T + T.t
        normals = cur_normals[mask] @ T.R.T
        tgt_n = cand_normals[nearest[mask]]
        tgt_c = cand_centers[nearest[mask]]
        s = signs[mask]

        # residuals: rn = (R u - s u') / sigma_n,  rd = u'.(R g + t - g') / sigma_d
        rn = (normals - s[:, None] * tgt_n) / sigma_n
        rd = np.einsum("ij,ij->i", tgt_n, centers - tgt_c) / sigma_d

        # left perturbation: R <- Exp(dw) R, t <- t + dt
        # d rn / d dw = -[R u]x / sigma_n; d rd / d dw = ((R g) x u')/sigma_d; d rd / d dt = u'/sigma_d
        n_pairs = int(mask.sum())
        J = np.zeros((n_pairs * 3 + n_pairs, 6))
        r = np.concatenate([rn.ravel(), rd])
        J[: n_pairs * 3, 0:3] = (-_skew_batch(normals) / sigma_n).reshape(-1, 3)
        rotated_centers = centers - T.t
        J[n_pairs * 3 :, 0:3] = np.cross(rotated_centers, tgt_n) / sigma_d
        J[n_pairs * 3 :, 3:6] = tgt_n / sigma_d

        current_cost = cost(T, mask, nearest, signs)
        step_taken = False
        for _ in range(8):
            H = J.T @ J + damping * np.eye(6)
            delta = np.linalg.solve(H, -J.T @ r)
            T_try = _apply_perturbation(T, delta)
            if cost(T_try, mask, nearest, signs) <= current_cost:
                T = T_try
                damping = max(damping / 3.0, 1e-9)
                step_taken = True
                break
            damping *= 10.0
        if not step_taken:
            break
        if float(np.linalg.norm(delta)) < update_tol:
            break

    mask_f, nearest_f, signs_f = associate(T)
    if int(mask_f.sum()) >= MIN_REFINE_PAIRS and cost(T, mask_f, nearest_f, signs_f) <= initial_cost:
        return T
    return initial


def _skew_batch(vectors: np.ndarray) -> np.ndarray:
    """(n, 3) vectors -> (n, 3, 3) cross-product matrices."""
    n = len(vectors)
    out = np.zeros((n, 3, 3))
    x, y, z = vectors[:, 0], vectors[:, 1], vectors[:, 2]
    out[:, 0, 1] = -z
    out[:, 0, 2] = y
    out[:, 1, 0] = z
    out[:, 1, 2] = -x
    out[:, 2, 0] = -y
    out[:, 2, 1] = x
    return out


def _apply_perturbation(T: RigidTransform, delta: np.ndarray) -> RigidTransform:
    """Left-multiplicative update: (Exp(dw) R, t + dt)."""
    dw = delta[0:3]
    dt = delta[3:6]
    angle = float(np.linalg.norm(dw))
    if angle < 1e-14:
        dR = np.eye(3)
    else:
        axis = dw / angle
        K = np.array(
            [
                [0.0, -axis[2], axis[1]],
                [axis[2], 0.0, -axis[0]],
                [-axis[1], axis[0], 0.0],
            ]
        )
        dR = np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)
    # re-orthonormalize to keep the rotation valid over many iterations
    R = dR @ T.R
    U, _, Vt = np.linalg.svd(R)
    d = np.sign(np.linalg.det(U @ Vt))
    R = U @ np.diag([1.0, 1.0, d]) @ Vt
    return RigidTransform(R, T.t + dt)
