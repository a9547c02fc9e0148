"""Run configuration and pipeline orchestration.

extract_frame is the front half of the pipeline (downsample, voxelize, grow
planes, key points, descriptors). MatchingSession chains it with retrieval,
verification, and database insertion for sequential replay.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .database import DescriptorDatabase
from .descriptors import TriangleDescriptor, build_descriptors
from .errors import ConfigError, EmptyPlaneList, InsufficientOverlap
from .ingest import voxel_downsample
from .keypoints import KeyPoint, keyframe_keypoints
from .loop import LoopResult, ScoredCandidate, plane_icp, score_candidates
from .planes import Plane, build_voxel_map, classify_plane_voxels, grow_planes


@dataclass
class PipelineConfig:
    """Every tunable of the pipeline, with defaults that match the evaluated
    outdoor setup (1 m voxels, 10-scan keyframes, 0.5 overlap acceptance)."""

    voxel_size: float = 1.0
    sigma1: float = 0.01
    sigma2: float = 0.05
    sigma_n: float = 0.2
    sigma_d: float = 0.3
    sigma_pc: float = 0.5
    delta_l: float = 0.2
    delta_n: float = 0.1
    pixel_size: float = 0.5
    min_dist: float = 0.2
    k_neighbors: int = 20
    n_accumulate: int = 10
    skip_recent: int = 50
    iterations: int = 100
    inlier_tol: float = 0.5
    min_votes: int = 5
    seed: int = 0
    downsample_leaf: float = 0.25  # 0 disables pre-extraction downsampling
    gt_radius: float = 20.0
    normal_merge_tol: float = 0.02
    dist_merge_tol: float = 0.2
    connectivity: int = 6
    max_keypoints: int = 200
    min_side: float = 0.5
    degenerate_slack: float = 0.1
    dedup_resolution: float = 0.01
    refine: bool = True
    refine_min_voxels: int = 3     # drop sliver planes from refinement input
    refine_sigma_n: float = 0.02   # tighter pair gates for fine alignment:
    refine_sigma_d: float = 0.10   # only well-matched planes drive the solve
    mode: str = "first"

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        """Parse a flat key=value config file ('#' starts a comment)."""
        known = {f.name: f.type for f in fields(cls)}
        values: dict[str, object] = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            token = line.split("#", 1)[0].strip()
            if not token:
                continue
            if "=" not in token:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {token!r}")
            key, raw = (part.strip() for part in token.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown parameter {key!r}")
            values[key] = _coerce(key, raw, known[key], path, lineno)
        return cls(**values)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def write(self, path) -> None:
        Path(path).write_text(
            "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())
        )


def _coerce(key: str, raw: str, annotation, path, lineno):
    target = str(annotation)
    try:
        if "bool" in target:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if "int" in target:
            return int(raw)
        if "float" in target:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None


@dataclass
class FrameExtraction:
    """Everything the matcher needs from one keyframe."""

    frame_id: int
    planes: list[Plane]
    keypoints: list[KeyPoint]
    descriptors: list[TriangleDescriptor]
    n_plane_voxels: int = 0


def extract_frame(cloud: np.ndarray, frame_id: int, cfg: PipelineConfig) -> FrameExtraction:
    """Downsample, voxelize, grow planes, and build descriptors for one keyframe."""
    if cfg.downsample_leaf > 0:
        cloud = voxel_downsample(cloud, cfg.downsample_leaf)
    voxmap = build_voxel_map(cloud, cfg.voxel_size)
    n_plane = classify_plane_voxels(voxmap, cfg.sigma1, cfg.sigma2)
    planes = grow_planes(
        voxmap,
        normal_merge_tol=cfg.normal_merge_tol,
        dist_merge_tol=cfg.dist_merge_tol,
        connectivity=cfg.connectivity,
    )
    keypoints = keyframe_keypoints(
        planes,
        voxmap,
        pixel_size=cfg.pixel_size,
        min_dist=cfg.min_dist,
        frame_id=frame_id,
        max_keypoints=cfg.max_keypoints,
    )
    descriptors = build_descriptors(
        keypoints,
        k_neighbors=cfg.k_neighbors,
        frame_id=frame_id,
        min_side=cfg.min_side,
        degenerate_slack=cfg.degenerate_slack,
        dedup_resolution=cfg.dedup_resolution,
    )
    return FrameExtraction(
        frame_id=frame_id,
        planes=planes,
        keypoints=keypoints,
        descriptors=descriptors,
        n_plane_voxels=n_plane,
    )


@dataclass
class KeyframeOutcome:
    """What one replayed keyframe produced: extraction, candidate scores,
    the accepted loop (if any), and per-stage wall times in milliseconds."""

    extraction: FrameExtraction
    scored: list[ScoredCandidate]
    loop: LoopResult | None
    t_extract_ms: float
    t_query_ms: float
    t_verify_ms: float


class MatchingSession:
    """Sequential place-recognition session: query history, then insert self."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.db = DescriptorDatabase(delta_l=cfg.delta_l, delta_n=cfg.delta_n)
        self.plane_store: dict[int, list[Plane]] = {}
        self.rng = np.random.default_rng(cfg.seed)

    def add_frame(self, frame_id: int, cloud: np.ndarray) -> FrameExtraction:
        """Extract and insert a keyframe without querying (history seeding)."""
        extraction = extract_frame(cloud, frame_id, self.cfg)
        self.db.insert_frame(frame_id, extraction.descriptors)
        self.plane_store[frame_id] = extraction.planes
        return extraction

    def process_keyframe(self, frame_id: int, cloud: np.ndarray) -> KeyframeOutcome:
        cfg = self.cfg
        t0 = time.perf_counter()
        extraction = extract_frame(cloud, frame_id, cfg)
        t1 = time.perf_counter()
        candidates = self.db.query_candidates(extraction.descriptors, skip_recent=cfg.skip_recent)
        t2 = time.perf_counter()
        scored = score_candidates(
            candidates,
            extraction.planes,
            self.plane_store,
            sigma_n=cfg.sigma_n,
            sigma_d=cfg.sigma_d,
            iterations=cfg.iterations,
            inlier_tol=cfg.inlier_tol,
            min_votes=cfg.min_votes,
            rng=self.rng,
        )
        loop = self._select(frame_id, scored)
        if loop is not None and cfg.refine:
            # sliver planes (crease-contaminated voxels) carry unstable
            # normals; keep only grown regions for the refinement stage
            keep = cfg.refine_min_voxels
            current = [p for p in extraction.planes if len(p.member_cells) >= keep]
            matched = [
                p for p in self.plane_store[loop.matched_id] if len(p.member_cells) >= keep
            ]
            try:
                refined = plane_icp(
                    current,
                    matched,
                    loop.transform,
                    sigma_n=cfg.refine_sigma_n,
                    sigma_d=cfg.refine_sigma_d,
                )
                loop = LoopResult(
                    query_id=loop.query_id,
                    matched_id=loop.matched_id,
                    transform=loop.transform,
                    overlap=loop.overlap,
                    inlier_pairs=loop.inlier_pairs,
                    votes=loop.votes,
                    refined=refined,
                )
            except (InsufficientOverlap, EmptyPlaneList):
                pass
        t3 = time.perf_counter()
        self.db.insert_frame(frame_id, extraction.descriptors)
        self.plane_store[frame_id] = extraction.planes
        return KeyframeOutcome(
            extraction=extraction,
            scored=scored,
            loop=loop,
            t_extract_ms=(t1 - t0) * 1e3,
            t_query_ms=(t2 - t1) * 1e3,
            t_verify_ms=(t3 - t2) * 1e3,
        )

    def _select(self, query_id: int, scored: list[ScoredCandidate]) -> LoopResult | None:
        cfg = self.cfg
        best: LoopResult | None = None
        for s in scored:
            if s.transform is None or s.overlap < cfg.sigma_pc:
                continue
            result = LoopResult(
                query_id=query_id,
                matched_id=s.frame_id,
                transform=s.transform,
                overlap=s.overlap,
                inlier_pairs=s.inlier_pairs,
                votes=s.votes,
            )
            if cfg.mode == "first":
                return result
            if best is None or result.overlap > best.overlap:
                best = result
        return best
