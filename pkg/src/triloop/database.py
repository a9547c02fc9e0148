"""Hash-indexed descriptor store with vote-based candidate retrieval.

Signatures are quantized componentwise and the six cells mixed into one
64-bit bucket key. The full cell 6-tuple is kept alongside every stored
descriptor so bucket collisions between distinct cells never produce false
matches. Inserting a frame is atomic with respect to concurrent queries.
"""

from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .descriptors import TriangleDescriptor
from .errors import DuplicateFrame, MalformedRecord

TOP_K_CANDIDATES = 10

# Nudge values sitting a hair below a cell boundary (an artifact of decimal
# grid sizes in binary floats) up into the intended cell.
_QUANT_EPS = 1e-9

_MIX_CONSTANTS = (
    0x9E3779B97F4A7C15,
    0xC2B2AE3D27D4EB4F,
    0x165667B19E3779F9,
    0x27D4EB2F165667C5,
    0xFF51AFD7ED558CCD,
    0xC4CEB9FE1A85EC53,
)
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class HashKey:
    """Quantized signature cells plus their mixed 64-bit bucket key."""

    cells: tuple[int, int, int, int, int, int]
    bucket: int


def quantize(value: float, delta: float) -> int:
    return int(math.floor(value / delta + _QUANT_EPS))


def make_key(signature, delta_l: float, delta_n: float) -> HashKey:
    """Quantize (l12, l23, l13, |n1.n2|, |n2.n3|, |n1.n3|) into a hash key."""
    sig = np.asarray(signature, dtype=np.float64)
    cells = (
        quantize(sig[0], delta_l),
        quantize(sig[1], delta_l),
        quantize(sig[2], delta_l),
        quantize(sig[3], delta_n),
        quantize(sig[4], delta_n),
        quantize(sig[5], delta_n),
    )
    h = 0xCBF29CE484222325
    for cell, mult in zip(cells, _MIX_CONSTANTS):
        h ^= (cell & _MASK64) * mult & _MASK64
        h = ((h << 13) | (h >> 51)) & _MASK64
    return HashKey(cells=cells, bucket=h)


@dataclass(frozen=True)
class Candidate:
    """One retrieved frame with its votes and matched descriptor pairs."""

    frame_id: int
    votes: int
    pairs: tuple[tuple[TriangleDescriptor, TriangleDescriptor], ...]


@dataclass
class _StoredDescriptor:
    cells: tuple[int, int, int, int, int, int]
    descriptor: TriangleDescriptor


_SNAPSHOT_MAGIC = b"TRIDESC1"
_SNAPSHOT_VERSION = 1
_DESC_FLOATS = 24  # p1 p2 p3 (9) + n1 n2 n3 (9) + sides (3) + centroid (3)


class DescriptorDatabase:
    """All historical descriptors, bucketed by quantized signature."""

    def __init__(self, delta_l: float = 0.2, delta_n: float = 0.1):
        if delta_l <= 0 or delta_n <= 0:
            raise ValueError("quantization resolutions must be > 0")
        self.delta_l = delta_l
        self.delta_n = delta_n
        self._buckets: dict[int, list[_StoredDescriptor]] = {}
        self._insertion_order: list[int] = []
        self._frame_descriptors: dict[int, list[TriangleDescriptor]] = {}
        self._descriptors_indexed = 0
        self._lock = threading.RLock()

    @property
    def frames_indexed(self) -> int:
        return len(self._insertion_order)

    @property
    def descriptors_indexed(self) -> int:
        return self._descriptors_indexed

    def key_for(self, descriptor: TriangleDescriptor) -> HashKey:
        return make_key(descriptor.signature(), self.delta_l, self.delta_n)

    def insert_frame(self, frame_id: int, descriptors: list[TriangleDescriptor]) -> None:
        """Insert one frame's descriptors atomically."""
        with self._lock:
            if frame_id in self._frame_descriptors:
                raise DuplicateFrame(f"frame {frame_id} already inserted")
            for d in descriptors:
                if d.frame_id != frame_id:
                    raise ValueError(
                        f"descriptor carries frame {d.frame_id}, inserting frame {frame_id}"
                    )
            staged: dict[int, list[_StoredDescriptor]] = {}
            for d in descriptors:
                key = self.key_for(d)
                staged.setdefault(key.bucket, []).append(_StoredDescriptor(key.cells, d))
            for bucket, items in staged.items():
                self._buckets.setdefault(bucket, []).extend(items)
            self._frame_descriptors[frame_id] = list(descriptors)
            self._insertion_order.append(frame_id)
            self._descriptors_indexed += len(descriptors)

    def _excluded_frames(self, skip_recent: int) -> set[int]:
        if skip_recent <= 0:
            return set()
        return set(self._insertion_order[-skip_recent:])

    def vote_counts(
        self, descriptors: list[TriangleDescriptor], skip_recent: int = 0
    ) -> dict[int, int]:
        """Votes per stored frame: one per (query descriptor, frame) cell match."""
        with self._lock:
            excluded = self._excluded_frames(skip_recent)
            votes: dict[int, int] = {}
            for q in descriptors:
                key = self.key_for(q)
                voted: set[int] = set()
                for stored in self._buckets.get(key.bucket, ()):
                    fid = stored.descriptor.frame_id
                    if stored.cells != key.cells or fid in excluded or fid in voted:
                        continue
                    voted.add(fid)
                    votes[fid] = votes.get(fid, 0) + 1
            return votes

    def query_candidates(
        self, descriptors: list[TriangleDescriptor], skip_recent: int = 0
    ) -> list[Candidate]:
        """Top-voted frames with their matched pairs, at most TOP_K_CANDIDATES.

        Each (query descriptor, frame) contributes one vote and one pair; when
        a frame has several descriptors in the cell, the earliest stored one
        becomes the pair partner.
        """
        with self._lock:
            excluded = self._excluded_frames(skip_recent)
            votes: dict[int, int] = {}
            pairs: dict[int, list[tuple[TriangleDescriptor, TriangleDescriptor]]] = {}
            for q in descriptors:
                key = self.key_for(q)
                voted: set[int] = set()
                for stored in self._buckets.get(key.bucket, ()):
                    fid = stored.descriptor.frame_id
                    if stored.cells != key.cells or fid in excluded or fid in voted:
                        continue
                    voted.add(fid)
                    votes[fid] = votes.get(fid, 0) + 1
                    pairs.setdefault(fid, []).append((q, stored.descriptor))
            ranked = sorted(votes.items(), key=lambda kv: (-kv[1], kv[0]))
            return [
                Candidate(frame_id=fid, votes=n, pairs=tuple(pairs[fid]))
                for fid, n in ranked[:TOP_K_CANDIDATES]
            ]

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        """Write a binary snapshot; loading it reproduces the database exactly."""
        with self._lock:
            chunks = [
                _SNAPSHOT_MAGIC,
                struct.pack("<IddQ", _SNAPSHOT_VERSION, self.delta_l, self.delta_n,
                            len(self._insertion_order)),
            ]
            for fid in self._insertion_order:
                descs = self._frame_descriptors[fid]
                chunks.append(struct.pack("<qQ", fid, len(descs)))
                for d in descs:
                    values = np.concatenate(
                        [d.vertices.ravel(), d.normals.ravel(), np.asarray(d.sides), d.centroid]
                    )
                    chunks.append(struct.pack(f"<{_DESC_FLOATS}d", *values))
            Path(path).write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path) -> "DescriptorDatabase":
        raw = Path(path).read_bytes()
        if raw[:8] != _SNAPSHOT_MAGIC:
            raise MalformedRecord(f"{path}: bad magic, not a descriptor snapshot")
        offset = 8
        version, delta_l, delta_n, n_frames = struct.unpack_from("<IddQ", raw, offset)
        if version != _SNAPSHOT_VERSION:
            raise MalformedRecord(f"{path}: unsupported snapshot version {version}")
        offset += struct.calcsize("<IddQ")
        db = cls(delta_l=delta_l, delta_n=delta_n)
        for _ in range(n_frames):
            fid, n_descs = struct.unpack_from("<qQ", raw, offset)
            offset += struct.calcsize("<qQ")
            descriptors = []
            for _ in range(n_descs):
                values = struct.unpack_from(f"<{_DESC_FLOATS}d", raw, offset)
                offset += _DESC_FLOATS * 8
                descriptors.append(
                    TriangleDescriptor(
                        vertices=np.array(values[0:9]).reshape(3, 3),
                        normals=np.array(values[9:18]).reshape(3, 3),
                        sides=(values[18], values[19], values[20]),
                        frame_id=fid,
                    )
                )
            db.insert_frame(fid, descriptors)
        return db
