"""Pose representation, quaternion math and anchor-map construction.

Conventions
-----------
- Positions are 3-vectors in meters, world frame.
- Orientations are unit quaternions in (w, x, y, z) order.
- Anchors live in the horizontal (x, y) plane only; z and orientation are
  always handled in the global frame.

Everything here is immutable after construction and all operations are pure,
so concurrent use is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMapError, InvalidInputError

# Two anchors closer than this are considered the same point and deduplicated.
ANCHOR_DEDUP_TOL = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Pose:
    """A 6-DOF camera state: position plus unit-quaternion orientation.

    The orientation is renormalized on construction; a quaternion with
    (near-)zero norm or a non-finite position is rejected.
    """

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(-1)
        quat = np.asarray(self.orientation, dtype=np.float64).reshape(-1)
        if pos.shape != (3,):
            raise InvalidInputError(f"position must be a 3-vector, got shape {pos.shape}")
        if quat.shape != (4,):
            raise InvalidInputError(f"orientation must be a 4-vector, got shape {quat.shape}")
        if not np.isfinite(pos).all() or not np.isfinite(quat).all():
            raise InvalidInputError("pose components must be finite")
        norm = float(np.linalg.norm(quat))
        if norm < 1e-12:
            raise InvalidInputError("orientation quaternion has zero norm")
        # idempotent normalization keeps parse/serialize cycles bit-stable
        if abs(norm - 1.0) > 1e-12:
            quat = quat / norm
        object.__setattr__(self, "position", _readonly(pos))
        object.__setattr__(self, "orientation", _readonly(quat))

    @property
    def xy(self) -> np.ndarray:
        return self.position[:2]


@dataclass(frozen=True)
class AnchorMap:
    """Ordered anchor coordinates plus the frame interval that produced them."""

    anchors: np.ndarray  # (N, 2)
    frame_interval: int
    source_scene: str = ""

    def __post_init__(self):
        a = np.asarray(self.anchors, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != 2 or a.shape[0] == 0:
            raise InvalidInputError(f"anchors must be a non-empty (N, 2) array, got shape {a.shape}")
        if not np.isfinite(a).all():
            raise InvalidInputError("anchor coordinates must be finite")
        if self.frame_interval < 1:
            raise InvalidInputError("frame_interval must be >= 1")
        object.__setattr__(self, "anchors", _readonly(a))

    def __len__(self) -> int:
        return self.anchors.shape[0]

    @property
    def num_anchors(self) -> int:
        return self.anchors.shape[0]


@dataclass(frozen=True)
class OffsetTable:
    """Per-anchor (x, y) ground-truth offsets of one sample position."""

    offsets: np.ndarray  # (N, 2)

    def __post_init__(self):
        o = np.asarray(self.offsets, dtype=np.float64)
        if o.ndim != 2 or o.shape[1] != 2:
            raise InvalidInputError(f"offsets must be an (N, 2) array, got shape {o.shape}")
        object.__setattr__(self, "offsets", _readonly(o))

    def __len__(self) -> int:
        return self.offsets.shape[0]


def build_anchor_map(poses: list[Pose], k: int, source_scene: str = "") -> AnchorMap:
    """Subsample every k-th pose position into an anchor list.

    Anchors are the (x, y) of poses at indices 0, k, 2k, ...; positions that
    repeat within ``ANCHOR_DEDUP_TOL`` are dropped, keeping the first
    occurrence so anchor indices stay reproducible.
    """
    if len(poses) == 0:
        raise InvalidInputError("cannot build an anchor map from an empty pose list")
    if k < 1:
        raise InvalidInputError(f"frame interval must be >= 1, got {k}")

    candidates = np.array([p.xy for p in poses[::k]], dtype=np.float64)
    kept = np.empty_like(candidates)
    m = 0
    for cand in candidates:
        if m > 0:
            d2 = ((kept[:m] - cand) ** 2).sum(axis=1)
            if (d2 < ANCHOR_DEDUP_TOL**2).any():
                continue
        kept[m] = cand
        m += 1
    if m == 1:
        raise DegenerateMapError("all anchors collapse to a single point")
    return AnchorMap(anchors=kept[:m].copy(), frame_interval=k, source_scene=source_scene)


def relative_offsets(position: np.ndarray, anchor_map: AnchorMap) -> OffsetTable:
    """Ground-truth offsets: the sample (x, y) expressed in each anchor's origin."""
    pos = np.asarray(position, dtype=np.float64).reshape(-1)
    return OffsetTable(offsets=pos[:2] - anchor_map.anchors)


def nearest_anchor(position: np.ndarray, anchor_map: AnchorMap) -> int:
    """Index of the anchor closest in (x, y); ties break to the lowest index."""
    pos = np.asarray(position, dtype=np.float64).reshape(-1)
    d2 = ((anchor_map.anchors - pos[:2]) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def quat_norm(q: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(q, dtype=np.float64)))


def quat_angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle between two unit quaternions, in degrees.

    Uses 2*arccos(|a.b|), which respects the double cover (q and -q encode
    the same rotation), so the result is always in [0, 180].
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    for q in (a, b):
        if q.shape != (4,):
            raise InvalidInputError("quaternions must be 4-vectors")
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise InvalidInputError("quat_angle_deg requires unit quaternions (within 1e-6)")
    dot = min(1.0, abs(float(np.dot(a, b))))
    return math.degrees(2.0 * math.acos(dot))


def yaw_quat(yaw_rad: float) -> np.ndarray:
    """Unit quaternion for a rotation of ``yaw_rad`` about the +z axis."""
    h = 0.5 * yaw_rad
    return np.array([math.cos(h), 0.0, 0.0, math.sin(h)])
