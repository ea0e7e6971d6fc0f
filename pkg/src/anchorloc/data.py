"""Dataset ingestion: pose text files, binary feature files, anchor-map
precomputation and per-sample offset tables.

Pose text format, one record per line::

    frame_id tx ty tz qw qx qy qz

Lines starting with ``#`` (and blank lines) are ignored. Floats are written
with 17 significant digits, which round-trips IEEE doubles exactly, so
parse -> serialize -> parse is bit-stable.

Feature files are little-endian binary: magic ``ALFT``, a u32 version, u64
frame count, u64 dim, then per row a u32-length-prefixed UTF-8 frame id and
``dim`` float64 values.

A dataset directory holds ``poses_train.txt``, ``poses_test.txt``,
``features_train.bin``, ``features_test.bin``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataIntegrityError, InvalidInputError, ParseError
from .geometry import AnchorMap, Pose, build_anchor_map
from .simworld import Sample

QUAT_NORM_TOL = 1e-3

_FEAT_MAGIC = b"ALFT"
_FEAT_VERSION = 1

POSES_TRAIN = "poses_train.txt"
POSES_TEST = "poses_test.txt"
FEATURES_TRAIN = "features_train.bin"
FEATURES_TEST = "features_test.bin"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def format_pose_line(frame_id: str, pose: Pose) -> str:
    fields = [frame_id]
    fields += [_fmt(v) for v in pose.position]
    fields += [_fmt(v) for v in pose.orientation]
    return " ".join(fields)


def parse_pose_line(line: str, line_number: int | None = None) -> tuple[str, Pose]:
    parts = line.split()
    if len(parts) != 8:
        raise ParseError(f"expected 8 whitespace-separated fields, got {len(parts)}",
                         line_number)
    frame_id = parts[0]
    try:
        values = [float(p) for p in parts[1:]]
    except ValueError as err:
        raise ParseError(f"bad float field: {err}", line_number) from None
    quat = np.array(values[3:])
    norm = float(np.linalg.norm(quat))
    if abs(norm - 1.0) > QUAT_NORM_TOL:
        raise DataIntegrityError(
            f"line {line_number}: quaternion norm {norm:.6g} is more than "
            f"{QUAT_NORM_TOL} from unit")
    # Pose renormalizes (idempotently), keeping file round-trips bit-stable
    return frame_id, Pose(position=np.array(values[:3]), orientation=quat)


def load_pose_file(path) -> list[tuple[str, Pose]]:
    """Ordered (frame_id, Pose) records from a pose text file."""
    records = []
    with open(path, "r") as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            records.append(parse_pose_line(line, n))
    return records


def save_pose_file(path, records: list[tuple[str, Pose]]) -> None:
    with open(path, "w", newline="\n") as fh:
        for frame_id, pose in records:
            fh.write(format_pose_line(frame_id, pose) + "\n")


def save_features(path, frame_ids: list[str], features: np.ndarray) -> None:
    feats = np.ascontiguousarray(features, dtype="<f8")
    if feats.ndim != 2 or feats.shape[0] != len(frame_ids):
        raise InvalidInputError("features must be (n, d) with one row per frame id")
    with open(path, "wb") as fh:
        fh.write(_FEAT_MAGIC)
        fh.write(_FEAT_VERSION.to_bytes(4, "little"))
        fh.write(feats.shape[0].to_bytes(8, "little"))
        fh.write(feats.shape[1].to_bytes(8, "little"))
        for fid, row in zip(frame_ids, feats):
            enc = fid.encode()
            fh.write(len(enc).to_bytes(4, "little"))
            fh.write(enc)
            fh.write(row.tobytes())


def load_features(path) -> tuple[list[str], np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _FEAT_MAGIC:
        raise ParseError(f"{path}: not a feature file (bad magic)")
    version = int.from_bytes(raw[4:8], "little")
    if version != _FEAT_VERSION:
        raise ParseError(f"{path}: unsupported feature file version {version}")
    count = int.from_bytes(raw[8:16], "little")
    dim = int.from_bytes(raw[16:24], "little")
    ids = []
    feats = np.empty((count, dim))
    off = 24
    for i in range(count):
        idlen = int.from_bytes(raw[off:off + 4], "little")
        off += 4
        ids.append(raw[off:off + idlen].decode())
        off += idlen
        feats[i] = np.frombuffer(raw[off:off + 8 * dim], dtype="<f8")
        off += 8 * dim
    return ids, feats


@dataclass
class SampleBatch:
    """Column-stacked samples with loss-ready ground truth."""

    frame_ids: list[str]
    features: np.ndarray       # (n, d)
    positions: np.ndarray      # (n, 3)
    orientations: np.ndarray   # (n, 4)
    offsets: np.ndarray        # (n, N, 2)
    nearest: np.ndarray        # (n,)
    visible_sets: list[frozenset[str]] | None = None

    def __len__(self) -> int:
        return self.features.shape[0]

    @classmethod
    def build(cls, frame_ids, poses: list[Pose], features: np.ndarray,
              anchor_map: AnchorMap, visible_sets=None) -> "SampleBatch":
        n = len(poses)
        feats = np.asarray(features, dtype=np.float64)
        if feats.shape[0] != n:
            raise InvalidInputError(
                f"{feats.shape[0]} feature rows for {n} poses")
        positions = np.array([p.position for p in poses]) if n else np.zeros((0, 3))
        orientations = np.array([p.orientation for p in poses]) if n else np.zeros((0, 4))
        offsets = positions[:, None, :2] - anchor_map.anchors[None, :, :] if n \
            else np.zeros((0, len(anchor_map), 2))
        d2 = ((anchor_map.anchors[None, :, :] - positions[:, None, :2]) ** 2).sum(axis=2) \
            if n else np.zeros((0, len(anchor_map)))
        nearest = d2.argmin(axis=1) if n else np.zeros(0, dtype=np.intp)
        return cls(frame_ids=list(frame_ids), features=feats, positions=positions,
                   orientations=orientations, offsets=offsets, nearest=nearest,
                   visible_sets=visible_sets)


@dataclass
class SceneDataset:
    name: str
    anchor_map: AnchorMap
    train: SampleBatch
    test: SampleBatch

    @property
    def num_anchors(self) -> int:
        return len(self.anchor_map)


def assemble(poses: list[tuple[str, Pose]], features: np.ndarray, k: int,
             *, test_poses: list[tuple[str, Pose]] | None = None,
             test_features: np.ndarray | None = None,
             name: str = "scene",
             train_visible=None, test_visible=None) -> SceneDataset:
    """Build a SceneDataset; the anchor map comes from training poses ONLY.

    Offset tables and nearest-anchor labels are materialized for both splits;
    the test split never contributes anchors.
    """
    pose_objs = [p for _, p in poses]
    feats = np.asarray(features, dtype=np.float64)
    if len(pose_objs) != feats.shape[0]:
        raise InvalidInputError(
            f"{len(pose_objs)} training poses but {feats.shape[0]} feature rows")
    anchor_map = build_anchor_map(pose_objs, k, source_scene=name)

    train = SampleBatch.build([fid for fid, _ in poses], pose_objs, feats,
                              anchor_map, visible_sets=train_visible)
    if test_poses is None:
        test_poses = []
        test_features = np.zeros((0, feats.shape[1] if feats.ndim == 2 else 0))
    tfeats = np.asarray(test_features, dtype=np.float64)
    if len(test_poses) != tfeats.shape[0]:
        raise InvalidInputError(
            f"{len(test_poses)} test poses but {tfeats.shape[0]} feature rows")
    test = SampleBatch.build([fid for fid, _ in test_poses],
                             [p for _, p in test_poses], tfeats, anchor_map,
                             visible_sets=test_visible)
    return SceneDataset(name=name, anchor_map=anchor_map, train=train, test=test)


def from_simworld(train_samples: list[Sample], test_samples: list[Sample], k: int,
                  name: str = "simworld") -> SceneDataset:
    """Assemble directly from in-memory world samples, keeping visibility
    ground truth for discovery analysis."""
    train_poses = [(f"t{i:05d}", s.pose) for i, s in enumerate(train_samples)]
    test_poses = [(f"e{i:05d}", s.pose) for i, s in enumerate(test_samples)]
    tf = np.array([s.feature for s in train_samples]) if train_samples else np.zeros((0, 0))
    ef = np.array([s.feature for s in test_samples]) if test_samples else \
        np.zeros((0, tf.shape[1] if tf.size else 0))
    return assemble(train_poses, tf, k, test_poses=test_poses, test_features=ef,
                    name=name,
                    train_visible=[s.visible_set for s in train_samples],
                    test_visible=[s.visible_set for s in test_samples])


def export_dataset(out_dir, train_samples: list[Sample], test_samples: list[Sample]) -> None:
    """Write the four dataset files for a generated world."""
    os.makedirs(out_dir, exist_ok=True)
    train_recs = [(f"t{i:05d}", s.pose) for i, s in enumerate(train_samples)]
    test_recs = [(f"e{i:05d}", s.pose) for i, s in enumerate(test_samples)]
    save_pose_file(os.path.join(out_dir, POSES_TRAIN), train_recs)
    save_pose_file(os.path.join(out_dir, POSES_TEST), test_recs)
    dim = train_samples[0].feature.shape[0] if train_samples else (
        test_samples[0].feature.shape[0] if test_samples else 0)
    tf = np.array([s.feature for s in train_samples]).reshape(len(train_samples), dim)
    ef = np.array([s.feature for s in test_samples]).reshape(len(test_samples), dim)
    save_features(os.path.join(out_dir, FEATURES_TRAIN), [r[0] for r in train_recs], tf)
    save_features(os.path.join(out_dir, FEATURES_TEST), [r[0] for r in test_recs], ef)


def load_dataset_dir(data_dir, k: int, name: str | None = None) -> SceneDataset:
    """Load the standard dataset directory layout and assemble with interval k."""
    train_poses = load_pose_file(os.path.join(data_dir, POSES_TRAIN))
    test_poses = load_pose_file(os.path.join(data_dir, POSES_TEST))
    train_ids, train_feats = load_features(os.path.join(data_dir, FEATURES_TRAIN))
    test_ids, test_feats = load_features(os.path.join(data_dir, FEATURES_TEST))
    if [fid for fid, _ in train_poses] != train_ids:
        raise DataIntegrityError("train pose/feature frame ids disagree")
    if [fid for fid, _ in test_poses] != test_ids:
        raise DataIntegrityError("test pose/feature frame ids disagree")
    return assemble(train_poses, train_feats, k, test_poses=test_poses,
                    test_features=test_feats,
                    name=name or os.path.basename(os.path.normpath(str(data_dir))))
