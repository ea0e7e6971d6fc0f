"""Pose reconstruction from the three heads and the localization metrics:
median/mean translation error, median rotation error, threshold accuracy,
the anchor-interval sweep, and the anchor-discovery rate.

The accuracy criterion counts a prediction correct exactly when the
translation error is below 2 m AND the rotation error is below 5 degrees.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import model as modelmod
from . import optim as optimmod
from .data import SampleBatch, assemble
from .errors import DegenerateOrientationError, InvalidInputError, UndefinedRateError
from .geometry import AnchorMap, Pose, quat_angle_deg
from .model import NetworkSpec, PosePrediction

ACCURACY_TRANSLATION_M = 2.0
ACCURACY_ROTATION_DEG = 5.0


def median(values) -> float:
    """Sorted median; even-length lists average the two middle values."""
    v = sorted(float(x) for x in values)
    if not v:
        raise InvalidInputError("median of an empty sequence")
    n = len(v)
    mid = n // 2
    if n % 2 == 1:
        return v[mid]
    return 0.5 * (v[mid - 1] + v[mid])


@dataclass
class EvalReport:
    median_translation_m: float
    mean_translation_m: float
    median_rotation_deg: float
    accuracy_2m_5deg: float
    per_sample: list[tuple[float, float, int, int]]  # (terr, rerr, argmax anchor, nearest anchor)

    def to_dict(self) -> dict:
        return {
            "median_translation_m": self.median_translation_m,
            "mean_translation_m": self.mean_translation_m,
            "median_rotation_deg": self.median_rotation_deg,
            "accuracy_2m_5deg": self.accuracy_2m_5deg,
            "num_samples": len(self.per_sample),
        }


def reconstruct_pose(pred: PosePrediction, anchor_map: AnchorMap,
                     mode: str = "argmax") -> Pose:
    """Pose from network outputs.

    argmax mode: take the highest-confidence anchor and add its offset.
    weighted mode: confidence-weighted average of anchor-plus-offset, kept
    for comparison experiments.
    """
    if pred.logits.shape[0] != len(anchor_map):
        raise InvalidInputError("prediction/anchor-map size mismatch")
    norm = float(np.linalg.norm(pred.orient_raw))
    if norm <= 1e-12:
        raise DegenerateOrientationError("raw orientation has ~zero norm")
    if mode == "argmax":
        j = int(np.argmax(pred.logits))  # ties resolve to the lowest index
        xy = anchor_map.anchors[j] + pred.offsets[j]
    elif mode == "weighted":
        e = np.exp(pred.logits - pred.logits.max())
        c = e / e.sum()
        xy = (c[:, None] * (anchor_map.anchors + pred.offsets)).sum(axis=0)
    else:
        raise InvalidInputError(f"unknown reconstruction mode {mode!r}")
    return Pose(position=np.array([xy[0], xy[1], pred.z_hat]),
                orientation=pred.orient_raw / norm)


def _batch_reconstruct(spec: NetworkSpec, params: np.ndarray, batch: SampleBatch,
                       anchor_map: AnchorMap, mode: str = "argmax"):
    pred = modelmod.forward_batch(spec, params, batch.features)
    norms = np.linalg.norm(pred.orient_raw, axis=1)
    if (norms <= 1e-12).any():
        raise DegenerateOrientationError("raw orientation has ~zero norm in batch")
    if mode == "argmax":
        j = pred.logits.argmax(axis=1)
        xy = anchor_map.anchors[j] + pred.offsets[np.arange(len(j)), j]
    elif mode == "weighted":
        e = np.exp(pred.logits - pred.logits.max(axis=1, keepdims=True))
        c = e / e.sum(axis=1, keepdims=True)
        xy = (c[:, :, None] * (anchor_map.anchors[None] + pred.offsets)).sum(axis=1)
        j = pred.logits.argmax(axis=1)
    else:
        raise InvalidInputError(f"unknown reconstruction mode {mode!r}")
    quats = pred.orient_raw / norms[:, None]
    return xy, pred.z_hat, quats, j


def report_from_poses(pred_xyz: np.ndarray, pred_quats: np.ndarray,
                      batch: SampleBatch, pred_anchor: np.ndarray) -> EvalReport:
    """Metrics from already-reconstructed poses (shared with the baseline)."""
    if len(batch) == 0:
        raise InvalidInputError("cannot evaluate an empty test set")
    terr = np.linalg.norm(pred_xyz - batch.positions, axis=1)
    rerr = np.array([quat_angle_deg(q, g) for q, g in zip(pred_quats, batch.orientations)])
    correct = (terr < ACCURACY_TRANSLATION_M) & (rerr < ACCURACY_ROTATION_DEG)
    per_sample = [(float(t), float(r), int(a), int(n))
                  for t, r, a, n in zip(terr, rerr, pred_anchor, batch.nearest)]
    return EvalReport(
        median_translation_m=median(terr),
        mean_translation_m=float(terr.mean()),
        median_rotation_deg=median(rerr),
        accuracy_2m_5deg=float(correct.mean()),
        per_sample=per_sample,
    )


def evaluate(spec: NetworkSpec, params: np.ndarray, batch: SampleBatch,
             anchor_map: AnchorMap, mode: str = "argmax") -> EvalReport:
    """Per-sample errors and headline metrics on a test batch."""
    xy, z, quats, j = _batch_reconstruct(spec, params, batch, anchor_map, mode)
    pred_xyz = np.column_stack([xy, z])
    return report_from_poses(pred_xyz, quats, batch, j)


# --- anchor discovery -----------------------------------------------------------

def co_located_anchors(anchor_map: AnchorMap, landmarks, tol: float = 1e-9) -> dict[int, str]:
    """anchor index -> landmark id for landmarks sitting exactly on anchors."""
    out = {}
    for name, p in landmarks:
        d = np.linalg.norm(anchor_map.anchors - np.asarray(p, dtype=np.float64), axis=1)
        j = int(d.argmin())
        if d[j] <= tol:
            out[j] = name
    return out


def discovery_stats(spec: NetworkSpec, params: np.ndarray, batch: SampleBatch,
                    anchor_map: AnchorMap, landmarks) -> tuple[int, int]:
    """(successes, qualifying) for the anchor-discovery experiment.

    Qualifying samples are those whose nearest anchor carries a co-located
    landmark that is NOT in the sample's visible set. A success is an
    argmax-confidence anchor whose own co-located landmark IS visible.
    """
    if batch.visible_sets is None:
        raise InvalidInputError("discovery requires samples with visibility ground truth")
    anchor_lm = co_located_anchors(anchor_map, landmarks)
    pred = modelmod.forward_batch(spec, params, batch.features)
    j = pred.logits.argmax(axis=1)
    qualifying = successes = 0
    for i in range(len(batch)):
        ni = int(batch.nearest[i])
        if ni not in anchor_lm:
            continue
        if anchor_lm[ni] in batch.visible_sets[i]:
            continue
        qualifying += 1
        picked = int(j[i])
        if picked in anchor_lm and anchor_lm[picked] in batch.visible_sets[i]:
            successes += 1
    return successes, qualifying


def discovery_rate(spec: NetworkSpec, params: np.ndarray, batch: SampleBatch,
                   anchor_map: AnchorMap, landmarks) -> float:
    successes, qualifying = discovery_stats(spec, params, batch, anchor_map, landmarks)
    if qualifying == 0:
        raise UndefinedRateError("no test samples qualify for the discovery rate")
    return successes / qualifying


# --- anchor interval sweep --------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    k: int
    num_anchors: int
    median_m: float
    median_deg: float
    accuracy: float


def sweep_anchor_interval(train_poses, train_features, test_poses, test_features,
                          k_values, spec_template: NetworkSpec,
                          config: optimmod.TrainConfig,
                          name: str = "sweep") -> list[SweepRow]:
    """Train one model per frame interval with identical seeds and config.

    The network spec template is reused with num_anchors replaced by each
    interval's anchor count, so every run differs only in its anchor map.
    """
    if not k_values:
        raise InvalidInputError("need at least one k value")
    rows = []
    for k in k_values:
        scene = assemble(train_poses, train_features, int(k),
                         test_poses=test_poses, test_features=test_features,
                         name=f"{name}-k{k}")
        spec = NetworkSpec(input_dim=spec_template.input_dim,
                           hidden_layers=spec_template.hidden_layers,
                           num_anchors=scene.num_anchors,
                           activation=spec_template.activation,
                           seed=spec_template.seed)
        report = optimmod.train(scene.train, spec, config)
        ev = evaluate(spec, report.params, scene.test, scene.anchor_map)
        rows.append(SweepRow(k=int(k), num_anchors=scene.num_anchors,
                             median_m=ev.median_translation_m,
                             median_deg=ev.median_rotation_deg,
                             accuracy=ev.accuracy_2m_5deg))
    return rows


# --- report / artifact writers -----------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_eval_report(out_dir, report: EvalReport, prefix: str = "eval") -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{prefix}_report.json"), "w", newline="\n") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, f"{prefix}_per_sample.csv"), "w", newline="\n") as fh:
        fh.write("index,translation_m,rotation_deg,pred_anchor,nearest_anchor\n")
        for i, (t, r, a, n) in enumerate(report.per_sample):
            fh.write(f"{i},{_fmt(t)},{_fmt(r)},{a},{n}\n")


def sweep_csv_text(rows: list[SweepRow]) -> str:
    lines = ["k,N,median_m,median_deg,accuracy"]
    for r in rows:
        lines.append(f"{r.k},{r.num_anchors},{_fmt(r.median_m)},"
                     f"{_fmt(r.median_deg)},{_fmt(r.accuracy)}")
    return "\n".join(lines) + "\n"


def write_sweep_csv(path, rows: list[SweepRow]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(sweep_csv_text(rows))


def _svg_polyline(points, color):
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return (f'<polyline fill="none" stroke="{color}" stroke-width="2" '
            f'points="{pts}" />')


def write_sweep_svg(path, rows: list[SweepRow]) -> None:
    """Two-panel vector plot of median error and accuracy against k."""
    w, h, pad = 360, 220, 40
    panels = []
    for pi, (label, values) in enumerate([
            ("median translation (m)", [r.median_m for r in rows]),
            ("accuracy <2m,<5deg", [r.accuracy for r in rows])]):
        x0 = pi * w
        ks = [r.k for r in rows]
        vmax = max(values) or 1.0
        vmin = min(values)
        span = (vmax - vmin) or 1.0
        kspan = (max(ks) - min(ks)) or 1
        pts = [(x0 + pad + (k - min(ks)) / kspan * (w - 2 * pad),
                h - pad - (v - vmin) / span * (h - 2 * pad))
               for k, v in zip(ks, values)]
        panels.append(f'<text x="{x0 + pad}" y="20" font-size="12">{label}</text>')
        panels.append(_svg_polyline(pts, "#1f77b4"))
        for (px, py), k, v in zip(pts, ks, values):
            panels.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" fill="#d62728" />')
            panels.append(f'<text x="{px:.2f}" y="{h - pad + 16}" font-size="10" '
                          f'text-anchor="middle">k={k}</text>')
            panels.append(f'<text x="{px:.2f}" y="{py - 8:.2f}" font-size="9" '
                          f'text-anchor="middle">{v:.3g}</text>')
    body = "\n".join(panels)
    svg = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{2 * w}" height="{h}">\n'
           f'<rect width="{2 * w}" height="{h}" fill="white" />\n{body}\n</svg>\n')
    with open(path, "w", newline="\n") as fh:
        fh.write(svg)
