"""Confidence-weighted multi-task loss with analytic gradients.

Three components:

- offset term: sum over anchors of the squared (x, y) offset residual,
  weighted by the softmax confidence of that anchor. Gradient flows through
  both the offsets and the logits, which is what lets the classifier discover
  a relevant anchor without ever seeing an anchor label.
- absolute term: squared z residual plus squared distance between the ground
  truth quaternion and the normalized raw orientation output. Invariant to
  positive scaling of the raw orientation by construction.
- optional cross-entropy term against the nearest-anchor label.

The total is an alpha-weighted sum. All functions are pure; batched variants
vectorize over samples and average, matching the single-sample definitions
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateOrientationError, InvalidInputError
from .geometry import OffsetTable
from .model import BatchPrediction, PosePrediction, PredGradient

ORIENT_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 2.0   # cross-entropy weight; ignored when use_cross_entropy is False
    alpha2: float = 10.0  # confidence-weighted offset weight
    alpha3: float = 1.0   # absolute (z + orientation) weight
    use_cross_entropy: bool = False

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "alpha3"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvalidInputError(f"{name} must be finite and >= 0, got {v}")

    def to_dict(self) -> dict:
        return {"alpha1": self.alpha1, "alpha2": self.alpha2,
                "alpha3": self.alpha3, "use_cross_entropy": self.use_cross_entropy}

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(alpha1=float(d["alpha1"]), alpha2=float(d["alpha2"]),
                   alpha3=float(d["alpha3"]),
                   use_cross_entropy=bool(d["use_cross_entropy"]))


@dataclass(frozen=True)
class LossBreakdown:
    offset_term: float
    absolute_term: float
    ce_term: float
    total: float


@dataclass(frozen=True)
class PoseTarget:
    """Ground truth for one sample, in loss-ready form."""

    offsets: np.ndarray      # (N, 2)
    z: float
    orientation: np.ndarray  # (4,) unit quaternion
    nearest_index: int


def confidences(logits: np.ndarray) -> np.ndarray:
    """Stable softmax over anchor logits."""
    l = np.asarray(logits, dtype=np.float64)
    e = np.exp(l - l.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def offset_loss(pred: PosePrediction, gt: OffsetTable) -> float:
    """Confidence-weighted squared offset loss (single sample)."""
    if len(gt) != pred.logits.shape[0]:
        raise InvalidInputError(
            f"offset table has {len(gt)} anchors, prediction has {pred.logits.shape[0]}")
    c = confidences(pred.logits)
    r = ((gt.offsets - pred.offsets) ** 2).sum(axis=1)
    return float(r @ c)


def offset_loss_grad(pred: PosePrediction, gt: OffsetTable):
    """(d_logits, d_offsets) of the offset loss; other paths are zero."""
    if len(gt) != pred.logits.shape[0]:
        raise InvalidInputError("offset table / prediction anchor count mismatch")
    c = confidences(pred.logits)
    resid = gt.offsets - pred.offsets
    r = (resid ** 2).sum(axis=1)
    value = float(r @ c)
    d_offsets = -2.0 * resid * c[:, None]
    d_logits = c * (r - value)
    return d_logits, d_offsets


def absolute_loss(pred: PosePrediction, gt_z: float, gt_orient: np.ndarray) -> float:
    """Squared z residual plus squared distance to the normalized orientation."""
    q = np.asarray(gt_orient, dtype=np.float64)
    norm = float(np.linalg.norm(pred.orient_raw))
    if norm <= ORIENT_NORM_FLOOR:
        raise DegenerateOrientationError(
            f"raw orientation norm {norm:g} is too small to normalize")
    u = pred.orient_raw / norm
    return float((gt_z - pred.z_hat) ** 2 + ((q - u) ** 2).sum())


def absolute_loss_grad(pred: PosePrediction, gt_z: float, gt_orient: np.ndarray):
    """(d_z, d_orient) of the absolute loss."""
    q = np.asarray(gt_orient, dtype=np.float64)
    norm = float(np.linalg.norm(pred.orient_raw))
    if norm <= ORIENT_NORM_FLOOR:
        raise DegenerateOrientationError(
            f"raw orientation norm {norm:g} is too small to normalize")
    u = pred.orient_raw / norm
    d_z = 2.0 * (pred.z_hat - gt_z)
    # d/dP of ||q - P/||P||||^2 through the normalization Jacobian
    d_orient = 2.0 * (u * float(u @ q) - q) / norm
    return d_z, d_orient


def cross_entropy_loss(logits: np.ndarray, nearest: int) -> float:
    """-log softmax(logits)[nearest], evaluated in log space."""
    l = np.asarray(logits, dtype=np.float64)
    if not 0 <= nearest < l.shape[0]:
        raise InvalidInputError(f"nearest index {nearest} out of range for {l.shape[0]} anchors")
    m = l.max()
    lse = m + np.log(np.exp(l - m).sum())
    return float(lse - l[nearest])


def cross_entropy_grad(logits: np.ndarray, nearest: int) -> np.ndarray:
    l = np.asarray(logits, dtype=np.float64)
    if not 0 <= nearest < l.shape[0]:
        raise InvalidInputError(f"nearest index {nearest} out of range for {l.shape[0]} anchors")
    g = confidences(l)
    g[nearest] -= 1.0
    return g


def total_loss(pred: PosePrediction, target: PoseTarget,
               weights: LossWeights) -> tuple[LossBreakdown, PredGradient]:
    """Weighted total loss and its exact gradient w.r.t. the prediction."""
    d_logits_o, d_offsets = offset_loss_grad(pred, OffsetTable(target.offsets))
    off = offset_loss(pred, OffsetTable(target.offsets))
    d_z, d_orient = absolute_loss_grad(pred, target.z, target.orientation)
    absl = absolute_loss(pred, target.z, target.orientation)

    if weights.use_cross_entropy:
        ce = cross_entropy_loss(pred.logits, target.nearest_index)
        d_logits_ce = cross_entropy_grad(pred.logits, target.nearest_index)
    else:
        ce = 0.0
        d_logits_ce = np.zeros_like(pred.logits)

    total = weights.alpha1 * ce + weights.alpha2 * off + weights.alpha3 * absl
    grad = PredGradient(
        d_logits=weights.alpha2 * d_logits_o + weights.alpha1 * d_logits_ce,
        d_offsets=weights.alpha2 * d_offsets,
        d_z=weights.alpha3 * d_z,
        d_orient=weights.alpha3 * d_orient,
    )
    return LossBreakdown(offset_term=off, absolute_term=absl, ce_term=ce, total=total), grad


# --- batched path (training) --------------------------------------------------

def batch_total_loss(pred: BatchPrediction, gt_offsets: np.ndarray, gt_z: np.ndarray,
                     gt_orient: np.ndarray, nearest: np.ndarray, weights: LossWeights):
    """Mean loss over a batch plus upstream gradients for backward_batch.

    Per-sample losses follow the single-sample definitions exactly; the
    returned gradients are already scaled by 1/B so the parameter gradient
    is the mean of per-sample gradients.

    Returns (LossBreakdown of means, d_logits, d_offsets, d_z, d_orient).
    """
    B, N = pred.logits.shape
    if gt_offsets.shape != (B, N, 2):
        raise InvalidInputError("ground-truth offsets shape mismatch")

    c = confidences(pred.logits)                       # (B, N)
    resid = gt_offsets - pred.offsets                  # (B, N, 2)
    r = (resid ** 2).sum(axis=2)                       # (B, N)
    off_per = (r * c).sum(axis=1)                      # (B,)

    norms = np.linalg.norm(pred.orient_raw, axis=1)
    if (norms <= ORIENT_NORM_FLOOR).any():
        bad = int(np.argmin(norms))
        raise DegenerateOrientationError(
            f"raw orientation norm {norms[bad]:g} in batch row {bad} is too small")
    u = pred.orient_raw / norms[:, None]
    dz_resid = pred.z_hat - gt_z
    abs_per = dz_resid ** 2 + ((gt_orient - u) ** 2).sum(axis=1)

    if weights.use_cross_entropy:
        m = pred.logits.max(axis=1)
        lse = m + np.log(np.exp(pred.logits - m[:, None]).sum(axis=1))
        ce_per = lse - pred.logits[np.arange(B), nearest]
    else:
        ce_per = np.zeros(B)

    total_per = weights.alpha1 * ce_per + weights.alpha2 * off_per + weights.alpha3 * abs_per

    inv_b = 1.0 / B
    d_offsets = weights.alpha2 * (-2.0 * resid * c[:, :, None]) * inv_b
    d_logits = weights.alpha2 * (c * (r - off_per[:, None])) * inv_b
    if weights.use_cross_entropy:
        g = c.copy()
        g[np.arange(B), nearest] -= 1.0
        d_logits = d_logits + weights.alpha1 * g * inv_b
    d_z = weights.alpha3 * 2.0 * dz_resid * inv_b
    udotq = (u * gt_orient).sum(axis=1)
    d_orient = weights.alpha3 * 2.0 * (u * udotq[:, None] - gt_orient) / norms[:, None] * inv_b

    breakdown = LossBreakdown(
        offset_term=float(off_per.mean()),
        absolute_term=float(abs_per.mean()),
        ce_term=float(ce_per.mean()),
        total=float(total_per.mean()),
    )
    return breakdown, d_logits, d_offsets, d_z, d_orient
