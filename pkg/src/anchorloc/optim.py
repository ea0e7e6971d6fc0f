"""Adam optimizer, stepped learning-rate schedule and the mini-batch loop.

Training is deterministic given the two seeds involved (network init seed and
shuffle seed): per-epoch permutations come from a generator keyed on
(shuffle_seed, epoch), so a run resumed from a checkpoint replays exactly the
same batches as an uninterrupted one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import loss as lossmod
from . import model as modelmod
from .errors import InvalidInputError, TrainingDivergenceError
from .loss import LossWeights
from .model import NetworkSpec


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 120
    lr_halving_period: int = 30
    shuffle_seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidInputError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.lr_halving_period < 1:
            raise InvalidInputError("lr_halving_period must be >= 1")
        if self.epochs < 0:
            raise InvalidInputError("epochs must be >= 0")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    total: float
    offset: float
    absolute: float
    ce: float


@dataclass
class TrainReport:
    epochs: list[EpochStats]
    params: np.ndarray
    adam_state: "AdamState"


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), t=0)


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Base lr halved once per completed halving period."""
    if epoch < 0:
        raise InvalidInputError("epoch must be >= 0")
    return config.lr * 0.5 ** (epoch // config.lr_halving_period)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns new arrays; inputs untouched."""
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != params.shape:
        raise InvalidInputError("gradient/parameter shape mismatch")
    if not np.isfinite(g).all():
        raise TrainingDivergenceError("non-finite gradient in Adam step")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m=m, v=v, t=t)


def _epoch_permutation(shuffle_seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng([shuffle_seed & 0xFFFFFFFFFFFFFFFF, epoch])
    return rng.permutation(n)


def _train_loop(n_samples: int, params: np.ndarray, state: AdamState,
                config: TrainConfig, batch_loss_grad, start_epoch: int = 0,
                epoch_callback=None):
    """Shared mini-batch loop; ``batch_loss_grad(params, idx)`` supplies
    (LossBreakdown of batch means, flat gradient)."""
    history: list[EpochStats] = []
    for epoch in range(start_epoch, config.epochs):
        lr = lr_at(epoch, config)
        perm = _epoch_permutation(config.shuffle_seed, epoch, n_samples)
        sums = np.zeros(4)  # total, offset, absolute, ce weighted by batch size
        for bstart in range(0, n_samples, config.batch_size):
            idx = perm[bstart:bstart + config.batch_size]
            breakdown, grad = batch_loss_grad(params, idx)
            if not np.isfinite(breakdown.total):
                raise TrainingDivergenceError(
                    "loss became non-finite", epoch=epoch, batch=bstart // config.batch_size)
            try:
                params, state = adam_step(params, grad, state, lr,
                                          config.beta1, config.beta2, config.eps)
            except TrainingDivergenceError as err:
                raise TrainingDivergenceError(
                    str(err), epoch=epoch, batch=bstart // config.batch_size) from None
            sums += len(idx) * np.array([breakdown.total, breakdown.offset_term,
                                         breakdown.absolute_term, breakdown.ce_term])
        means = sums / n_samples
        stats = EpochStats(epoch=epoch, lr=lr, total=float(means[0]),
                           offset=float(means[1]), absolute=float(means[2]),
                           ce=float(means[3]))
        history.append(stats)
        if epoch_callback is not None:
            epoch_callback(stats, params, state)
    return params, state, history


def _sample_arrays(samples):
    """Accepts a SampleBatch-like object or a list of records carrying
    feature / offsets / pose / nearest, and returns stacked arrays."""
    if hasattr(samples, "features"):
        return (samples.features, samples.offsets,
                samples.positions[:, 2], samples.orientations, samples.nearest)
    feats = np.array([s.feature for s in samples], dtype=np.float64)
    offs = np.array([s.offsets for s in samples], dtype=np.float64)
    z = np.array([s.pose.position[2] for s in samples])
    quats = np.array([s.pose.orientation for s in samples])
    near = np.array([s.nearest for s in samples], dtype=np.intp)
    return feats, offs, z, quats, near


def train(samples, spec: NetworkSpec, config: TrainConfig, *,
          init_params: np.ndarray | None = None,
          init_state: AdamState | None = None,
          start_epoch: int = 0,
          epoch_callback=None) -> TrainReport:
    """End-to-end training of the three-head network on precomputed targets.

    ``samples`` is a SampleBatch (or list of records) whose offset tables must
    match ``spec.num_anchors``. Passing ``init_params``/``init_state``/
    ``start_epoch`` resumes from a checkpoint and reproduces the uninterrupted
    trajectory exactly.
    """
    feats, gt_offsets, gt_z, gt_orient, nearest = _sample_arrays(samples)
    if feats.shape[0] == 0:
        raise InvalidInputError("training requires a non-empty sample list")
    if feats.shape[1] != spec.input_dim:
        raise InvalidInputError(
            f"feature dim {feats.shape[1]} does not match spec input_dim {spec.input_dim}")
    if gt_offsets.shape[1] != spec.num_anchors:
        raise InvalidInputError(
            f"offset tables have {gt_offsets.shape[1]} anchors, spec expects {spec.num_anchors}")

    params = modelmod.init(spec) if init_params is None else init_params.copy()
    state = AdamState.initial(params.size) if init_state is None else \
        AdamState(m=init_state.m.copy(), v=init_state.v.copy(), t=init_state.t)

    def batch_loss_grad(p, idx):
        pred, cache = modelmod.forward_batch(spec, p, feats[idx], with_cache=True)
        breakdown, d_logits, d_offsets, d_z, d_orient = lossmod.batch_total_loss(
            pred, gt_offsets[idx], gt_z[idx], gt_orient[idx], nearest[idx], config.weights)
        grad = modelmod.backward_batch(spec, p, cache, d_logits, d_offsets, d_z, d_orient)
        return breakdown, grad

    params, state, history = _train_loop(
        feats.shape[0], params, state, config, batch_loss_grad,
        start_epoch=start_epoch, epoch_callback=epoch_callback)
    return TrainReport(epochs=history, params=params, adam_state=state)


def save_training_checkpoint(path, spec: NetworkSpec, params: np.ndarray,
                             state: AdamState, epoch: int,
                             meta: dict | None = None) -> None:
    """Checkpoint with optimizer state so training can resume bit-exactly."""
    full_meta = {"epoch": epoch, "adam_t": state.t}
    full_meta.update(meta or {})
    modelmod.save_checkpoint(path, spec, params,
                             extra_arrays={"adam_m": state.m, "adam_v": state.v},
                             meta=full_meta)


def load_training_checkpoint(path):
    """Returns (spec, params, AdamState, epoch, meta)."""
    spec, params, arrays, meta = modelmod.load_checkpoint(path)
    if "adam_m" in arrays:
        state = AdamState(m=arrays["adam_m"], v=arrays["adam_v"], t=int(meta["adam_t"]))
    else:
        state = AdamState.initial(params.size)
    return spec, params, state, int(meta.get("epoch", 0)), meta
