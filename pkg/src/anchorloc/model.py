"""Differentiable three-head network over ingested feature vectors.

A fully-connected trunk feeds three linear heads: per-anchor confidence
logits, per-anchor (x, y) offsets, and a 5-vector of absolute outputs
(z plus an unnormalized orientation quaternion). Gradients are computed
by hand-written reverse mode; there is no autograd framework underneath,
which keeps the arithmetic exactly reproducible.

Parameters are one flat float64 vector whose layout is a pure function of
the network shape (trunk layers in order, then the logits / offsets /
absolute heads), so checkpoints round-trip bit-exactly.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidSpecError

ACTIVATIONS = ("relu", "tanh")

ABS_HEAD_DIM = 5  # z plus 4 orientation components


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_layers: tuple[int, ...]
    num_anchors: int
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        if self.input_dim < 1:
            raise InvalidSpecError("input_dim must be >= 1")
        if any(w < 1 for w in self.hidden_layers):
            raise InvalidSpecError("hidden layer widths must be >= 1")
        if self.num_anchors < 1:
            raise InvalidSpecError("num_anchors must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise InvalidSpecError(f"activation must be one of {ACTIVATIONS}")

    @property
    def trunk_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_layers)

    @property
    def trunk_out(self) -> int:
        return self.trunk_dims[-1]

    def head_dims(self) -> dict[str, int]:
        n = self.num_anchors
        return {"logits": n, "offsets": 2 * n, "absolute": ABS_HEAD_DIM}

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_layers": list(self.hidden_layers),
            "num_anchors": self.num_anchors,
            "activation": self.activation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_layers=tuple(int(w) for w in d["hidden_layers"]),
            num_anchors=int(d["num_anchors"]),
            activation=str(d["activation"]),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class PosePrediction:
    """Single-sample network outputs: logits, offsets, z and raw orientation."""

    logits: np.ndarray      # (N,)
    offsets: np.ndarray     # (N, 2)
    z_hat: float
    orient_raw: np.ndarray  # (4,)


@dataclass
class BatchPrediction:
    """Stacked outputs for a batch; row i is sample i."""

    logits: np.ndarray      # (B, N)
    offsets: np.ndarray     # (B, N, 2)
    z_hat: np.ndarray       # (B,)
    orient_raw: np.ndarray  # (B, 4)

    def row(self, i: int) -> PosePrediction:
        return PosePrediction(
            logits=self.logits[i].copy(),
            offsets=self.offsets[i].copy(),
            z_hat=float(self.z_hat[i]),
            orient_raw=self.orient_raw[i].copy(),
        )


@dataclass(frozen=True)
class PredGradient:
    """Gradient of a scalar loss w.r.t. one PosePrediction."""

    d_logits: np.ndarray
    d_offsets: np.ndarray
    d_z: float
    d_orient: np.ndarray


# --- flat parameter layout ---------------------------------------------------

def _layer_shapes(spec: NetworkSpec) -> list[tuple[str, int, int]]:
    """(name, out_dim, in_dim) for every weight matrix, in storage order."""
    shapes = []
    dims = spec.trunk_dims
    for i in range(len(dims) - 1):
        shapes.append((f"trunk{i}", dims[i + 1], dims[i]))
    for name, out in spec.head_dims().items():
        shapes.append((name, out, spec.trunk_out))
    return shapes


def param_count(spec: NetworkSpec) -> int:
    return sum(o * i + o for _, o, i in _layer_shapes(spec))


class _Views:
    """Weight/bias views into a flat parameter (or gradient) vector."""

    def __init__(self, spec: NetworkSpec, flat: np.ndarray):
        self.W: dict[str, np.ndarray] = {}
        self.b: dict[str, np.ndarray] = {}
        off = 0
        for name, out, inp in _layer_shapes(spec):
            self.W[name] = flat[off:off + out * inp].reshape(out, inp)
            off += out * inp
            self.b[name] = flat[off:off + out]
            off += out
        if off != flat.size:
            raise InvalidInputError(
                f"parameter vector has {flat.size} entries, spec requires {off}")


def init(spec: NetworkSpec) -> np.ndarray:
    """Deterministic parameter init: scaled-uniform by fan-in, zero biases."""
    rng = np.random.default_rng(spec.seed)
    flat = np.zeros(param_count(spec))
    views = _Views(spec, flat)
    for name, out, inp in _layer_shapes(spec):
        bound = 1.0 / np.sqrt(inp)
        views.W[name][...] = rng.uniform(-bound, bound, size=(out, inp))
        # biases stay zero
    return flat


# --- forward / backward ------------------------------------------------------

def _act(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(a, 0.0)
    return np.tanh(a)


def _act_grad_from_output(h: np.ndarray, kind: str) -> np.ndarray:
    # gradients recoverable from post-activation values for both choices
    if kind == "relu":
        return (h > 0.0).astype(np.float64)
    return 1.0 - h * h


def forward_batch(spec: NetworkSpec, params: np.ndarray, features: np.ndarray,
                  with_cache: bool = False):
    """Batched forward pass. ``features`` is (B, input_dim).

    With ``with_cache`` the per-layer activations needed by
    :func:`backward_batch` are returned as a second value.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise InvalidInputError(
            f"features must be (B, {spec.input_dim}), got shape {X.shape}")
    views = _Views(spec, np.asarray(params, dtype=np.float64))

    h = X
    cache = [h]
    for i in range(len(spec.hidden_layers)):
        a = h @ views.W[f"trunk{i}"].T + views.b[f"trunk{i}"]
        h = _act(a, spec.activation)
        cache.append(h)

    logits = h @ views.W["logits"].T + views.b["logits"]
    offsets = (h @ views.W["offsets"].T + views.b["offsets"]).reshape(-1, spec.num_anchors, 2)
    absolute = h @ views.W["absolute"].T + views.b["absolute"]
    pred = BatchPrediction(logits=logits, offsets=offsets,
                           z_hat=absolute[:, 0], orient_raw=absolute[:, 1:])
    if with_cache:
        return pred, cache
    return pred


def forward(spec: NetworkSpec, params: np.ndarray, feature: np.ndarray) -> PosePrediction:
    """Single-sample forward pass."""
    f = np.asarray(feature, dtype=np.float64).reshape(-1)
    if f.shape != (spec.input_dim,):
        raise InvalidInputError(
            f"feature must have dim {spec.input_dim}, got {f.shape}")
    return forward_batch(spec, params, f[None, :]).row(0)


def backward_batch(spec: NetworkSpec, params: np.ndarray, cache: list[np.ndarray],
                   d_logits: np.ndarray, d_offsets: np.ndarray,
                   d_z: np.ndarray, d_orient: np.ndarray) -> np.ndarray:
    """Reverse-mode gradient over the flat parameter vector.

    Upstream gradients are w.r.t. the batched head outputs; the result sums
    sample contributions (scale the upstream values for mean reduction).
    """
    views = _Views(spec, np.asarray(params, dtype=np.float64))
    B = d_logits.shape[0]
    if d_offsets.shape[0] != B or d_z.shape[0] != B or d_orient.shape[0] != B:
        raise InvalidInputError("upstream gradient batch sizes disagree")

    grad = np.zeros_like(params, dtype=np.float64)
    gviews = _Views(spec, grad)

    h = cache[-1]
    d_abs = np.concatenate([d_z[:, None], d_orient], axis=1)
    d_off_flat = d_offsets.reshape(B, -1)

    gviews.W["logits"] += d_logits.T @ h
    gviews.b["logits"] += d_logits.sum(axis=0)
    gviews.W["offsets"] += d_off_flat.T @ h
    gviews.b["offsets"] += d_off_flat.sum(axis=0)
    gviews.W["absolute"] += d_abs.T @ h
    gviews.b["absolute"] += d_abs.sum(axis=0)

    dh = d_logits @ views.W["logits"] + d_off_flat @ views.W["offsets"] + d_abs @ views.W["absolute"]

    for i in reversed(range(len(spec.hidden_layers))):
        da = dh * _act_grad_from_output(cache[i + 1], spec.activation)
        gviews.W[f"trunk{i}"] += da.T @ cache[i]
        gviews.b[f"trunk{i}"] += da.sum(axis=0)
        dh = da @ views.W[f"trunk{i}"]

    return grad


def backward(spec: NetworkSpec, params: np.ndarray, feature: np.ndarray,
             upstream: PredGradient) -> np.ndarray:
    """Single-sample exact gradient of the forward pass w.r.t. all parameters."""
    f = np.asarray(feature, dtype=np.float64).reshape(-1)
    if f.shape != (spec.input_dim,):
        raise InvalidInputError(
            f"feature must have dim {spec.input_dim}, got {f.shape}")
    d_logits = np.asarray(upstream.d_logits, dtype=np.float64).reshape(1, -1)
    if d_logits.shape[1] != spec.num_anchors:
        raise InvalidInputError("upstream logit gradient has wrong length")
    if np.asarray(upstream.d_offsets).size != 2 * spec.num_anchors:
        raise InvalidInputError("upstream offset gradient has wrong size")
    if np.asarray(upstream.d_orient).size != 4:
        raise InvalidInputError("upstream orientation gradient has wrong size")
    d_offsets = np.asarray(upstream.d_offsets, dtype=np.float64).reshape(1, spec.num_anchors, 2)
    d_orient = np.asarray(upstream.d_orient, dtype=np.float64).reshape(1, 4)
    _, cache = forward_batch(spec, params, f[None, :], with_cache=True)
    return backward_batch(spec, params, cache, d_logits, d_offsets,
                          np.array([upstream.d_z]), d_orient)


# --- checkpoint container ----------------------------------------------------

_CKPT_MAGIC = b"ALCK"
_CKPT_VERSION = 1


def save_checkpoint(path, spec: NetworkSpec, params: np.ndarray,
                    extra_arrays: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """Versioned binary container: spec + flat parameters (+ named extras).

    Byte layout: magic ``ALCK``, u32 version, u32 header length, a JSON
    header (network spec, array names/shapes in order, free-form metadata),
    then each array as raw little-endian float64 in C order. Everything is
    written canonically (sorted JSON keys, fixed array order), so a
    load/save cycle is bit-exact.
    """
    arrays = {"params": np.asarray(params, dtype=np.float64)}
    for name, arr in (extra_arrays or {}).items():
        arrays[name] = np.asarray(arr, dtype=np.float64)
    header = {
        "spec": spec.to_dict(),
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write(_CKPT_VERSION.to_bytes(4, "little"))
    buf.write(len(hbytes).to_bytes(4, "little"))
    buf.write(hbytes)
    for v in arrays.values():
        buf.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Returns (spec, params, extra_arrays, meta)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _CKPT_MAGIC:
        raise InvalidInputError(f"{path}: not a checkpoint file")
    version = int.from_bytes(raw[4:8], "little")
    if version != _CKPT_VERSION:
        raise InvalidInputError(f"{path}: unsupported checkpoint version {version}")
    hlen = int.from_bytes(raw[8:12], "little")
    header = json.loads(raw[12:12 + hlen].decode())
    spec = NetworkSpec.from_dict(header["spec"])
    off = 12 + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arrays[entry["name"]] = np.frombuffer(
            raw[off:off + 8 * n], dtype="<f8").reshape(shape).copy()
        off += 8 * n
    params = arrays.pop("params")
    return spec, params, arrays, header["meta"]
