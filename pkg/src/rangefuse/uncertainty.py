"""Degradation-driven aleatoric uncertainty of camera features.

A small per-scale MLP regresses the instability of camera features under
image corruptions: the training target is the per-pixel L2 distance between
clean and corrupted feature vectors, the objective is the Huber loss, and
the learned instability maps to a bounded uncertainty score
U = 1 - exp(-d).  Gradients are computed analytically, by hand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorio

HUBER_DELTA = 1.0


class TrainingDivergedError(RuntimeError):
    """Loss or gradients became non-finite during a training step."""


@dataclass(frozen=True)
class MlpParams:
    """3-layer regression head: D -> 2D -> 2D -> 1, rectifiers after 1 and 2."""

    w1: np.ndarray  # (D, 2D)
    b1: np.ndarray  # (2D,)
    w2: np.ndarray  # (2D, 2D)
    b2: np.ndarray  # (2D,)
    w3: np.ndarray  # (2D, 1)
    b3: np.ndarray  # (1,)

    def __post_init__(self):
        dim = self.w1.shape[0]
        hidden = 2 * dim
        expected = {
            "w1": (dim, hidden),
            "b1": (hidden,),
            "w2": (hidden, hidden),
            "b2": (hidden,),
            "w3": (hidden, 1),
            "b3": (1,),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.w1.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in ("w1", "b1", "w2", "b2", "w3", "b3")}


def init_params(dim: int, seed: int = 0) -> MlpParams:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    hidden = 2 * dim

    def xavier(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    return MlpParams(
        w1=xavier(dim, hidden),
        b1=np.zeros(hidden),
        w2=xavier(hidden, hidden),
        b2=np.zeros(hidden),
        w3=xavier(hidden, 1),
        b3=np.zeros(1),
    )


def instability_target(f_orig: np.ndarray, f_aug: np.ndarray) -> np.ndarray:
    """Per-pixel L2 distance between clean and corrupted feature vectors."""
    f_orig = np.asarray(f_orig, dtype=np.float64)
    f_aug = np.asarray(f_aug, dtype=np.float64)
    if f_orig.shape != f_aug.shape:
        raise ValueError(f"feature shapes differ: {f_orig.shape} vs {f_aug.shape}")
    return np.linalg.norm(f_orig - f_aug, axis=-1)


def mlp_forward(params: MlpParams, features: np.ndarray) -> np.ndarray:
    """Predicted instability for (..., D) features; returns (...)."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != params.dim:
        raise ValueError(f"expected {params.dim} channels, got {x.shape[-1]}")
    h1 = np.maximum(x @ params.w1 + params.b1, 0.0)
    h2 = np.maximum(h1 @ params.w2 + params.b2, 0.0)
    return (h2 @ params.w3 + params.b3)[..., 0]


def huber(residual: np.ndarray, delta: float = HUBER_DELTA) -> np.ndarray:
    """0.5 a^2 inside |a| <= delta, linear delta(|a| - delta/2) outside."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    a = np.abs(np.asarray(residual, dtype=np.float64))
    return np.where(a <= delta, 0.5 * a * a, delta * (a - 0.5 * delta))


def uncertainty_score(d_pred: np.ndarray) -> np.ndarray:
    """U = 1 - exp(-d), negative predictions clamped to zero first."""
    d = np.maximum(np.asarray(d_pred, dtype=np.float64), 0.0)
    return 1.0 - np.exp(-d)


def gradients(
    params: MlpParams, features: np.ndarray, targets: np.ndarray, delta: float = HUBER_DELTA
) -> tuple[dict[str, np.ndarray], float]:
    """Analytic gradients of the mean Huber loss; returns (grads, loss)."""
    x = np.asarray(features, dtype=np.float64).reshape(-1, params.dim)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if x.shape[0] != t.shape[0]:
        raise ValueError("feature and target counts differ")
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    n = x.shape[0]

    with np.errstate(invalid="ignore", over="ignore"):  # caught as divergence
        z1 = x @ params.w1 + params.b1
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ params.w2 + params.b2
        h2 = np.maximum(z2, 0.0)
        pred = (h2 @ params.w3 + params.b3)[:, 0]

        residual = pred - t
        loss = float(np.mean(huber(residual, delta)))

    # dL/dpred: residual inside the quadratic zone, +-delta outside.
    dpred = np.clip(residual, -delta, delta) / n
    dout = dpred[:, None]
    grads = {
        "w3": h2.T @ dout,
        "b3": dout.sum(axis=0),
    }
    dh2 = dout @ params.w3.T
    dz2 = dh2 * (z2 > 0.0)
    grads["w2"] = h1.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    dh1 = dz2 @ params.w2.T
    dz1 = dh1 * (z1 > 0.0)
    grads["w1"] = x.T @ dz1
    grads["b1"] = dz1.sum(axis=0)

    if not np.isfinite(loss) or any(
        not np.all(np.isfinite(g)) for g in grads.values()
    ):
        raise TrainingDivergedError("non-finite loss or gradient")
    return grads, loss


@dataclass
class DecoupledAdam:
    """Adaptive-moment optimizer with decoupled weight decay.

    Weight decay is applied directly to the parameters, outside the
    moment estimates.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def update(self, params: MlpParams, grads: dict[str, np.ndarray]) -> MlpParams:
        self._t += 1
        new = {}
        for name, value in params.arrays().items():
            g = grads[name]
            m = self._m.get(name, np.zeros_like(value))
            v = self._v.get(name, np.zeros_like(value))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self._m[name], self._v[name] = m, v
            m_hat = m / (1.0 - self.beta1**self._t)
            v_hat = v / (1.0 - self.beta2**self._t)
            step = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            decay = 0.0 if name.startswith("b") else self.lr * self.weight_decay * value
            new[name] = value - step - decay
        return MlpParams(**new)


def train_step(
    params: MlpParams,
    features: np.ndarray,
    targets: np.ndarray,
    lr: float = 0.05,
    delta: float = HUBER_DELTA,
    optimizer: DecoupledAdam | None = None,
) -> tuple[MlpParams, float]:
    """One full-batch update; returns (new params, pre-update loss).

    Plain gradient descent by default; pass a DecoupledAdam instance for
    the adaptive variant.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    grads, loss = gradients(params, features, targets, delta)
    if optimizer is not None:
        return optimizer.update(params, grads), loss
    new = {n: v - lr * grads[n] for n, v in params.arrays().items()}
    return MlpParams(**new), loss


def train_step_multi(
    heads: dict[int, MlpParams],
    batches: dict[int, tuple[np.ndarray, np.ndarray]],
    lr: float = 0.05,
    delta: float = HUBER_DELTA,
) -> tuple[dict[int, MlpParams], float]:
    """Joint step over per-scale heads on the summed loss.

    Heads hold disjoint parameters, so the sum's gradient decomposes into
    per-head gradients; the returned loss is the sum over scales.
    """
    new_heads = dict(heads)
    total = 0.0
    for scale in sorted(batches):
        feats, targets = batches[scale]
        new_heads[scale], loss = train_step(heads[scale], feats, targets, lr, delta)
        total += loss
    return new_heads, total


def masked_training_pairs(
    f_orig: np.ndarray, f_aug: np.ndarray, covered: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Flatten covered cells of an RV feature grid into (features, targets).

    Cells with no camera mapping carry no camera signal and are excluded
    from the uncertainty loss.
    """
    covered = np.asarray(covered, dtype=bool)
    if covered.shape != f_orig.shape[:-1]:
        raise ValueError("coverage mask must match the feature grid")
    d = instability_target(f_orig, f_aug)
    return np.asarray(f_aug, dtype=np.float64)[covered], d[covered]


def save_checkpoint(directory, heads: dict[int, MlpParams]) -> None:
    tensors = {}
    for scale, params in heads.items():
        for name, arr in params.arrays().items():
            tensors[f"s{scale}_{name}"] = arr
    meta = {
        "scales": sorted(heads),
        "dims": {str(s): heads[s].dim for s in sorted(heads)},
    }
    tensorio.write_tensor_dir(directory, tensors, meta=meta)


def load_checkpoint(directory) -> dict[int, MlpParams]:
    tensors, meta = tensorio.read_tensor_dir(directory)
    heads = {}
    for scale in meta["scales"]:
        heads[int(scale)] = MlpParams(
            **{name: tensors[f"s{scale}_{name}"] for name in ("w1", "b1", "w2", "b2", "w3", "b3")}
        )
    return heads
