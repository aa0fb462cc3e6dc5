"""Optimization stack: soft Jaccard-distance loss, AMSGrad updates,
flip/rotation augmentation, and the epoch loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import SeededRng, Tensor
from .errors import DivergenceError, ShapeMismatchError
from .evaluation import binarize, dice_coefficient
from .model import Model, backward, forward
from .patching import PatchPair


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 8
    epochs: int = 50
    threshold: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_opt: float = 1e-8
    loss_smooth: float = 1.0
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.epsilon_opt <= 0:
            raise ValueError("epsilon_opt must be > 0")
        if self.loss_smooth < 0:
            raise ValueError("loss_smooth must be >= 0")


# ---------------------------------------------------------------------------
# Losses


def jaccard_distance_loss(pred: np.ndarray, target: np.ndarray, smooth: float = 1.0):
    """Soft Jaccard distance over all pixels of the tensors.

    intersection = sum(p * y), union = sum(p) + sum(y) - intersection,
    loss = 1 - (intersection + smooth) / (union + smooth).

    Returns (loss, d loss / d pred). On binary predictions with smooth=0
    this equals the set-form Jaccard distance.
    """
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeMismatchError(f"pred shape {p.shape} != target shape {y.shape}")
    if p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("predictions must lie in [0, 1]")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("targets must be binary")
    inter = float(np.sum(p * y))
    union = float(np.sum(p) + np.sum(y) - inter)
    denom = union + smooth
    if denom <= 0:
        # Both tensors empty and smooth == 0: no overlap to measure.
        raise ValueError("loss undefined for empty pred and target with smooth=0")
    # (union - inter) / denom == 1 - (inter + smooth) / denom, but matches the
    # set form bitwise on binary inputs with smooth = 0.
    loss = (union - inter) / denom
    grad = -(y * denom - (inter + smooth) * (1.0 - y)) / denom**2
    return loss, grad


def hard_jaccard_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Set-form Jaccard distance (|union| - |intersection|) / |union|;
    defined as 0.0 when both masks are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 0.0
    inter = int(np.logical_and(a, b).sum())
    return (union - inter) / union


# ---------------------------------------------------------------------------
# AMSGrad


@dataclass
class OptimizerState:
    """Per-parameter moments. v_hat is the coordinate-wise running max of v."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    v_hat: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params) -> "OptimizerState":
        return cls(
            m=[np.zeros(p.shape) for p in params],
            v=[np.zeros(p.shape) for p in params],
            v_hat=[np.zeros(p.shape) for p in params],
        )


def amsgrad_step(params, grads, state: OptimizerState, config: TrainConfig):
    """One AMSGrad update (original formulation, no bias correction).

    m <- b1*m + (1-b1)*g ; v <- b2*v + (1-b2)*g^2 ; v_hat <- max(v_hat, v) ;
    theta <- theta - lr * m / (sqrt(v_hat) + eps). Parameter arrays are
    replaced, not mutated, so forward caches referencing the old values are
    detectably stale.
    """
    if len(params) != len(grads):
        raise ShapeMismatchError(f"{len(params)} params but {len(grads)} grads")
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeMismatchError(
                f"grad shape {g.shape} != param shape {p.shape} at index {i}"
            )
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient at parameter index {i}")
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g
        state.v_hat[i] = np.maximum(state.v_hat[i], state.v[i])
        p.data = p.data - config.learning_rate * state.m[i] / (
            np.sqrt(state.v_hat[i]) + config.epsilon_opt
        )
    state.step += 1
    return params, state


# ---------------------------------------------------------------------------
# Augmentation: flips plus rotations of 90 and 180 degrees, the same
# transform applied to local patch, global patch, and mask.

TRANSFORMS = ("identity", "hflip", "vflip", "rot90", "rot180")


def _transform_array(kind: str, arr: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return arr.copy()
    if kind == "hflip":
        return np.ascontiguousarray(arr[:, ::-1])
    if kind == "vflip":
        return np.ascontiguousarray(arr[::-1])
    if kind == "rot90":
        return np.ascontiguousarray(np.rot90(arr, k=1, axes=(0, 1)))
    if kind == "rot180":
        return np.ascontiguousarray(np.rot90(arr, k=2, axes=(0, 1)))
    raise ValueError(f"unknown transform {kind!r}")


def apply_patch_transform(kind: str, pair: PatchPair, mask: np.ndarray):
    """Apply one named transform consistently to a pair and its mask."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != pair.local.shape[:2]:
        raise ShapeMismatchError(
            f"mask shape {mask.shape} != local patch shape {pair.local.shape[:2]}"
        )
    return (
        PatchPair(
            local=_transform_array(kind, pair.local),
            global_raw=_transform_array(kind, pair.global_raw),
            origin=pair.origin,
        ),
        _transform_array(kind, mask),
    )


def augment(pair: PatchPair, mask: np.ndarray, rng: SeededRng):
    """Draw one transform uniformly and apply it to pair and mask."""
    kind = TRANSFORMS[rng.integers(len(TRANSFORMS))]
    return apply_patch_transform(kind, pair, mask)


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainingHistory:
    mean_loss: list[float] = field(default_factory=list)
    mean_dice: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.mean_loss)


def save_history(history: TrainingHistory, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,mean_loss,mean_dice\n")
        for epoch, (loss, dice) in enumerate(zip(history.mean_loss, history.mean_dice)):
            fh.write(f"{epoch},{loss!r},{dice!r}\n")


def _pack_batch(samples):
    local = np.stack([pair.local for pair, _ in samples])
    glob = np.stack([pair.global_raw for pair, _ in samples])
    target = np.stack([mask for _, mask in samples]).astype(np.float64)[..., None]
    return local, glob, target


def train(model: Model, dataset, config: TrainConfig):
    """Optimize the model on (PatchPair, mask) samples.

    Samples are reshuffled every epoch from the config seed; the last
    partial batch is kept. Fully deterministic given (model seed, config
    seed, dataset order).
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty training dataset")
    params = model.parameters()
    state = OptimizerState.for_params(params)
    root = SeededRng(config.seed)
    history = TrainingHistory()

    for epoch in range(config.epochs):
        order = root.derive(epoch).permutation(len(dataset))
        losses: list[float] = []
        dices: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch_ids = order[start : start + config.batch_size]
            samples = []
            for ds_idx in batch_ids:
                pair, mask = dataset[int(ds_idx)]
                if config.augment:
                    pair, mask = augment(pair, mask, root.derive(epoch, int(ds_idx)))
                samples.append((pair, mask))
            local, glob, target = _pack_batch(samples)
            probs, cache = forward(model, local, glob)
            loss, dloss = jaccard_distance_loss(probs, target, config.loss_smooth)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, step {start // config.batch_size}"
                )
            grads = backward(model, cache, dloss)
            for i in range(len(samples)):
                seg = binarize(probs[i], config.threshold)
                dices.append(dice_coefficient(samples[i][1], seg))
            try:
                amsgrad_step(params, grads, state, config)
            except DivergenceError as exc:
                raise DivergenceError(
                    f"{exc} (epoch {epoch}, step {start // config.batch_size})"
                ) from exc
            losses.append(loss)
        history.mean_loss.append(float(np.mean(losses)))
        history.mean_dice.append(float(np.mean(dices)))
    return model, history
