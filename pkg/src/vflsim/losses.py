"""Objective values and block-coordinate gradients for l2-regularized
logistic regression and ridge regression.

All gradient kernels take the full inner product ``score = w . x_i`` as an
argument instead of computing it, because in the distributed setting that
scalar is the one value assembled across workers (and it may be stale).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataplane import Dataset, VerticalPartition

LOGISTIC = "logistic"
RIDGE = "ridge"


@dataclass(frozen=True)
class LossSpec:
    """Loss family plus the l2 coefficient. A bias term exists only for ridge."""

    kind: str = LOGISTIC
    lam: float = 1e-4
    has_bias: bool = False

    def __post_init__(self):
        if self.kind not in (LOGISTIC, RIDGE):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.has_bias and self.kind != RIDGE:
            raise ValueError("only the ridge loss carries a bias term")


@dataclass
class ModelView:
    """Per-worker weight blocks plus the (active-worker) bias scalar."""

    blocks: list = field(default_factory=list)
    bias: float = 0.0

    @classmethod
    def zeros(cls, partition: VerticalPartition) -> "ModelView":
        return cls([np.zeros(g.size) for g in partition.groups], 0.0)

    @classmethod
    def from_full(
        cls, w: np.ndarray, partition: VerticalPartition, bias: float = 0.0
    ) -> "ModelView":
        return cls([np.asarray(w, dtype=np.float64)[g].copy() for g in partition.groups], bias)

    def to_full(self, partition: VerticalPartition) -> np.ndarray:
        if len(self.blocks) != partition.q:
            raise ValueError("model has a different number of blocks than the partition")
        w = np.zeros(partition.n_features)
        for g, blk in zip(partition.groups, self.blocks):
            if g.size != len(blk):
                raise ValueError("block sizes do not match the partition")
            w[g] = blk
        return w

    def copy(self) -> "ModelView":
        return ModelView([b.copy() for b in self.blocks], self.bias)


def local_product(w_block: np.ndarray, x_block: np.ndarray) -> float:
    """One worker's partial inner product, the only value it ever exports."""
    w_block = np.asarray(w_block, dtype=np.float64)
    x_block = np.asarray(x_block, dtype=np.float64)
    if w_block.shape != x_block.shape:
        raise ValueError(
            f"dimension mismatch: {w_block.shape} vs {x_block.shape}"
        )
    return float(np.dot(w_block, x_block))


def _sigmoid(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def _sigmoid_vec(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def residual_scalar(spec: LossSpec, y: float, score: float, bias: float = 0.0) -> float:
    """d(loss)/d(score) for one sample.

    This is the scalar the active worker can hand to passive workers so
    they can form their block gradients without ever seeing a label.
    """
    if spec.kind == LOGISTIC:
        return -y * _sigmoid(-y * score)
    return 2.0 * (score + bias - y)


def residual_vector(
    spec: LossSpec, y: np.ndarray, scores: np.ndarray, bias: float = 0.0
) -> np.ndarray:
    """Vectorized residual_scalar over a batch of samples."""
    if spec.kind == LOGISTIC:
        return -y * _sigmoid_vec(-y * scores)
    return 2.0 * (scores + bias - y)


def objective_value(
    spec: LossSpec, model: ModelView, ds: Dataset, partition: VerticalPartition
) -> float:
    """Regularized empirical risk at the given model.

    logistic: mean log(1 + exp(-y w.x)) + (lam/2) |w|^2
    ridge:    mean (w.x + b - y)^2 + (lam/2) (|w|^2 + b^2)

    The logistic term is evaluated with logaddexp, so scores of any
    magnitude are safe (log(1+e^z) -> z for large z, -> e^z for very
    negative z).
    """
    w = model.to_full(partition)
    scores = ds.features @ w
    if spec.kind == LOGISTIC:
        data = float(np.logaddexp(0.0, -ds.labels * scores).mean())
        reg = 0.5 * spec.lam * float(w @ w)
    else:
        resid = scores + model.bias - ds.labels
        data = float((resid * resid).mean())
        sq = float(w @ w)
        if spec.has_bias:
            sq += model.bias * model.bias
        reg = 0.5 * spec.lam * sq
    return data + reg


def sample_block_gradient(
    spec: LossSpec,
    model: ModelView,
    ds: Dataset,
    partition: VerticalPartition,
    i: int,
    worker: int,
    score: float,
) -> np.ndarray:
    """Block gradient of the per-sample objective at a caller-supplied score.

    The regularizer uses the worker's own current block: a worker always
    holds the newest version of its own coordinates, even when the score
    was assembled from stale remote blocks.
    """
    x_block = ds.features[i, partition.group(worker)]
    w_block = model.blocks[worker - 1]
    bias = model.bias if spec.kind == RIDGE else 0.0
    r = residual_scalar(spec, float(ds.labels[i]), score, bias)
    return r * x_block + spec.lam * w_block


def sample_bias_gradient(spec: LossSpec, model: ModelView, y: float, score: float) -> float:
    """Per-sample bias gradient; only the label-holding worker computes it."""
    if not (spec.kind == RIDGE and spec.has_bias):
        raise ValueError("bias gradient exists only for ridge with a bias term")
    r = residual_scalar(spec, y, score, model.bias)
    return r + spec.lam * model.bias


def full_block_gradient(
    spec: LossSpec,
    model: ModelView,
    ds: Dataset,
    partition: VerticalPartition,
    worker: int,
) -> np.ndarray:
    """Average of sample_block_gradient over all samples at one consistent model."""
    w = model.to_full(partition)
    scores = ds.features @ w
    bias = model.bias if spec.kind == RIDGE else 0.0
    r = residual_vector(spec, ds.labels, scores, bias)
    cols = partition.group(worker)
    x_block = ds.features[:, cols]
    return (x_block.T @ r) / ds.n_samples + spec.lam * model.blocks[worker - 1]


def full_bias_gradient(
    spec: LossSpec, model: ModelView, ds: Dataset, partition: VerticalPartition
) -> float:
    if not (spec.kind == RIDGE and spec.has_bias):
        raise ValueError("bias gradient exists only for ridge with a bias term")
    w = model.to_full(partition)
    scores = ds.features @ w
    r = residual_vector(spec, ds.labels, scores, model.bias)
    return float(r.mean()) + spec.lam * model.bias


def full_gradient(
    spec: LossSpec, model: ModelView, ds: Dataset, partition: VerticalPartition
):
    """(full weight gradient as one vector, bias gradient) at a consistent model."""
    w = model.to_full(partition)
    scores = ds.features @ w
    bias = model.bias if spec.kind == RIDGE else 0.0
    r = residual_vector(spec, ds.labels, scores, bias)
    gw = (ds.features.T @ r) / ds.n_samples + spec.lam * w
    gb = 0.0
    if spec.kind == RIDGE and spec.has_bias:
        gb = float(r.mean()) + spec.lam * model.bias
    return gw, gb
