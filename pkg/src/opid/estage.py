"""Expanding-stage joint trainer: ridge stacking with learned block weights.

The compressed class scores of the survived-feature classifier become input
features, alongside the augmented raw features. Training alternates two
closed-form steps on a jointly convex objective: a block-ridge solve for the
two coefficient blocks at fixed weights, and an exact simplex-constrained
weight update from the blocks' width-scaled norms. Each block's ridge is
divided by its width so the narrow compressed block is not drowned out by
the wide augmented block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .cstage import compress
from .model import (
    E_STAGE,
    Batch,
    CStageModel,
    EStageModel,
    NumericError,
    SchemaError,
    argmax_decode,
)

# Keeps the 1/weight ridge finite when one block's norm collapses to zero.
WEIGHT_FLOOR = 1e-8


@dataclass(frozen=True)
class StackedTrainSet:
    """Expanding-stage training data in stacked form.

    ``z_base`` holds the compressed class-score features (n x classes);
    ``z_joint`` prepends them to the augmented features
    (n x (classes + augmented)); its leading columns equal ``z_base``
    exactly.
    """

    z_base: np.ndarray
    z_joint: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        n, c = self.z_base.shape
        if self.labels.shape != (n, c):
            raise SchemaError(
                f"labels have shape {self.labels.shape}, expected ({n}, {c})"
            )
        if self.z_joint.shape[0] != n or self.z_joint.shape[1] < c:
            raise SchemaError(f"joint block has bad shape {self.z_joint.shape}")
        if not np.array_equal(self.z_joint[:, :c], self.z_base):
            raise SchemaError("joint block must start with the compressed block")

    @property
    def n(self) -> int:
        return self.z_base.shape[0]


@dataclass(frozen=True)
class UnifiedTrainerState:
    """Final iterate of the alternating trainer plus its objective trace."""

    model: EStageModel
    objective: float
    iterations: int
    converged: bool
    trace: tuple[float, ...]


def build_stacked(batch: Batch, cmodel: CStageModel) -> StackedTrainSet:
    """Compress the survived block and prepend it to the augmented block."""
    if batch.stage != E_STAGE:
        raise SchemaError("stacking requires an expanding-stage batch")
    z = compress(batch.survived, cmodel)
    return StackedTrainSet(
        z_base=z, z_joint=np.hstack([z, batch.augmented]), labels=batch.labels
    )


def update_coefficients(
    data: StackedTrainSet, w_base: float, w_joint: float, gamma: float
) -> tuple[np.ndarray, np.ndarray]:
    """Exact coefficient solve at fixed weights.

    Solves the coupled ridge normal equations of the stacked least-squares
    objective; the per-block ridge is gamma / (width * weight). The system
    matrix is SPD because both ridge terms are strictly positive.
    """
    if w_base <= 0 or w_joint <= 0:
        raise ValueError(f"weights must be > 0, got ({w_base}, {w_joint})")
    if gamma <= 0:
        raise ValueError(f"ridge must be > 0, got {gamma}")
    c = data.z_base.shape[1]
    k = data.z_joint.shape[1]
    design = np.hstack([data.z_base, data.z_joint])
    gram = design.T @ design
    ridge = np.concatenate(
        [np.full(c, gamma / (c * w_base)), np.full(k, gamma / (k * w_joint))]
    )
    gram[np.diag_indices_from(gram)] += ridge
    try:
        coef = scipy.linalg.solve(gram, design.T @ data.labels, assume_a="pos")
    except scipy.linalg.LinAlgError as exc:
        raise NumericError(f"stacked ridge solve failed: {exc}") from exc
    return coef[:c], coef[c:]


def update_weights(v_base: np.ndarray, v_joint: np.ndarray) -> tuple[float, float]:
    """Exact simplex-constrained weight update.

    Minimizes the weighted inverse penalty over w_base + w_joint = 1,
    w >= 0; the optimum is proportional to each block's Frobenius norm
    divided by the square root of its width. An all-zero model falls back
    to (1/2, 1/2).
    """
    r_base = np.linalg.norm(v_base) / math.sqrt(v_base.shape[0])
    r_joint = np.linalg.norm(v_joint) / math.sqrt(v_joint.shape[0])
    total = r_base + r_joint
    if total == 0.0:
        return 0.5, 0.5
    w_base = r_base / total
    return w_base, 1.0 - w_base


def objective_value(data: StackedTrainSet, model: EStageModel, gamma: float) -> float:
    """Stacked ridge objective: squared residual plus the width- and
    weight-scaled block penalties."""

    def penalty(block: np.ndarray, weight: float) -> float:
        sq = float((block**2).sum())
        denom = block.shape[0] * weight
        if denom == 0.0:
            if sq == 0.0:
                return 0.0
            raise NumericError("zero weight with nonzero coefficients: infinite penalty")
        return gamma * sq / denom

    resid = data.z_base @ model.v_base + data.z_joint @ model.v_joint - data.labels
    return (
        float((resid**2).sum())
        + penalty(model.v_base, model.w_base)
        + penalty(model.v_joint, model.w_joint)
    )


def fit_unified(
    data: StackedTrainSet, gamma: float, tol: float = 1e-6, max_iter: int = 100
) -> UnifiedTrainerState:
    """Alternate the two exact block updates from equal weights until the
    relative objective decrease drops below ``tol``.

    Both half-steps are exact minimizations, so the objective is
    non-increasing; convergence is typically a handful of iterations.
    The last operation is always the weight update, so the returned weights
    are exactly consistent with the returned coefficients.
    """
    w_base = w_joint = 0.5
    prev = None
    trace: list[float] = []
    model = None
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        wb = min(max(w_base, WEIGHT_FLOOR), 1.0 - WEIGHT_FLOOR)
        v_base, v_joint = update_coefficients(data, wb, 1.0 - wb, gamma)
        w_base, w_joint = update_weights(v_base, v_joint)
        model = EStageModel(v_base=v_base, v_joint=v_joint, w_base=w_base, w_joint=w_joint)
        value = objective_value(data, model, gamma)
        if not math.isfinite(value):
            raise NumericError("objective diverged to a non-finite value")
        trace.append(value)
        if prev is not None and prev - value <= tol * max(1.0, abs(prev)):
            converged = True
            break
        prev = value
    return UnifiedTrainerState(
        model=model,
        objective=trace[-1],
        iterations=iterations,
        converged=converged,
        trace=tuple(trace),
    )


def train_unified(
    data: StackedTrainSet, gamma: float, tol: float = 1e-6, max_iter: int = 100
) -> EStageModel:
    return fit_unified(data, gamma, tol=tol, max_iter=max_iter).model


def predict_unified(batch: Batch, cmodel: CStageModel, emodel: EStageModel) -> np.ndarray:
    """Classify an expanding-stage batch with the joint model.

    The square-root block weighting is already absorbed into the stored
    coefficients, so the combined score is the plain sum of both blocks.
    """
    if batch.stage != E_STAGE:
        raise SchemaError("prediction requires an expanding-stage batch")
    z = compress(batch.survived, cmodel)
    z_joint = np.hstack([z, batch.augmented])
    if z_joint.shape[1] != emodel.v_joint.shape[0]:
        raise SchemaError(
            f"joint block is {z_joint.shape[1]} wide, model expects {emodel.v_joint.shape[0]}"
        )
    return argmax_decode(z @ emodel.v_base + z_joint @ emodel.v_joint)


def save_emodel(model: EStageModel, path) -> None:
    """Binary container with exact float round-trip: block widths as header,
    row-major coefficient blocks, both weights."""
    np.savez(
        path,
        classes=model.v_base.shape[1],
        augmented=model.v_joint.shape[0] - model.v_base.shape[0],
        v_base=model.v_base,
        v_joint=model.v_joint,
        w_base=model.w_base,
        w_joint=model.w_joint,
    )


def load_emodel(path) -> EStageModel:
    with np.load(path) as data:
        return EStageModel(
            v_base=data["v_base"].copy(),
            v_joint=data["v_joint"].copy(),
            w_base=float(data["w_base"]),
            w_joint=float(data["w_joint"]),
        )
