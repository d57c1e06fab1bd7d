"""One-pass compressing-stage trainer.

The compressing stage sees mini-batches carrying vanished + survived features
and learns two coupled linear classifiers: one on all current features, one
on survived features only, tied together by a consistency penalty so the
survived-feature classifier retains what the vanished features knew. The
entire stream is summarized by a fixed-size pair of sufficient statistics,
so each instance is read exactly once and memory never grows with the data.

Two interchangeable accumulation strategies sit behind the same interface:

* ``direct``  -- accumulate the normal-equation matrix itself; one SPD
  factorization at solve time. Preferred while the block dimension is small.
* ``inverse`` -- maintain the inverse of that matrix through rank-3n updates
  (n = batch size), so the solution is a single multiplication away at any
  point of the stream; each step factorizes only a 3n x 3n system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import (
    C_STAGE,
    Batch,
    CStageModel,
    FeatureSchema,
    Hyperparams,
    NumericError,
    SchemaError,
    validate_batch,
)

DIRECT = "direct"
INVERSE = "inverse"


@dataclass
class CStageStats:
    """Streaming sufficient statistics of the compressing-stage objective.

    ``mat`` is the (m, m) normal-equation matrix in ``direct`` mode and its
    inverse in ``inverse`` mode, with m = vanished + 2 * survived. ``rhs`` is
    the (m, classes) accumulated cross-moment with the one-hot labels. The
    footprint is fixed by the schema, never by how many instances were
    absorbed. Single-writer: absorbing mutates in place.
    """

    mode: str
    schema: FeatureSchema
    lam: float
    rho: float
    mat: np.ndarray
    rhs: np.ndarray
    batches_seen: int = 0


def init_stats(schema: FeatureSchema, hyper: Hyperparams, mode: str = DIRECT) -> CStageStats:
    """Empty-stream statistics: ridge-only matrix (or its inverse), zero
    right-hand side."""
    if mode not in (DIRECT, INVERSE):
        raise ValueError(f"unknown accumulation mode {mode!r}")
    if hyper.rho <= 0:
        raise ValueError(f"ridge must be > 0, got {hyper.rho}")
    if hyper.lam < 0:
        raise ValueError(f"consistency weight must be >= 0, got {hyper.lam}")
    m = schema.stats_dim
    scale = hyper.rho if mode == DIRECT else 1.0 / hyper.rho
    return CStageStats(
        mode=mode,
        schema=schema,
        lam=hyper.lam,
        rho=hyper.rho,
        mat=scale * np.eye(m),
        rhs=np.zeros((m, schema.classes)),
    )


def update_columns(batch: Batch, lam: float, schema: FeatureSchema) -> np.ndarray:
    """Columns whose outer product reproduces one batch's normal-matrix
    increment.

    Three n-column groups: the all-feature rows against themselves, the
    survived rows against themselves, and a +/-sqrt(lam) pairing that
    produces the consistency cross terms. Returns an (m, 3n) matrix U with
    U @ U.T equal to the additive increment.
    """
    x_all = batch.joined()
    x_sur = batch.survived
    n = batch.n
    p = schema.cstage_width
    root = math.sqrt(lam)
    u = np.zeros((schema.stats_dim, 3 * n))
    u[:p, :n] = x_all.T
    u[p:, n : 2 * n] = x_sur.T
    u[:p, 2 * n :] = root * x_all.T
    u[p:, 2 * n :] = -root * x_sur.T
    return u


def absorb_batch(stats: CStageStats, batch: Batch) -> CStageStats:
    """Fold one compressing-stage batch into the statistics (in place).

    One-pass contract: each batch is absorbed exactly once.
    """
    if batch.stage != C_STAGE:
        raise SchemaError("only compressing-stage batches can be absorbed")
    validate_batch(batch, stats.schema)

    x_all = batch.joined()
    x_sur = batch.survived
    lam = stats.lam
    p = stats.schema.cstage_width

    if stats.mode == DIRECT:
        cross = lam * (x_all.T @ x_sur)
        stats.mat[:p, :p] += (1.0 + lam) * (x_all.T @ x_all)
        stats.mat[:p, p:] -= cross
        stats.mat[p:, :p] -= cross.T
        stats.mat[p:, p:] += (1.0 + lam) * (x_sur.T @ x_sur)
    else:
        u = update_columns(batch, lam, stats.schema)
        au = stats.mat @ u
        core = np.eye(u.shape[1]) + u.T @ au
        try:
            sol = scipy.linalg.solve(core, au.T, assume_a="pos")
        except scipy.linalg.LinAlgError as exc:
            raise NumericError(f"rank-update core solve failed: {exc}") from exc
        stats.mat -= au @ sol
    # Guard against asymmetry drift over long streams.
    stats.mat = 0.5 * (stats.mat + stats.mat.T)

    stats.rhs[:p] += x_all.T @ batch.labels
    stats.rhs[p:] += x_sur.T @ batch.labels
    stats.batches_seen += 1
    return stats


def solve_model(stats: CStageStats) -> CStageModel:
    """Solve the accumulated normal system for both coefficient blocks.

    Direct mode runs one SPD solve; inverse mode is a plain multiplication,
    which is what makes the anytime solution cheap on that path.
    """
    if stats.mode == DIRECT:
        try:
            coef = scipy.linalg.solve(stats.mat, stats.rhs, assume_a="pos")
        except scipy.linalg.LinAlgError as exc:
            raise NumericError(f"normal-equation solve failed: {exc}") from exc
    else:
        coef = stats.mat @ stats.rhs
    if not np.isfinite(coef).all():
        raise NumericError("solved coefficients contain non-finite entries")
    p = stats.schema.cstage_width
    return CStageModel(coef_full=coef[:p], coef_survived=coef[p:])


def compress(x_sur, model: CStageModel) -> np.ndarray:
    """Class scores of the survived-feature classifier, used as the stacked
    representation in the expanding stage."""
    x = np.asarray(x_sur, dtype=np.float64)
    if x.ndim != 2:
        raise SchemaError(f"survived block must be 2-D, got {x.ndim}-D")
    if x.shape[1] != model.coef_survived.shape[0]:
        raise SchemaError(
            f"survived block is {x.shape[1]} wide, model expects {model.coef_survived.shape[0]}"
        )
    return x @ model.coef_survived


def save_stats(stats: CStageStats, path) -> None:
    """Snapshot the statistics so a pass can be suspended and resumed.

    Binary container with exact float round-trip: mode tag, schema widths,
    regularization, batch counter, and the row-major ``mat``/``rhs`` pair.
    """
    np.savez(
        path,
        mode=np.array(stats.mode),
        vanished=stats.schema.vanished,
        survived=stats.schema.survived,
        augmented=stats.schema.augmented,
        classes=stats.schema.classes,
        lam=stats.lam,
        rho=stats.rho,
        batches_seen=stats.batches_seen,
        mat=stats.mat,
        rhs=stats.rhs,
    )


def load_stats(path) -> CStageStats:
    with np.load(path) as data:
        schema = FeatureSchema(
            vanished=int(data["vanished"]),
            survived=int(data["survived"]),
            augmented=int(data["augmented"]),
            classes=int(data["classes"]),
        )
        return CStageStats(
            mode=str(data["mode"]),
            schema=schema,
            lam=float(data["lam"]),
            rho=float(data["rho"]),
            mat=data["mat"].copy(),
            rhs=data["rhs"].copy(),
            batches_seen=int(data["batches_seen"]),
        )
