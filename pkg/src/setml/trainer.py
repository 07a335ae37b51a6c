"""Levenberg-Marquardt training of SET current networks.

Each epoch linearises the network around the current parameters, solves the
damped normal equations ``(J^T J + mu I) dw = J^T e`` and accepts the step
only when the training MSE decreases.  A rejected step multiplies ``mu`` by
``mu_factor`` and is re-proposed inside the same epoch; an accepted one
divides it.  The model with the best validation MSE is returned.

All MSE values are computed on normalised targets.
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from enum import StrEnum
from typing import IO

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, field_validator

from setml.dataset import SetDataset, Split
from setml.errors import DatasetError, ModelError, TrainingError
from setml.mlp import (
    MlpModel,
    Transfer,
    as_transfer,
    build_model,
    flatten_params,
    forward,
    jacobian,
    param_count,
    with_params,
)

logger = logging.getLogger(__name__)

SWEEP_HEADER = (
    "arch",
    "transfer",
    "train_mse",
    "val_mse",
    "test_mse",
    "epochs",
    "stop_reason",
)


# ---------------------------------------------------------------------------
# Configuration and results
# ---------------------------------------------------------------------------


class Architecture(BaseModel):
    """Hidden layer sizes plus the hidden transfer; the output is 1 purelin."""

    model_config = ConfigDict(frozen=True)

    hidden: tuple[int, ...]
    transfer: Transfer = Transfer.TANSIG

    @field_validator("hidden")
    @classmethod
    def _positive(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if any(h < 1 for h in v):
            raise ValueError(f"Hidden layer sizes must be positive, got {v}.")
        return v

    @classmethod
    def parse(
        cls, text: str, transfer: str | Transfer = Transfer.TANSIG
    ) -> Architecture:
        """Parse ``"8x16x8x1"``; the output size must be 1.

        The multiplication sign is accepted in place of ``x``.
        """
        parts = text.strip().lower().replace("\N{MULTIPLICATION SIGN}", "x").split("x")
        try:
            sizes = [int(p) for p in parts]
        except ValueError:
            raise ModelError(
                f"Invalid architecture {text!r}; expected sizes like 8x8x1."
            ) from None
        if sizes[-1] != 1 or any(s < 1 for s in sizes):
            raise ModelError(
                f"Invalid architecture {text!r}; sizes must be positive and end in 1."
            )
        return cls(hidden=tuple(sizes[:-1]), transfer=as_transfer(transfer))

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (3, *self.hidden, 1)

    @property
    def transfers(self) -> tuple[Transfer, ...]:
        return (*(self.transfer for _ in self.hidden), Transfer.PURELIN)

    @property
    def label(self) -> str:
        return "x".join(str(s) for s in (*self.hidden, 1))


DEFAULT_SWEEP: tuple[Architecture, ...] = tuple(
    Architecture.parse(text, tf)
    for text in ("16x1", "8x8x1", "8x16x8x1")
    for tf in (Transfer.TANSIG, Transfer.LOGSIG, Transfer.ELLIOTSIG)
)
"""The nine architecture / hidden-transfer rows of the MSE comparison table."""


class TrainConfig(BaseModel):
    """Stopping rules and damping schedule of the LM loop."""

    model_config = ConfigDict(frozen=True)

    max_epochs: int = Field(default=1000, ge=1)
    mu_init: float = Field(default=1e-3, gt=0)
    mu_factor: float = Field(default=10.0, gt=1)
    mu_max: float = Field(default=1e10, gt=0)
    grad_tol: float = Field(default=1e-7, ge=0)
    val_patience: int = Field(default=6, ge=1)
    init_seed: int = 0
    batch_size: int | None = Field(default=None, ge=1)
    """Fixed uniform subsample of the training split used for J. Off by default."""
    workers: int = Field(default=1, ge=1)
    """Threads computing Jacobian row blocks; the result does not depend on it."""
    block_rows: int = Field(default=4096, ge=1)


class StopReason(StrEnum):
    MAX_EPOCHS = "max_epochs"
    MU_MAX = "mu_max"
    GRAD_TOL = "grad_tol"
    VAL_PATIENCE = "val_patience"


class TrainReport(BaseModel):
    """Per-epoch history and final errors of one training run.

    Index 0 of every history list holds the state before the first step.
    """

    model_config = ConfigDict(frozen=True)

    arch: str
    transfer: Transfer
    train_mse: list[float]
    val_mse: list[float]
    mu: list[float]
    final_train_mse: float
    final_val_mse: float
    final_test_mse: float
    train_rmse: float
    """Physical-unit RMSE over the training split, amperes."""
    val_rmse: float
    test_rmse: float
    epochs: int
    best_epoch: int
    stop_reason: StopReason

    def write_history_csv(self, sink: IO[str]) -> None:
        """Write ``epoch,train_mse,val_mse,mu`` rows."""
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(("epoch", "train_mse", "val_mse", "mu"))
        history = zip(self.train_mse, self.val_mse, self.mu, strict=True)
        for k, row in enumerate(history):
            writer.writerow((k, *(repr(v) for v in row)))


class SweepRow(BaseModel):
    """One line of the architecture comparison table."""

    model_config = ConfigDict(frozen=True)

    arch: str
    transfer: Transfer
    train_mse: float
    val_mse: float
    test_mse: float
    epochs: int
    stop_reason: StopReason


# ---------------------------------------------------------------------------
# Error measures
# ---------------------------------------------------------------------------


def _split_arrays(
    m: MlpModel, data: SetDataset, split: Split
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    rows = data.subset(split)
    if len(rows) == 0:
        raise DatasetError(f"The {split.label} split is empty.")
    return m.norm.normalize_inputs(rows[:, :3]), m.norm.normalize_output(rows[:, 3])


def _mse(m: MlpModel, x: NDArray[np.float64], y: NDArray[np.float64]) -> float:
    residual = y - forward(m, x)
    return float(np.mean(residual * residual))


def mse(m: MlpModel, data: SetDataset, split: Split) -> float:
    """Mean squared normalised error of *m* over one split."""
    x, y = _split_arrays(m, data, split)
    return _mse(m, x, y)


def physical_rmse(m: MlpModel, normalized_mse: float) -> float:
    """Convert a normalised MSE into an RMSE in amperes."""
    return float(np.sqrt(normalized_mse) * (m.norm.out_max - m.norm.out_min) / 2.0)


# ---------------------------------------------------------------------------
# LM update
# ---------------------------------------------------------------------------


def _lm_delta(
    jtj: NDArray[np.float64], g: NDArray[np.float64], mu: float
) -> NDArray[np.float64]:
    a = jtj + mu * np.eye(len(g))
    try:
        delta = scipy.linalg.solve(a, g, assume_a="pos")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise TrainingError(f"LM linear solve failed at mu={mu:.3e}: {exc}") from exc
    if not np.isfinite(delta).all():
        raise TrainingError(f"LM step is not finite at mu={mu:.3e}.")
    return delta


def lm_step(
    m: MlpModel, j: ArrayLike, residuals: ArrayLike, mu: float
) -> NDArray[np.float64]:
    """Return the candidate parameters ``w + dw`` of one damped Gauss-Newton step.

    ``dw`` solves ``(J^T J + mu I) dw = J^T e`` with ``e = target - prediction``.
    """
    jm = np.asarray(j, dtype=np.float64)
    e = np.asarray(residuals, dtype=np.float64)
    return flatten_params(m) + _lm_delta(jm.T @ jm, jm.T @ e, mu)


def _normal_equations(
    m: MlpModel,
    x: NDArray[np.float64],
    e: NDArray[np.float64],
    cfg: TrainConfig,
    pool: ThreadPoolExecutor | None,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Accumulate J^T J and J^T e block by block, in fixed block order."""
    blocks = [slice(k, k + cfg.block_rows) for k in range(0, len(x), cfg.block_rows)]

    def part(s: slice) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        j = jacobian(m, x[s])
        return j.T @ j, j.T @ e[s]

    parts = pool.map(part, blocks) if pool is not None else map(part, blocks)
    p = m.param_count
    jtj, g = np.zeros((p, p)), np.zeros(p)
    for block_jtj, block_g in parts:
        jtj += block_jtj
        g += block_g
    return jtj, g


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def train_lm(
    arch: Architecture, data: SetDataset, cfg: TrainConfig
) -> tuple[MlpModel, TrainReport]:
    """Train *arch* on *data* and return the best-validation model and its report."""
    counts = data.counts()
    empty = [s.label for s, n in counts.items() if n == 0]
    if empty:
        raise DatasetError(
            f"Training needs all three splits; empty: {', '.join(empty)}."
        )

    norm = data.fit_norm()
    rng = np.random.default_rng(cfg.init_seed)
    params = rng.uniform(-0.5, 0.5, size=param_count(arch.layer_dims))
    model = build_model(arch.layer_dims, arch.transfers, params, norm)

    x_train, y_train = _split_arrays(model, data, Split.TRAIN)
    x_val, y_val = _split_arrays(model, data, Split.VALIDATION)
    if cfg.batch_size is not None and cfg.batch_size < len(x_train):
        pick = np.sort(rng.choice(len(x_train), size=cfg.batch_size, replace=False))
        x_batch, y_batch = x_train[pick], y_train[pick]
        logger.info("LM batch: %d of %d training rows", cfg.batch_size, len(x_train))
    else:
        x_batch, y_batch = x_train, y_train

    current = _mse(model, x_batch, y_batch)
    val = _mse(model, x_val, y_val)
    train_hist, val_hist, mu_hist = [current], [val], [cfg.mu_init]
    best_model, best_val, best_epoch = model, val, 0
    fails = 0
    mu = cfg.mu_init
    stop = StopReason.MAX_EPOCHS
    epoch = 0

    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        while epoch < cfg.max_epochs:
            e = y_batch - forward(model, x_batch)
            jtj, g = _normal_equations(model, x_batch, e, cfg, pool)
            if np.linalg.norm(2.0 * g / len(e)) < cfg.grad_tol:
                stop = StopReason.GRAD_TOL
                break

            w = flatten_params(model)
            while True:
                candidate = with_params(model, w + _lm_delta(jtj, g, mu))
                candidate_mse = _mse(candidate, x_batch, y_batch)
                if candidate_mse < current:
                    break
                mu *= cfg.mu_factor
                if mu > cfg.mu_max:
                    stop = StopReason.MU_MAX
                    break
            if stop is StopReason.MU_MAX:
                break

            mu /= cfg.mu_factor
            model, current = candidate, candidate_mse
            epoch += 1
            val = _mse(model, x_val, y_val)
            train_hist.append(current)
            val_hist.append(val)
            mu_hist.append(mu)
            logger.debug(
                "epoch %d: train %.4e val %.4e mu %.1e", epoch, current, val, mu
            )

            if val < best_val:
                best_model, best_val, best_epoch = model, val, epoch
                fails = 0
            else:
                fails += 1
                if fails >= cfg.val_patience:
                    stop = StopReason.VAL_PATIENCE
                    break
    finally:
        if pool is not None:
            pool.shutdown()

    final_train = mse(best_model, data, Split.TRAIN)
    final_val = mse(best_model, data, Split.VALIDATION)
    final_test = mse(best_model, data, Split.TEST)
    report = TrainReport(
        arch=arch.label,
        transfer=arch.transfer,
        train_mse=train_hist,
        val_mse=val_hist,
        mu=mu_hist,
        final_train_mse=final_train,
        final_val_mse=final_val,
        final_test_mse=final_test,
        train_rmse=physical_rmse(best_model, final_train),
        val_rmse=physical_rmse(best_model, final_val),
        test_rmse=physical_rmse(best_model, final_test),
        epochs=epoch,
        best_epoch=best_epoch,
        stop_reason=stop,
    )
    logger.info(
        "Trained %s %s: %d epochs (%s), test MSE %.4e",
        arch.label,
        arch.transfer.value,
        epoch,
        stop.value,
        final_test,
    )
    return best_model, report


# ---------------------------------------------------------------------------
# Architecture sweep
# ---------------------------------------------------------------------------


def architecture_sweep(
    data: SetDataset,
    configs: Sequence[Architecture],
    cfg: TrainConfig,
    *,
    workers: int = 1,
    sort_by_mse: bool = False,
) -> list[SweepRow]:
    """Train every configuration and tabulate its errors.

    Rows come back in input order, or stably sorted by test MSE when
    *sort_by_mse* is set.  *workers* trains independent rows concurrently.
    """
    if not configs:
        raise ModelError("The sweep needs at least one architecture.")

    def run(arch: Architecture) -> SweepRow:
        _, report = train_lm(arch, data, cfg)
        return SweepRow(
            arch=report.arch,
            transfer=report.transfer,
            train_mse=report.final_train_mse,
            val_mse=report.final_val_mse,
            test_mse=report.final_test_mse,
            epochs=report.epochs,
            stop_reason=report.stop_reason,
        )

    rows = _ordered_map(run, configs, workers)
    for expected, row in ordering_violations(rows):
        logger.warning(
            "Sweep ordering inverted: %s %s (test MSE %.3e) beats %s %s (%.3e)",
            row.arch,
            row.transfer.value,
            row.test_mse,
            expected.arch,
            expected.transfer.value,
            expected.test_mse,
        )
    if sort_by_mse:
        rows = sorted(rows, key=lambda r: r.test_mse)
    return rows


_TRANSFER_RANK = {Transfer.TANSIG: 0, Transfer.LOGSIG: 1, Transfer.ELLIOTSIG: 2}


def _depth(arch: str) -> int:
    return arch.count("x") + 1


def ordering_violations(rows: Sequence[SweepRow]) -> list[tuple[SweepRow, SweepRow]]:
    """Return ``(expected_better, row)`` pairs whose test MSEs are inverted.

    With one transfer a deeper network should not lose to a shallower one.
    With one architecture tansig should not lose to logsig, nor logsig to
    elliotsig.
    """
    pairs = []
    for a in rows:
        for b in rows:
            deeper = a.transfer == b.transfer and _depth(a.arch) > _depth(b.arch)
            rank_a = _TRANSFER_RANK.get(a.transfer, len(_TRANSFER_RANK))
            rank_b = _TRANSFER_RANK.get(b.transfer, len(_TRANSFER_RANK))
            better_tf = a.arch == b.arch and rank_a < rank_b
            if (deeper or better_tf) and a.test_mse > b.test_mse:
                pairs.append((a, b))
    return pairs


def _ordered_map(
    fn: Callable[[Architecture], SweepRow], items: Iterable[Architecture], workers: int
) -> list[SweepRow]:
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def write_sweep_csv(rows: Iterable[SweepRow], sink: IO[str]) -> None:
    """Write ``arch,transfer,train_mse,val_mse,test_mse,epochs,stop_reason``."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for r in rows:
        writer.writerow(
            (
                r.arch,
                r.transfer.value,
                repr(r.train_mse),
                repr(r.val_mse),
                repr(r.test_mse),
                r.epochs,
                r.stop_reason.value,
            )
        )


def format_sweep_table(rows: Iterable[SweepRow]) -> str:
    """Render the sweep as an aligned text table."""
    cells = [list(SWEEP_HEADER)]
    for r in rows:
        cells.append(
            [
                r.arch,
                r.transfer.value,
                f"{r.train_mse:.3e}",
                f"{r.val_mse:.3e}",
                f"{r.test_mse:.3e}",
                str(r.epochs),
                r.stop_reason.value,
            ]
        )
    widths = [max(len(row[k]) for row in cells) for k in range(len(SWEEP_HEADER))]
    return "\n".join(
        "  ".join(c.ljust(w) for c, w in zip(row, widths, strict=True)).rstrip()
        for row in cells
    )
