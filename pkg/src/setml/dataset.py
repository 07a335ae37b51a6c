"""SET waveform data: ingestion, spline resampling, normalisation and splitting.

Rows
----
Regression rows are float64 arrays of shape ``(n, 4)`` with the columns
``t, let, vd, i`` (seconds, MeV*cm^2/mg, volts, amperes).  The first three
columns are the network inputs, the last one the target.

CSV formats
-----------
Waveform files carry the header ``let,vd,t,i``.  Dataset exports add a
``split`` column whose values are ``train``, ``val`` or ``test``.  Floats are
written with ``repr`` so a re-read reproduces every bit.
"""

from __future__ import annotations

import csv
import io
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import IntEnum
from typing import IO, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.interpolate import CubicSpline

from setml.errors import DatasetError

logger = logging.getLogger(__name__)

WAVEFORM_HEADER = ("let", "vd", "t", "i")
DATASET_HEADER = ("let", "vd", "t", "i", "split")

# Column indices of a row array.
T, LET, VD, I = 0, 1, 2, 3

MIN_SAMPLES = 4
MIN_SPLIT_ROWS = 10

# Interior check points of every interval during adaptive densification.
_CHECK_FRACTIONS = np.arange(1, 10) / 10.0
_MAX_REFINE_PASSES = 60


class Split(IntEnum):
    """Partition tag of a dataset row."""

    TRAIN = 0
    VALIDATION = 1
    TEST = 2

    @property
    def label(self) -> str:
        """Return the CSV spelling of the tag."""
        return ("train", "val", "test")[self.value]

    @classmethod
    def from_label(cls, label: str) -> Split:
        """Parse the CSV spelling of a tag."""
        try:
            return cls(("train", "val", "test").index(label))
        except ValueError:
            raise DatasetError(
                f"Unknown split tag {label!r}; expected train, val or test."
            ) from None


# ---------------------------------------------------------------------------
# Waveform
# ---------------------------------------------------------------------------


def _frozen(values: ArrayLike) -> NDArray[np.float64]:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Waveform:
    """One SET current transient tagged with its (LET, drain bias) condition."""

    let_value: float
    vd: float
    t: NDArray[np.float64]
    i: NDArray[np.float64]

    def __post_init__(self) -> None:
        t = _frozen(self.t)
        i = _frozen(self.i)
        object.__setattr__(self, "let_value", float(self.let_value))
        object.__setattr__(self, "vd", float(self.vd))
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "i", i)
        if t.ndim != 1 or t.shape != i.shape:
            raise DatasetError("Waveform times and currents must be equal-length 1-D.")
        if len(t) < MIN_SAMPLES:
            raise DatasetError(
                f"Waveform (let={self.let_value}, vd={self.vd}) has {len(t)} "
                f"samples; at least {MIN_SAMPLES} are needed for a cubic spline."
            )
        if not np.all(np.diff(t) > 0):
            raise DatasetError(
                f"Waveform (let={self.let_value}, vd={self.vd}) sample times "
                "are not strictly increasing."
            )
        if not self.let_value > 0:
            raise DatasetError(f"LET must be positive, got {self.let_value}.")
        if not self.vd >= 0:
            raise DatasetError(f"Drain bias must be non-negative, got {self.vd}.")

    @property
    def samples(self) -> list[tuple[float, float]]:
        """Return the (t, i) samples as Python floats."""
        return list(zip(self.t.tolist(), self.i.tolist(), strict=True))

    @property
    def t_first(self) -> float:
        return float(self.t[0])

    @property
    def t_last(self) -> float:
        return float(self.t[-1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Waveform):
            return NotImplemented
        return (
            self.let_value == other.let_value
            and self.vd == other.vd
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.i, other.i)
        )


def _read_text(source: IO[str] | IO[bytes] | str | bytes) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _parse_float(value: str, line: int, column: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise DatasetError(
            f"Malformed row at line {line}: {column}={value!r} is not a number."
        ) from None
    if not np.isfinite(x):
        raise DatasetError(f"Malformed row at line {line}: {column} is not finite.")
    return x


def ingest_waveform_csv(source: IO[str] | IO[bytes] | str | bytes) -> list[Waveform]:
    """Read a ``let,vd,t,i`` CSV stream into one Waveform per (let, vd) pair.

    Waveforms are returned sorted by (let, vd); samples are sorted by time.
    """
    reader = csv.reader(io.StringIO(_read_text(source)))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != WAVEFORM_HEADER:
        raise DatasetError(
            f"Expected header {','.join(WAVEFORM_HEADER)!r}, got {header!r}."
        )

    groups: dict[tuple[float, float], dict[float, float]] = {}
    for line, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(WAVEFORM_HEADER):
            raise DatasetError(
                f"Malformed row at line {line}: expected 4 fields, got {len(row)}."
            )
        let_value, vd, t, i = (
            _parse_float(cell.strip(), line, name)
            for cell, name in zip(row, WAVEFORM_HEADER, strict=True)
        )
        group = groups.setdefault((let_value, vd), {})
        if t in group:
            raise DatasetError(
                f"Duplicate time {t!r} for (let={let_value}, vd={vd}) at line {line}."
            )
        group[t] = i

    waveforms = []
    for (let_value, vd), samples in sorted(groups.items()):
        if len(samples) < MIN_SAMPLES:
            raise DatasetError(
                f"Group (let={let_value}, vd={vd}) has {len(samples)} samples; "
                f"at least {MIN_SAMPLES} are required."
            )
        ts = sorted(samples)
        waveforms.append(
            Waveform(let_value, vd, np.array(ts), np.array([samples[t] for t in ts]))
        )
    logger.debug("Ingested %d waveforms", len(waveforms))
    return waveforms


def write_waveform_csv(waveforms: Iterable[Waveform], sink: IO[str]) -> None:
    """Write waveforms in the ``let,vd,t,i`` format."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(WAVEFORM_HEADER)
    for w in waveforms:
        for t, i in zip(w.t.tolist(), w.i.tolist(), strict=True):
            writer.writerow((repr(w.let_value), repr(w.vd), repr(t), repr(i)))


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

BoundaryCondition = Literal["not-a-knot", "natural"]


def _spline(w: Waveform, bc_type: BoundaryCondition) -> CubicSpline:
    return CubicSpline(w.t, w.i, bc_type=bc_type, extrapolate=False)


def resample_cubic_spline(
    w: Waveform,
    grid: ArrayLike,
    bc_type: BoundaryCondition = "not-a-knot",
) -> Waveform:
    """Evaluate the cubic spline through *w* on *grid*.

    Grid points must lie inside ``[w.t_first, w.t_last]``; no extrapolation is
    done.  The default not-a-knot end condition reproduces any cubic exactly;
    pass ``bc_type="natural"`` for zero end curvature.  Points that coincide
    with a knot return the stored sample bit for bit.
    """
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 1 or len(g) < MIN_SAMPLES:
        raise DatasetError(f"Resample grid needs at least {MIN_SAMPLES} points.")
    if not np.all(np.diff(g) > 0):
        raise DatasetError("Resample grid must be strictly increasing.")
    if g[0] < w.t[0] or g[-1] > w.t[-1]:
        raise DatasetError(
            f"Grid [{g[0]!r}, {g[-1]!r}] leaves the data range "
            f"[{w.t_first!r}, {w.t_last!r}]; extrapolation is not supported."
        )
    values = _spline(w, bc_type)(g)
    idx = np.searchsorted(w.t, g)
    on_knot = idx < len(w.t)
    on_knot[on_knot] = w.t[idx[on_knot]] == g[on_knot]
    values[on_knot] = w.i[idx[on_knot]]
    return Waveform(w.let_value, w.vd, g, values)


def densify_adaptive(
    w: Waveform,
    max_rel_err: float,
    bc_type: BoundaryCondition = "not-a-knot",
) -> Waveform:
    """Resample *w* on a grid whose linear reconstruction tracks the spline.

    Starting from the endpoints and the midpoint, every interval whose
    piecewise-linear interpolation deviates from the spline by
    ``max_rel_err * peak`` or more at any of its nine tenth-points is
    bisected.  The grid therefore ends up dense around the pulse peak and
    sparse in the tails.
    """
    if not 0.0 < max_rel_err < 1.0:
        raise DatasetError(f"max_rel_err must lie in (0, 1), got {max_rel_err}.")
    spline = _spline(w, bc_type)
    peak = float(np.max(np.abs(w.i)))
    tol = max_rel_err * peak
    t0, t1 = w.t_first, w.t_last
    min_width = (t1 - t0) * 2.0**-_MAX_REFINE_PASSES
    grid = np.array([t0, 0.5 * (t0 + t1), t1])

    for _ in range(_MAX_REFINE_PASSES):
        left, right = grid[:-1], grid[1:]
        width = right - left
        checks = left[:, None] + width[:, None] * _CHECK_FRACTIONS[None, :]
        ends = spline(grid)
        linear = ends[:-1, None] + (ends[1:, None] - ends[:-1, None]) * _CHECK_FRACTIONS
        err = np.max(np.abs(spline(checks) - linear), axis=1)
        refine = (err >= tol) & (err > 0.0) & (width > min_width)
        if not refine.any():
            break
        grid = np.sort(np.concatenate([grid, 0.5 * (left[refine] + right[refine])]))
    while len(grid) < MIN_SAMPLES:
        k = int(np.argmax(np.diff(grid)))
        grid = np.insert(grid, k + 1, 0.5 * (grid[k] + grid[k + 1]))

    logger.debug(
        "Densified (let=%s, vd=%s): %d -> %d samples",
        w.let_value,
        w.vd,
        len(w.t),
        len(grid),
    )
    return resample_cubic_spline(w, grid, bc_type)


# ---------------------------------------------------------------------------
# Normalisation
# ---------------------------------------------------------------------------


class NormParams(BaseModel):
    """Per-channel min-max ranges mapping physical values onto [-1, +1]."""

    model_config = ConfigDict(frozen=True)

    in_min: tuple[float, float, float]
    in_max: tuple[float, float, float]
    out_min: float
    out_max: float

    @model_validator(mode="after")
    def _check_ranges(self) -> NormParams:
        names = ("t", "let", "vd")
        for name, lo, hi in zip(names, self.in_min, self.in_max, strict=True):
            if not hi > lo:
                raise ValueError(
                    f"Degenerate feature {name!r}: max ({hi}) must exceed min ({lo})."
                )
        if not self.out_max > self.out_min:
            raise ValueError(
                f"Degenerate output: max ({self.out_max}) must exceed "
                f"min ({self.out_min})."
            )
        return self

    @property
    def row_min(self) -> NDArray[np.float64]:
        return np.array([*self.in_min, self.out_min])

    @property
    def row_max(self) -> NDArray[np.float64]:
        return np.array([*self.in_max, self.out_max])

    def normalize_inputs(self, x: ArrayLike) -> NDArray[np.float64]:
        """Map ``(..., 3)`` physical inputs onto [-1, +1]."""
        lo, hi = np.array(self.in_min), np.array(self.in_max)
        return 2.0 * (np.asarray(x, dtype=np.float64) - lo) / (hi - lo) - 1.0

    def normalize_output(self, y: ArrayLike) -> NDArray[np.float64]:
        """Map currents onto [-1, +1]."""
        lo, hi = self.out_min, self.out_max
        return 2.0 * (np.asarray(y, dtype=np.float64) - lo) / (hi - lo) - 1.0

    def denormalize_output(self, y_hat: ArrayLike) -> NDArray[np.float64]:
        """Map network outputs back to amperes."""
        lo, hi = self.out_min, self.out_max
        return (np.asarray(y_hat, dtype=np.float64) + 1.0) * (hi - lo) / 2.0 + lo


def fit_norm(rows: ArrayLike) -> NormParams:
    """Fit per-channel (min, max) over *rows* (normally the training split)."""
    r = np.asarray(rows, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] != 4 or len(r) == 0:
        raise DatasetError("fit_norm expects a non-empty (n, 4) row array.")
    lo, hi = r.min(axis=0), r.max(axis=0)
    for name, a, b in zip(("t", "let", "vd", "i"), lo, hi, strict=True):
        if not b > a:
            raise DatasetError(f"Degenerate feature {name!r}: constant value {a!r}.")
    return NormParams(
        in_min=(float(lo[T]), float(lo[LET]), float(lo[VD])),
        in_max=(float(hi[T]), float(hi[LET]), float(hi[VD])),
        out_min=float(lo[I]),
        out_max=float(hi[I]),
    )


def normalize(x: ArrayLike, norm: NormParams) -> NDArray[np.float64]:
    """Map ``(..., 4)`` rows to x_hat = 2 (x - min) / (max - min) - 1 per channel."""
    lo, hi = norm.row_min, norm.row_max
    return 2.0 * (np.asarray(x, dtype=np.float64) - lo) / (hi - lo) - 1.0


def denormalize(x_hat: ArrayLike, norm: NormParams) -> NDArray[np.float64]:
    """Invert :func:`normalize`."""
    lo, hi = norm.row_min, norm.row_max
    return (np.asarray(x_hat, dtype=np.float64) + 1.0) * (hi - lo) / 2.0 + lo


# ---------------------------------------------------------------------------
# Dataset and split
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SetDataset:
    """Flattened regression rows with a per-row split tag."""

    rows: NDArray[np.float64]
    split: NDArray[np.int8]
    split_seed: int | None
    """Seed of the permutation that produced *split*; None when unknown."""
    _index: dict[Split, NDArray[np.intp]] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        rows = _frozen(self.rows)
        split = np.array(self.split, dtype=np.int8)
        split.setflags(write=False)
        if rows.ndim != 2 or rows.shape[1] != 4:
            raise DatasetError("Dataset rows must have shape (n, 4).")
        if split.shape != (len(rows),):
            raise DatasetError("Every row needs exactly one split tag.")
        if not np.isin(split, [s.value for s in Split]).all():
            raise DatasetError("Split tags must be train, val or test.")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "split", split)
        object.__setattr__(
            self, "_index", {s: np.flatnonzero(split == s.value) for s in Split}
        )

    def subset(self, split: Split) -> NDArray[np.float64]:
        """Return the rows tagged *split*, in dataset order."""
        return self.rows[self._index[split]]

    def inputs(self, split: Split) -> NDArray[np.float64]:
        return self.subset(split)[:, :3]

    def targets(self, split: Split) -> NDArray[np.float64]:
        return self.subset(split)[:, I]

    def counts(self) -> dict[Split, int]:
        """Return the number of rows per split."""
        return {s: len(idx) for s, idx in self._index.items()}

    def fit_norm(self) -> NormParams:
        """Fit normalisation ranges on the training split only."""
        return fit_norm(self.subset(Split.TRAIN))


def waveforms_to_rows(waveforms: Iterable[Waveform]) -> NDArray[np.float64]:
    """Flatten waveforms into ``(t, let, vd, i)`` rows, waveform by waveform."""
    blocks = [
        np.column_stack(
            [w.t, np.full(len(w.t), w.let_value), np.full(len(w.t), w.vd), w.i]
        )
        for w in waveforms
    ]
    if not blocks:
        return np.empty((0, 4))
    return np.vstack(blocks)


def split_dataset(rows: ArrayLike, seed: int) -> SetDataset:
    """Partition rows 70/15/15 into train/validation/test.

    Rows are shuffled by a seeded permutation and cut at 70 % and 85 %
    (rounded half up), so the same seed always yields the same tags.
    """
    r = np.asarray(rows, dtype=np.float64)
    n = len(r)
    if n < MIN_SPLIT_ROWS:
        raise DatasetError(
            f"Need at least {MIN_SPLIT_ROWS} rows to split, got {n}."
        )
    perm = np.random.default_rng(seed).permutation(n)
    n_train = (70 * n + 50) // 100
    n_val_end = (85 * n + 50) // 100
    split = np.empty(n, dtype=np.int8)
    split[perm[:n_train]] = Split.TRAIN
    split[perm[n_train:n_val_end]] = Split.VALIDATION
    split[perm[n_val_end:]] = Split.TEST
    return SetDataset(r, split, seed)


def write_dataset_csv(data: SetDataset, sink: IO[str]) -> None:
    """Write the dataset with its split column."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(DATASET_HEADER)
    for (t, let_value, vd, i), tag in zip(
        data.rows.tolist(), data.split.tolist(), strict=True
    ):
        writer.writerow(
            (repr(let_value), repr(vd), repr(t), repr(i), Split(tag).label)
        )


def read_dataset_csv(
    source: IO[str] | IO[bytes] | str | bytes, split_seed: int | None = None
) -> SetDataset:
    """Read a dataset export written by :func:`write_dataset_csv`.

    The split tags come from the file; *split_seed* only records which seed
    produced them, when the caller knows it.
    """
    reader = csv.reader(io.StringIO(_read_text(source)))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != DATASET_HEADER:
        raise DatasetError(
            f"Expected header {','.join(DATASET_HEADER)!r}, got {header!r}."
        )
    rows: list[Sequence[float]] = []
    tags: list[int] = []
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(DATASET_HEADER):
            raise DatasetError(
                f"Malformed row at line {line}: expected 5 fields, got {len(row)}."
            )
        let_value, vd, t, i = (
            _parse_float(cell.strip(), line, name)
            for cell, name in zip(row[:4], WAVEFORM_HEADER, strict=True)
        )
        rows.append((t, let_value, vd, i))
        tags.append(Split.from_label(row[4].strip()))
    if not rows:
        raise DatasetError("Dataset file contains no rows.")
    return SetDataset(np.array(rows), np.array(tags, dtype=np.int8), split_seed)
