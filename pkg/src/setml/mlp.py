"""Feedforward regression network mapping (t, LET, vd) to SET current.

Parameter order
---------------
Whenever the parameters are handled as one flat vector (Jacobian columns,
LM updates, initialisation) they are laid out layer by layer; inside a layer
the weight matrix comes first in row-major order, then the bias vector::

    W1[0,0] W1[0,1] ... W1[h1-1,2]  b1[0] ... b1[h1-1]  W2[0,0] ...

Model file
----------
A versioned text format, one item per line::

    setml-mlp 1
    layers 3 8 8 1
    transfer tansig tansig purelin
    norm t <min> <max>
    norm let <min> <max>
    norm vd <min> <max>
    norm i <min> <max>
    W1 8 3
    <8 rows of 3 values>
    b1 8
    <8 values>
    ...
    end

Values are written with ``repr`` so loading reproduces every bit.  The
output channel is in amperes.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import ValidationError
from scipy.special import expit

from setml.dataset import NormParams
from setml.errors import ModelError, ModelFormatError

logger = logging.getLogger(__name__)

FORMAT_MAGIC = "setml-mlp"
FORMAT_VERSION = 1

N_INPUTS = 3
N_OUTPUTS = 1


class Transfer(StrEnum):
    """Layer transfer functions."""

    TANSIG = "tansig"
    LOGSIG = "logsig"
    ELLIOTSIG = "elliotsig"
    PURELIN = "purelin"


def as_transfer(tag: str | Transfer) -> Transfer:
    """Return the Transfer for *tag*, raising ModelError for unknown names."""
    try:
        return Transfer(tag)
    except ValueError:
        valid = ", ".join(t.value for t in Transfer)
        raise ModelError(
            f"Unknown transfer function {tag!r}. Valid names: {valid}"
        ) from None


def transfer_eval(tag: str | Transfer, n: ArrayLike) -> NDArray[np.float64]:
    """Apply a transfer function elementwise.

    tansig is 2 / (1 + exp(-2n)) - 1, evaluated as ``tanh``; logsig is
    1 / (1 + exp(-n)); elliotsig is n / (1 + |n|); purelin is the identity.
    """
    x = np.asarray(n, dtype=np.float64)
    match as_transfer(tag):
        case Transfer.TANSIG:
            return np.tanh(x)
        case Transfer.LOGSIG:
            return expit(x)
        case Transfer.ELLIOTSIG:
            return x / (1.0 + np.abs(x))
        case Transfer.PURELIN:
            return x.copy()


def transfer_deriv(tag: str | Transfer, n: ArrayLike) -> NDArray[np.float64]:
    """Return da/dn of a transfer function elementwise."""
    x = np.asarray(n, dtype=np.float64)
    match as_transfer(tag):
        case Transfer.TANSIG:
            a = np.tanh(x)
            return 1.0 - a * a
        case Transfer.LOGSIG:
            a = expit(x)
            return a * (1.0 - a)
        case Transfer.ELLIOTSIG:
            d = 1.0 + np.abs(x)
            return 1.0 / (d * d)
        case Transfer.PURELIN:
            return np.ones_like(x)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


def _frozen(values: ArrayLike) -> NDArray[np.float64]:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Immutable weights, biases, transfer tags and normalisation of a network.

    ``weights[l]`` has shape (out, in) and ``biases[l]`` shape (out,).
    """

    weights: tuple[NDArray[np.float64], ...]
    biases: tuple[NDArray[np.float64], ...]
    transfers: tuple[Transfer, ...]
    norm: NormParams

    def __post_init__(self) -> None:
        weights = tuple(_frozen(w) for w in self.weights)
        biases = tuple(_frozen(b) for b in self.biases)
        transfers = tuple(as_transfer(t) for t in self.transfers)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "transfers", transfers)

        if not weights or not (len(weights) == len(biases) == len(transfers)):
            raise ModelError(
                "Need one weight matrix, bias vector and transfer tag per layer."
            )
        fan_in = N_INPUTS
        for k, (w, b) in enumerate(zip(weights, biases, strict=True), start=1):
            if w.ndim != 2 or w.shape[1] != fan_in:
                raise ModelError(
                    f"W{k} has shape {w.shape}; expected (*, {fan_in})."
                )
            if b.shape != (w.shape[0],):
                raise ModelError(
                    f"b{k} has shape {b.shape}; expected ({w.shape[0]},)."
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ModelError(f"Layer {k} contains non-finite parameters.")
            fan_in = w.shape[0]
        if fan_in != N_OUTPUTS:
            raise ModelError(f"Output layer has {fan_in} neurons; expected 1.")
        if transfers[-1] is not Transfer.PURELIN:
            raise ModelError("The output layer transfer must be purelin.")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        """Return (3, h1, ..., 1)."""
        return (N_INPUTS, *(w.shape[0] for w in self.weights))

    @property
    def param_count(self) -> int:
        return param_count(self.layer_dims)

    def same_as(self, other: MlpModel) -> bool:
        """Return True when both models hold bit-identical parameters."""
        return (
            self.transfers == other.transfers
            and self.norm == other.norm
            and len(self.weights) == len(other.weights)
            and all(
                np.array_equal(a, b)
                for a, b in zip(
                    self.weights + self.biases,
                    other.weights + other.biases,
                    strict=True,
                )
            )
        )


def param_count(layer_dims: Sequence[int]) -> int:
    """Number of weights and biases of a network with *layer_dims*."""
    pairs = zip(layer_dims[:-1], layer_dims[1:], strict=True)
    return sum((fan_in + 1) * fan_out for fan_in, fan_out in pairs)


def build_model(
    layer_dims: Sequence[int],
    transfers: Sequence[str | Transfer],
    params: ArrayLike,
    norm: NormParams,
) -> MlpModel:
    """Assemble a model from a flat parameter vector (see module docstring)."""
    p = np.asarray(params, dtype=np.float64)
    if p.shape != (param_count(layer_dims),):
        raise ModelError(
            f"Expected {param_count(layer_dims)} parameters for layers "
            f"{tuple(layer_dims)}, got {p.shape}."
        )
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:], strict=True):
        weights.append(p[pos : pos + fan_in * fan_out].reshape(fan_out, fan_in))
        pos += fan_in * fan_out
        biases.append(p[pos : pos + fan_out])
        pos += fan_out
    return MlpModel(
        tuple(weights), tuple(biases), tuple(as_transfer(t) for t in transfers), norm
    )


def zero_model(
    layer_dims: Sequence[int], transfers: Sequence[str | Transfer], norm: NormParams
) -> MlpModel:
    """Return a network whose weights and biases are all zero."""
    return build_model(layer_dims, transfers, np.zeros(param_count(layer_dims)), norm)


def flatten_params(m: MlpModel) -> NDArray[np.float64]:
    """Return all parameters as one vector in the documented order."""
    parts: list[NDArray[np.float64]] = []
    for w, b in zip(m.weights, m.biases, strict=True):
        parts.extend((w.ravel(), b))
    return np.concatenate(parts)


def with_params(m: MlpModel, params: ArrayLike) -> MlpModel:
    """Return a copy of *m* carrying *params*."""
    return build_model(m.layer_dims, m.transfers, params, m.norm)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _as_batch(m: MlpModel, x: ArrayLike) -> NDArray[np.float64]:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != N_INPUTS:
        raise ModelError(f"Expected inputs of shape (n, 3), got {np.shape(x)}.")
    return a


def forward(m: MlpModel, x: ArrayLike) -> float | NDArray[np.float64]:
    """Evaluate the network on normalised inputs.

    A single 3-vector returns a float; an (n, 3) batch returns n outputs.
    """
    a = _as_batch(m, x)
    for w, b, tf in zip(m.weights, m.biases, m.transfers, strict=True):
        a = transfer_eval(tf, a @ w.T + b)
    out = a[:, 0]
    return float(out[0]) if np.ndim(x) == 1 else out


def _forward_trace(
    m: MlpModel, x: NDArray[np.float64]
) -> tuple[list[NDArray[np.float64]], list[NDArray[np.float64]]]:
    """Return per-layer activations (input first) and transfer derivatives."""
    acts = [x]
    derivs = []
    for w, b, tf in zip(m.weights, m.biases, m.transfers, strict=True):
        n = acts[-1] @ w.T + b
        acts.append(transfer_eval(tf, n))
        derivs.append(transfer_deriv(tf, n))
    return acts, derivs


def jacobian(m: MlpModel, x: ArrayLike) -> NDArray[np.float64]:
    """Return d(output)/d(parameter) for every sample of a normalised batch.

    Rows follow the samples, columns the documented parameter order.  The
    sensitivities are accumulated backwards through the layer chain.
    """
    batch = _as_batch(m, x)
    if len(batch) == 0:
        raise ModelError("Jacobian needs at least one sample.")
    acts, derivs = _forward_trace(m, batch)
    n = len(batch)
    blocks: list[NDArray[np.float64]] = [np.empty(0)] * (2 * len(m.weights))
    delta = derivs[-1]
    for k in range(len(m.weights) - 1, -1, -1):
        a_prev = acts[k]
        blocks[2 * k] = (delta[:, :, None] * a_prev[:, None, :]).reshape(n, -1)
        blocks[2 * k + 1] = delta
        if k > 0:
            delta = (delta @ m.weights[k]) * derivs[k - 1]
    return np.hstack(blocks)


@dataclass(frozen=True)
class Prediction:
    """Denormalised model output plus an extrapolation flag per point."""

    current: float | NDArray[np.float64]
    extrapolated: bool | NDArray[np.bool_]


def _normalized_inputs(
    m: MlpModel, t: ArrayLike, let_value: ArrayLike, vd: ArrayLike
) -> tuple[NDArray[np.float64], tuple[int, ...]]:
    cols = np.broadcast_arrays(
        np.asarray(t, dtype=np.float64),
        np.asarray(let_value, dtype=np.float64),
        np.asarray(vd, dtype=np.float64),
    )
    shape = cols[0].shape
    x = np.stack([c.ravel() for c in cols], axis=-1)
    return m.norm.normalize_inputs(x), shape


def _current(
    m: MlpModel, t: ArrayLike, let_value: ArrayLike, vd: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64], tuple[int, ...]]:
    xn, shape = _normalized_inputs(m, t, let_value, vd)
    return m.norm.denormalize_output(forward(m, xn)).reshape(shape), xn, shape


def predict(
    m: MlpModel, t: ArrayLike, let_value: ArrayLike, vd: ArrayLike
) -> Prediction:
    """Predict currents in amperes and flag inputs outside the training ranges.

    Extrapolated points are also logged at WARNING level.
    """
    y, xn, shape = _current(m, t, let_value, vd)
    extrapolated = (np.abs(xn) > 1.0 + 1e-12).any(axis=1).reshape(shape)
    if extrapolated.any():
        logger.warning(
            "%d of %d prediction(s) lie outside the training ranges",
            int(extrapolated.sum()),
            extrapolated.size,
        )
    if shape == ():
        return Prediction(float(y), bool(extrapolated))
    return Prediction(y, extrapolated)


def predict_current(
    m: MlpModel, t: ArrayLike, let_value: ArrayLike, vd: ArrayLike
) -> float | NDArray[np.float64]:
    """Normalise the inputs, run the network and denormalise to amperes.

    No training-range check; use :func:`predict` for flagged output.
    """
    y, _, shape = _current(m, t, let_value, vd)
    return float(y) if shape == () else y


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------


def serialize(m: MlpModel) -> str:
    """Return the versioned text form of *m*."""
    lines = [
        f"{FORMAT_MAGIC} {FORMAT_VERSION}",
        "layers " + " ".join(str(d) for d in m.layer_dims),
        "transfer " + " ".join(t.value for t in m.transfers),
    ]
    norm = m.norm
    for name, lo, hi in zip(("t", "let", "vd"), norm.in_min, norm.in_max, strict=True):
        lines.append(f"norm {name} {lo!r} {hi!r}")
    lines.append(f"norm i {norm.out_min!r} {norm.out_max!r}")
    for k, (w, b) in enumerate(zip(m.weights, m.biases, strict=True), start=1):
        lines.append(f"W{k} {w.shape[0]} {w.shape[1]}")
        lines.extend(" ".join(repr(v) for v in row) for row in w.tolist())
        lines.append(f"b{k} {b.shape[0]}")
        lines.append(" ".join(repr(v) for v in b.tolist()))
    lines.append("end")
    return "\n".join(lines) + "\n"


class _Lines:
    """Cursor over the non-blank lines of a model file."""

    def __init__(self, text: str) -> None:
        self._lines = [ln.split() for ln in text.splitlines() if ln.strip()]
        self._pos = 0

    def next(self, what: str) -> list[str]:
        if self._pos >= len(self._lines):
            raise ModelFormatError(f"Model file is truncated: expected {what}.")
        fields = self._lines[self._pos]
        self._pos += 1
        return fields

    def expect(self, keyword: str, count: int) -> list[str]:
        fields = self.next(f"{keyword!r} line")
        if fields[0] != keyword or len(fields) != count + 1:
            raise ModelFormatError(
                f"Expected {keyword!r} with {count} values, got {' '.join(fields)!r}."
            )
        return fields[1:]

    def floats(self, fields: list[str], count: int, what: str) -> list[float]:
        if len(fields) != count:
            raise ModelFormatError(
                f"{what}: expected {count} values, got {len(fields)}."
            )
        try:
            return [float(f) for f in fields]
        except ValueError:
            raise ModelFormatError(f"{what}: non-numeric value.") from None

    @property
    def exhausted(self) -> bool:
        return self._pos >= len(self._lines)


def deserialize(source: str | bytes) -> MlpModel:
    """Parse the text produced by :func:`serialize`."""
    text = source.decode("utf-8") if isinstance(source, bytes) else source
    lines = _Lines(text)

    head = lines.next("header")
    if len(head) != 2 or head[0] != FORMAT_MAGIC:
        raise ModelFormatError(f"Not a setml model file (header {' '.join(head)!r}).")
    if head[1] != str(FORMAT_VERSION):
        raise ModelFormatError(
            f"Unsupported model format version {head[1]}; expected {FORMAT_VERSION}."
        )
    dims_line = lines.next("'layers' line")
    if dims_line[0] != "layers" or len(dims_line) < 3:
        raise ModelFormatError("Expected a 'layers' line with at least two sizes.")
    try:
        dims = [int(d) for d in dims_line[1:]]
    except ValueError:
        raise ModelFormatError("Layer sizes must be integers.") from None
    n_layers = len(dims) - 1
    transfers = lines.expect("transfer", n_layers)

    ranges: dict[str, list[float]] = {}
    for name in ("t", "let", "vd", "i"):
        fields = lines.expect("norm", 3)
        if fields[0] != name:
            raise ModelFormatError(
                f"Expected norm block for {name!r}, got {fields[0]!r}."
            )
        ranges[name] = lines.floats(fields[1:], 2, f"norm {name}")
    try:
        norm = NormParams(
            in_min=(ranges["t"][0], ranges["let"][0], ranges["vd"][0]),
            in_max=(ranges["t"][1], ranges["let"][1], ranges["vd"][1]),
            out_min=ranges["i"][0],
            out_max=ranges["i"][1],
        )
    except ValidationError as exc:
        raise ModelFormatError(f"Invalid normalisation block: {exc}") from None

    weights, biases = [], []
    for k in range(1, n_layers + 1):
        fan_in, fan_out = dims[k - 1], dims[k]
        shape = lines.expect(f"W{k}", 2)
        if shape != [str(fan_out), str(fan_in)]:
            raise ModelFormatError(
                f"W{k} declared as {' x '.join(shape)}; "
                f"layers imply {fan_out} x {fan_in}."
            )
        weights.append(
            [
                lines.floats(lines.next(f"W{k} row"), fan_in, f"W{k} row")
                for _ in range(fan_out)
            ]
        )
        if lines.expect(f"b{k}", 1) != [str(fan_out)]:
            raise ModelFormatError(f"b{k} length disagrees with layer size {fan_out}.")
        biases.append(lines.floats(lines.next(f"b{k} values"), fan_out, f"b{k}"))

    if lines.next("'end' line") != ["end"] or not lines.exhausted:
        raise ModelFormatError("Model file must finish with a single 'end' line.")
    return MlpModel(
        tuple(np.array(w) for w in weights),
        tuple(np.array(b) for b in biases),
        tuple(as_transfer(t) for t in transfers),
        norm,
    )


def save_model(m: MlpModel, path: Path) -> None:
    """Write *m* to *path* in the text format."""
    path.write_text(serialize(m), encoding="utf-8")


def load_model(path: Path) -> MlpModel:
    """Read a model file, raising ModelFormatError when it is missing."""
    if not path.is_file():
        raise ModelFormatError(f"Model file not found: {path}")
    return deserialize(path.read_text(encoding="utf-8"))
