"""Emit a trained network as a Verilog-A current source.

The generated module has two ports ``p`` and ``n`` and three parameters:
``let_value`` (MeV*cm^2/mg), ``vd`` (V) and ``t_strike`` (s).  Inside the
analog block it shifts simulator time by the strike time, normalises the
inputs, evaluates the layer chain neuron by neuron, denormalises the output
and contributes it as ``I(p, n)``.  Before the strike the current is zero.

Every weight, bias and normalisation bound is written once, with 17
significant digits, so the text reproduces the in-memory model bit for bit
and the same model always yields the same bytes.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from setml.errors import CodegenError
from setml.mlp import MlpModel, Transfer, predict_current
from setml.vaexpr import parse_module

logger = logging.getLogger(__name__)

DEFAULT_MODULE_NAME = "set_current"

_IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_RESERVED = frozenset(
    {
        "analog",
        "begin",
        "electrical",
        "end",
        "endmodule",
        "exp",
        "inout",
        "input",
        "ln",
        "module",
        "output",
        "parameter",
        "pow",
        "real",
        "tanh",
    }
)
_INPUT_NAMES = ("t", "let", "vd")
_INPUT_SOURCES = ("ts", "let_value", "vd")


def va_literal(x: float) -> str:
    """Round-trip exact decimal with 17 significant digits."""
    return format(float(x), ".16e")


@dataclass(frozen=True)
class VaModule:
    """Generated Verilog-A text plus the constants embedded in it."""

    module_name: str
    source_text: str
    constants: dict[str, float] = field(default_factory=dict)

    def write(self, directory: Path) -> Path:
        """Write ``<module_name>.va`` into *directory* and return the path."""
        path = directory / f"{self.module_name}.va"
        path.write_text(self.source_text, encoding="utf-8")
        logger.info("Wrote Verilog-A module %s", path)
        return path


def _activation(tf: Transfer, n: str) -> str:
    match tf:
        case Transfer.TANSIG:
            return f"tanh({n})"
        case Transfer.LOGSIG:
            return f"1.0 / (1.0 + exp(-{n}))"
        case Transfer.ELLIOTSIG:
            return f"{n} / (1.0 + abs({n}))"
        case Transfer.PURELIN:
            return n
    raise CodegenError(f"Transfer {tf!r} has no Verilog-A form.")


def _affine(
    w: NDArray[np.float64], b: float, sources: list[str]
) -> tuple[str, list[float]]:
    terms = [va_literal(b)]
    terms.extend(f"{va_literal(wj)} * {s}" for wj, s in zip(w, sources, strict=True))
    return " + ".join(terms), [float(b), *(float(v) for v in w)]


def _record(
    constants: dict[str, float], layer: int, row: int, values: list[float]
) -> None:
    constants[f"b{layer}[{row}]"] = values[0]
    constants.update((f"W{layer}[{row},{c}]", v) for c, v in enumerate(values[1:]))


def export_verilog_a(
    m: MlpModel,
    module_name: str = DEFAULT_MODULE_NAME,
    t_strike: float = 200e-12,
) -> VaModule:
    """Generate the Verilog-A source of *m*."""
    if not _IDENTIFIER.match(module_name) or module_name in _RESERVED:
        raise CodegenError(f"{module_name!r} is not a usable Verilog-A module name.")
    if not np.isfinite(t_strike):
        raise CodegenError(f"Strike time must be finite, got {t_strike}.")

    norm = m.norm
    constants: dict[str, float] = {}
    bounds: list[tuple[str, float]] = []
    for name, lo, hi in zip(_INPUT_NAMES, norm.in_min, norm.in_max, strict=True):
        bounds += [(f"{name}_min", lo), (f"{name}_max", hi)]
    bounds += [("i_min", norm.out_min), ("i_max", norm.out_max)]
    constants.update(bounds)

    body: list[str] = [f"{name} = {va_literal(v)};" for name, v in bounds]
    body.append("ts = ($abstime > t_strike) ? ($abstime - t_strike) : 0.0;")
    sources = []
    for k, (src, name) in enumerate(zip(_INPUT_SOURCES, _INPUT_NAMES, strict=True), 1):
        body.append(
            f"x{k} = 2.0 * ({src} - {name}_min) / ({name}_max - {name}_min) - 1.0;"
        )
        sources.append(f"x{k}")

    hidden_vars: list[str] = []
    last = len(m.weights)
    for layer, (w, b, tf) in enumerate(
        zip(m.weights, m.biases, m.transfers, strict=True), start=1
    ):
        if layer == last:
            expr, values = _affine(w[0], b[0], sources)
            body.append(f"y = {expr};")
            _record(constants, layer, 0, values)
            break
        outputs = []
        for j in range(w.shape[0]):
            net, act = f"n{layer}_{j + 1}", f"h{layer}_{j + 1}"
            expr, values = _affine(w[j], b[j], sources)
            body.append(f"{net} = {expr};")
            body.append(f"{act} = {_activation(tf, net)};")
            _record(constants, layer, j, values)
            hidden_vars += [net, act]
            outputs.append(act)
        sources = outputs
    body.append(
        "i_set = ($abstime >= t_strike) ? "
        "((y + 1.0) * (i_max - i_min) / 2.0 + i_min) : 0.0;"
    )
    body.append("I(p, n) <+ i_set;")
    constants["t_strike"] = float(t_strike)

    declared = [
        ", ".join(name for name, _ in bounds),
        "ts, x1, x2, x3",
        *(", ".join(hidden_vars[k : k + 8]) for k in range(0, len(hidden_vars), 8)),
        "y, i_set",
    ]
    lines = [
        f"// {module_name}: SET current source generated by setml",
        f"// layers {' '.join(str(d) for d in m.layer_dims)}, "
        f"transfer {' '.join(t.value for t in m.transfers)}",
        "`include \"disciplines.vams\"",
        "",
        f"module {module_name}(p, n);",
        "    inout p, n;",
        "    electrical p, n;",
        "",
        "    parameter real let_value = 20.0;",
        "    parameter real vd = 0.9;",
        f"    parameter real t_strike = {va_literal(t_strike)};",
        "",
        *(f"    real {names};" for names in declared),
        "",
        "    analog begin",
        *(f"        {stmt}" for stmt in body),
        "    end",
        "endmodule",
        "",
    ]
    module = VaModule(module_name, "\n".join(lines), constants)
    logger.debug(
        "Generated %s with %d embedded constants", module_name, len(constants)
    )
    return module


def evaluate_exported(
    v: VaModule, t: ArrayLike, let_value: ArrayLike, vd: ArrayLike
) -> float | NDArray[np.float64]:
    """Evaluate the emitted text at absolute time *t*; current in amperes."""
    program = parse_module(v.source_text)
    return program.run(t, {"let_value": let_value, "vd": vd})


def reference_current(
    m: MlpModel, t: ArrayLike, let_value: ArrayLike, vd: ArrayLike, t_strike: float
) -> float | NDArray[np.float64]:
    """In-memory counterpart of :func:`evaluate_exported`."""
    ta = np.asarray(t, dtype=np.float64)
    shifted = np.where(ta > t_strike, ta - t_strike, 0.0)
    current = predict_current(m, shifted, let_value, vd)
    gated = np.where(ta >= t_strike, current, 0.0)
    return float(gated) if gated.ndim == 0 else gated


def golden_check(
    m: MlpModel,
    v: VaModule,
    *,
    points: int = 1000,
    seed: int = 0,
    atol: float = 1e-9,
) -> float:
    """Compare evaluated text and model on random in-domain points.

    Returns the largest absolute difference; raises when it exceeds *atol*.
    """
    t_strike = v.constants["t_strike"]
    rng = np.random.default_rng(seed)
    lo, hi = np.array(m.norm.in_min), np.array(m.norm.in_max)
    x = rng.uniform(lo, hi, size=(points, 3))
    t = x[:, 0] + t_strike
    got = np.asarray(evaluate_exported(v, t, x[:, 1], x[:, 2]))
    want = np.asarray(reference_current(m, t, x[:, 1], x[:, 2], t_strike))
    worst = float(np.max(np.abs(got - want)))
    if worst > atol:
        raise CodegenError(
            f"Exported module {v.module_name!r} deviates from the model by "
            f"{worst:.3e} A (limit {atol:.1e} A)."
        )
    logger.info("Golden check of %s passed, max |error| %.3e A", v.module_name, worst)
    return worst
