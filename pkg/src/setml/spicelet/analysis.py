"""Post-processing of strike transients: charge balance and LET sweeps."""

from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import IO

import numpy as np
from scipy.integrate import trapezoid

from setml.errors import CircuitError
from setml.metrics import detect_plateau, perturbation_depth
from setml.mlp import MlpModel
from setml.oracle import OracleParams
from setml.spicelet.devices import (
    Capacitor,
    MlpCurrent,
    Mosfet,
    OracleCurrent,
    Resistor,
    SetSource,
    VdBinding,
    mosfet_current,
)
from setml.spicelet.netlist import Netlist, inject_set
from setml.spicelet.transient import GMIN, TransientTrace, transient

logger = logging.getLogger(__name__)

SUMMARY_HEADER = (
    "let",
    "min_v",
    "depth",
    "crossed_half_vdd",
    "recovered",
    "plateau_ps",
)


@dataclass(frozen=True)
class ChargeBalance:
    """Charge bookkeeping at the struck node over a whole transient, coulombs.

    ``injected`` should equal ``capacitor_discharge + restoring``.
    """

    injected: float
    capacitor_discharge: float
    restoring: float

    @property
    def residual(self) -> float:
        return self.injected - self.capacitor_discharge - self.restoring

    @property
    def relative_error(self) -> float:
        return abs(self.residual) / abs(self.injected)


def struck_node_charge_balance(
    trace: TransientTrace, netlist: Netlist, source: str = "ISET"
) -> ChargeBalance:
    """Integrate KCL at the node a SET source discharges."""
    src = netlist.device(source)
    if not isinstance(src, SetSource):
        raise CircuitError(f"{source!r} is not a SET source.")
    node = src.plus
    v = trace.voltage(node)

    discharge = 0.0
    inflow = -GMIN * v
    for dev in netlist.devices:
        match dev:
            case Capacitor(a=a, b=b) if node in (a, b):
                other = trace.voltage(b if a == node else a)
                dv = (v[-1] - other[-1]) - (v[0] - other[0])
                discharge -= dev.capacitance * dv
            case Mosfet() if node in (dev.drain, dev.source):
                vs = trace.voltage(dev.source)
                vgs = trace.voltage(dev.gate) - vs
                vds = trace.voltage(dev.drain) - vs
                pairs = zip(vgs, vds, strict=True)
                i_d = np.array([mosfet_current(dev.params, g, d) for g, d in pairs])
                inflow = inflow - i_d if dev.drain == node else inflow + i_d
            case Resistor(a=a, b=b) if node in (a, b):
                i_r = (trace.voltage(a) - trace.voltage(b)) / dev.resistance
                inflow = inflow - i_r if a == node else inflow + i_r
    return ChargeBalance(
        injected=float(trapezoid(trace.set_current(source), trace.t)),
        capacitor_discharge=float(discharge),
        restoring=float(trapezoid(inflow, trace.t)),
    )


# ---------------------------------------------------------------------------
# LET sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StrikeSummary:
    """How far the struck output fell and whether it came back."""

    let_value: float
    min_v: float
    depth: float
    crossed_half_vdd: bool
    recovered: bool
    plateau_ps: float


def summarize_strike(
    let_value: float,
    trace: TransientTrace,
    *,
    vdd: float,
    node: str = "out1",
    source: str | None = None,
) -> StrikeSummary:
    """Summarise one transient; ``recovered`` means back above 90 % of vdd."""
    v = trace.voltage(node)
    plateau = detect_plateau(trace.t, trace.set_current(source))
    return StrikeSummary(
        let_value=let_value,
        min_v=float(np.min(v)),
        depth=perturbation_depth(trace, node, vdd),
        crossed_half_vdd=bool(np.min(v) < vdd / 2.0),
        recovered=bool(v[-1] >= 0.9 * vdd),
        plateau_ps=plateau.duration / 1e-12 if plateau is not None else 0.0,
    )


def let_sweep(
    base: Netlist,
    source: MlpModel | OracleParams | MlpCurrent | OracleCurrent,
    lets: Sequence[float],
    *,
    target: str = "MN1",
    t_strike: float = 200e-12,
    vd_binding: VdBinding = "live",
    vd_max: float = 1.8,
    t_stop: float = 1e-9,
    dt: float = 1e-12,
    workers: int = 1,
) -> list[TransientTrace]:
    """Run one strike transient per LET; traces come back in *lets* order."""
    drain = base.device(target).terminals[0]

    def run(let_value: float) -> TransientTrace:
        struck = inject_set(
            base,
            target,
            source,
            let_value=let_value,
            t_strike=t_strike,
            vd_binding=vd_binding,
            vd_max=vd_max,
        )
        trace = transient(struck, t_stop, dt)
        v_min = float(np.min(trace.voltage(drain)))
        logger.info("LET %g: min v(%s) = %.4f V", let_value, drain, v_min)
        return trace

    if workers <= 1:
        return [run(let) for let in lets]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(run, lets))


def write_summary_csv(rows: Iterable[StrikeSummary], sink: IO[str]) -> None:
    """Write ``let,min_v,depth,crossed_half_vdd,recovered,plateau_ps``."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(SUMMARY_HEADER)
    for r in rows:
        writer.writerow(
            (
                repr(r.let_value),
                repr(r.min_v),
                repr(r.depth),
                int(r.crossed_half_vdd),
                int(r.recovered),
                repr(r.plateau_ps),
            )
        )
