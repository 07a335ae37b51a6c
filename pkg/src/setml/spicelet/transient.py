"""DC operating point and transient analysis.

Modified nodal analysis: one unknown per non-ground node plus one branch
current per voltage source.  Each time point is solved by Newton iteration
on the KCL residuals.  Capacitors use the trapezoidal companion model

    i_n = 2C/h * (v_n - v_{n-1}) - i_{n-1}

A time point whose Newton iteration fails is retried as two half steps,
recursively, down to ``dt / 64``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import IO

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from setml.errors import CircuitError, ConvergenceError
from setml.spicelet.devices import (
    GROUND,
    Capacitor,
    Mosfet,
    Resistor,
    SetSource,
    VoltageSource,
    mosfet_eval,
)
from setml.spicelet.netlist import Netlist

logger = logging.getLogger(__name__)

GMIN = 1e-12
"""Conductance from every node to ground, siemens."""

ABSTOL = 1e-9
"""KCL residual tolerance, amperes."""

VNTOL = 1e-6
"""Newton voltage step tolerance, volts."""

MAX_NEWTON = 50
MAX_VSTEP = 0.5
MAX_HALVINGS = 6


@dataclass(frozen=True, eq=False)
class TransientTrace:
    """Node voltages and SET source currents at every accepted time point."""

    t: NDArray[np.float64]
    nodes: tuple[str, ...]
    voltages: NDArray[np.float64]
    """Shape (len(t), len(nodes))."""
    sources: tuple[str, ...]
    set_currents: NDArray[np.float64]
    """Shape (len(t), len(sources))."""

    def __post_init__(self) -> None:
        for name in ("t", "voltages", "set_currents"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def voltage(self, node: str) -> NDArray[np.float64]:
        if node == GROUND:
            return np.zeros_like(self.t)
        try:
            return self.voltages[:, self.nodes.index(node)]
        except ValueError:
            raise CircuitError(f"Trace has no node {node!r}.") from None

    def set_current(self, source: str | None = None) -> NDArray[np.float64]:
        """Current of one SET source, or the sum of all when *source* is None."""
        if source is None:
            return self.set_currents.sum(axis=1)
        try:
            return self.set_currents[:, self.sources.index(source)]
        except ValueError:
            raise CircuitError(f"Trace has no SET source {source!r}.") from None

    def to_csv(self, sink: IO[str]) -> None:
        """Write ``t,<node>...,i_set`` rows."""
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(("t", *self.nodes, "i_set"))
        total = self.set_current()
        for k, t in enumerate(self.t):
            volts = (repr(float(v)) for v in self.voltages[k])
            writer.writerow((repr(float(t)), *volts, repr(float(total[k]))))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TransientTrace):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.sources == other.sources
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.voltages, other.voltages)
            and np.array_equal(self.set_currents, other.set_currents)
        )


class _Mna:
    """Equation assembly and Newton solver for one netlist."""

    def __init__(self, netlist: Netlist, gmin: float) -> None:
        netlist.lint()
        self.nodes = netlist.nodes
        self.index = {name: k for k, name in enumerate(self.nodes)}
        self.gmin = gmin
        self.resistors = netlist.of_type(Resistor)
        self.capacitors = netlist.of_type(Capacitor)
        self.mosfets = netlist.of_type(Mosfet)
        self.vsources = netlist.of_type(VoltageSource)
        self.set_sources = netlist.of_type(SetSource)
        self.n = len(self.nodes)
        self.size = self.n + len(self.vsources)
        self.cap_v = np.zeros(len(self.capacitors))
        self.cap_i = np.zeros(len(self.capacitors))
        self.bias: dict[str, float] = {}

    def at(self, node: str) -> int:
        return self.index.get(node, -1) if node != GROUND else -1

    @staticmethod
    def volt(x: NDArray[np.float64], k: int) -> float:
        return float(x[k]) if k >= 0 else 0.0

    def drain_bias(self, src: SetSource, x: NDArray[np.float64]) -> float:
        if src.vd_binding == "fixed":
            return self.bias[src.name]
        return self.volt(x, self.at(src.plus)) - self.volt(x, self.at(src.minus))

    def assemble(
        self, x: NDArray[np.float64], t: float, h: float | None, scale: float = 1.0
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Residual F(x) and Jacobian dF/dx; ``h=None`` means DC."""
        f = np.zeros(self.size)
        j = np.zeros((self.size, self.size))
        f[: self.n] += self.gmin * x[: self.n]
        j[np.arange(self.n), np.arange(self.n)] += self.gmin

        def branch(a: int, b: int, i: float, grads: list[tuple[int, float]]) -> None:
            # current i leaves node a and enters node b
            if a >= 0:
                f[a] += i
                for k, g in grads:
                    if k >= 0:
                        j[a, k] += g
            if b >= 0:
                f[b] -= i
                for k, g in grads:
                    if k >= 0:
                        j[b, k] -= g

        for r in self.resistors:
            a, b = self.at(r.a), self.at(r.b)
            g = 1.0 / r.resistance
            branch(a, b, g * (self.volt(x, a) - self.volt(x, b)), [(a, g), (b, -g)])

        if h is not None:
            for k, c in enumerate(self.capacitors):
                a, b = self.at(c.a), self.at(c.b)
                geq = 2.0 * c.capacitance / h
                v = self.volt(x, a) - self.volt(x, b)
                i = geq * (v - self.cap_v[k]) - self.cap_i[k]
                branch(a, b, i, [(a, geq), (b, -geq)])

        for m in self.mosfets:
            d, g_, s = self.at(m.drain), self.at(m.gate), self.at(m.source)
            vs = self.volt(x, s)
            vgs, vds = self.volt(x, g_) - vs, self.volt(x, d) - vs
            i, gm, gds = mosfet_eval(m.params, vgs, vds)
            branch(d, s, i, [(g_, gm), (d, gds), (s, -(gm + gds))])

        # the DC point is the pre-strike state
        for src in self.set_sources:
            if h is None or not src.enabled:
                continue
            a, b = self.at(src.plus), self.at(src.minus)
            if src.vd_binding == "fixed":
                branch(a, b, src.current(t, self.bias[src.name]), [])
            else:
                i, slope = src.current_and_slope(t, self.drain_bias(src, x))
                branch(a, b, i, [(a, slope), (b, -slope)])

        for k, vsrc in enumerate(self.vsources):
            row = self.n + k
            a, b = self.at(vsrc.plus), self.at(vsrc.minus)
            branch(a, b, float(x[row]), [(row, 1.0)])
            f[row] = self.volt(x, a) - self.volt(x, b) - scale * vsrc.value(t)
            if a >= 0:
                j[row, a] += 1.0
            if b >= 0:
                j[row, b] -= 1.0
        return f, j

    def newton(
        self, x0: NDArray[np.float64], t: float, h: float | None, scale: float = 1.0
    ) -> NDArray[np.float64] | None:
        """Solve one time point; None when the iteration does not converge."""
        x = x0.copy()
        for _ in range(MAX_NEWTON):
            f, j = self.assemble(x, t, h, scale)
            try:
                dx = scipy.linalg.solve(j, -f)
            except (np.linalg.LinAlgError, ValueError):
                return None
            if not np.isfinite(dx).all():
                return None
            step = float(np.max(np.abs(dx[: self.n]), initial=0.0))
            if step > MAX_VSTEP:
                dx *= MAX_VSTEP / step
            x += dx
            residual = float(np.max(np.abs(f[: self.n]), initial=0.0))
            if step < VNTOL and residual < ABSTOL:
                return x
        return None

    def dc_operating_point(self) -> NDArray[np.float64]:
        """Solve with capacitors open; ramp the sources when plain Newton fails."""
        x = self.newton(np.zeros(self.size), 0.0, None)
        if x is None:
            logger.warning("DC Newton failed; stepping sources")
            x = np.zeros(self.size)
            for scale in np.linspace(0.1, 1.0, 10):
                stepped = self.newton(x, 0.0, None, float(scale))
                if stepped is None:
                    raise ConvergenceError("No DC operating point", 0.0)
                x = stepped
        for k, c in enumerate(self.capacitors):
            self.cap_v[k] = self.volt(x, self.at(c.a)) - self.volt(x, self.at(c.b))
        for src in self.set_sources:
            if src.vd is not None:
                self.bias[src.name] = src.vd
            else:
                a, b = self.at(src.plus), self.at(src.minus)
                self.bias[src.name] = self.volt(x, a) - self.volt(x, b)
        return x

    def accept(self, x: NDArray[np.float64], h: float) -> None:
        """Advance the capacitor history to the accepted solution *x*."""
        for k, c in enumerate(self.capacitors):
            v = self.volt(x, self.at(c.a)) - self.volt(x, self.at(c.b))
            geq = 2.0 * c.capacitance / h
            self.cap_i[k] = geq * (v - self.cap_v[k]) - self.cap_i[k]
            self.cap_v[k] = v

    def set_currents(self, x: NDArray[np.float64], t: float) -> list[float]:
        return [src.current(t, self.drain_bias(src, x)) for src in self.set_sources]

    def advance(
        self,
        x: NDArray[np.float64],
        t0: float,
        t1: float,
        depth: int,
        out: list[tuple[float, NDArray[np.float64]]],
    ) -> NDArray[np.float64]:
        x1 = self.newton(x, t1, t1 - t0)
        if x1 is not None:
            self.accept(x1, t1 - t0)
            out.append((t1, x1))
            return x1
        if depth >= MAX_HALVINGS:
            raise ConvergenceError("Newton iteration did not converge", t1)
        mid = 0.5 * (t0 + t1)
        logger.warning(
            "Newton failed at t=%.4e s; halving the step to %.3e s", t1, t1 - mid
        )
        xm = self.advance(x, t0, mid, depth + 1, out)
        return self.advance(xm, mid, t1, depth + 1, out)


def dc_operating_point(netlist: Netlist, *, gmin: float = GMIN) -> dict[str, float]:
    """Node voltages of the DC solution at t = 0."""
    mna = _Mna(netlist, gmin)
    x = mna.dc_operating_point()
    return {node: float(x[k]) for k, node in enumerate(mna.nodes)}


def transient(
    n: Netlist, t_stop: float = 1e-9, dt: float = 1e-12, *, gmin: float = GMIN
) -> TransientTrace:
    """Integrate *n* from its DC operating point to *t_stop* in steps of *dt*."""
    if not (dt > 0 and t_stop >= dt):
        raise CircuitError(f"Need 0 < dt <= t_stop, got dt={dt}, t_stop={t_stop}.")
    mna = _Mna(n, gmin)
    x = mna.dc_operating_point()
    points: list[tuple[float, NDArray[np.float64]]] = [(0.0, x)]
    steps = int(round(t_stop / dt))
    t_prev = 0.0
    for k in range(1, steps + 1):
        t_next = t_stop if k == steps else k * dt
        x = mna.advance(x, t_prev, t_next, 0, points)
        t_prev = t_next

    times = np.array([t for t, _ in points])
    states = [s for _, s in points]
    trace = TransientTrace(
        t=times,
        nodes=mna.nodes,
        voltages=np.array([s[: mna.n] for s in states]).reshape(len(states), mna.n),
        sources=tuple(src.name for src in mna.set_sources),
        set_currents=np.array(
            [mna.set_currents(s, t) for t, s in points], dtype=np.float64
        ).reshape(len(points), len(mna.set_sources)),
    )
    logger.info(
        "Transient of %d nodes: %d time points to %.3e s",
        mna.n,
        len(times),
        t_stop,
    )
    return trace
