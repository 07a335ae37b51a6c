"""Netlists: the container type, a small text format and the inverter chain.

Text format
-----------
One element per line; ``*`` starts a comment line and ``.end`` is optional.
The first letter of the element name selects its kind::

    .title two-stage inverter chain
    R<name> <a> <b> <ohms>
    C<name> <a> <b> <farads>
    V<name> <plus> <minus> <volts>
    V<name> <plus> <minus> pwl <t1> <v1> <t2> <v2> ...
    M<name> <drain> <gate> <source> nmos|pmos vth=<V> kp=<A/V^2> wl=<W/L> lambda=<1/V>
    I<name> <plus> <minus> set model=oracle|<model file> let=<LET> tstrike=<s>
            [binding=live|fixed] [vd=<V>] [vdmax=<V>]

Numbers take the usual SPICE scale suffixes (``f p n u m k meg g t``).
Node ``0`` is ground.  Names are case sensitive.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

from setml.errors import CircuitError, SetMlError
from setml.mlp import MlpModel, load_model
from setml.oracle import OracleParams
from setml.spicelet.devices import (
    GROUND,
    NMOS_DEFAULT,
    PMOS_DEFAULT,
    Capacitor,
    Device,
    MlpCurrent,
    MosParams,
    MosType,
    Mosfet,
    OracleCurrent,
    Resistor,
    SetSource,
    VdBinding,
    VoltageSource,
)

logger = logging.getLogger(__name__)

_SUFFIXES = {
    "f": 1e-15,
    "p": 1e-12,
    "n": 1e-9,
    "u": 1e-6,
    "m": 1e-3,
    "k": 1e3,
    "meg": 1e6,
    "g": 1e9,
    "t": 1e12,
}
_NUMBER = re.compile(
    r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)(meg|[fpnumkgt])?\Z", re.IGNORECASE
)


@dataclass(frozen=True)
class Netlist:
    """An ordered set of uniquely named devices; node ``0`` is ground."""

    devices: tuple[Device, ...]
    title: str = ""

    @property
    def nodes(self) -> tuple[str, ...]:
        """Non-ground nodes in order of first appearance."""
        seen: dict[str, None] = {}
        for dev in self.devices:
            for node in dev.terminals:
                if node != GROUND:
                    seen.setdefault(node)
        return tuple(seen)

    def device(self, name: str) -> Device:
        for dev in self.devices:
            if dev.name == name:
                return dev
        raise CircuitError(f"No device named {name!r} in the netlist.")

    def of_type[D](self, kind: type[D]) -> list[D]:
        return [dev for dev in self.devices if isinstance(dev, kind)]

    def with_device(self, dev: Device) -> Netlist:
        return replace(self, devices=(*self.devices, dev))

    def lint(self) -> None:
        """Raise :class:`CircuitError` unless the netlist is well formed.

        Names must be unique, ground must be used, there must be a voltage
        source and every other node needs at least two connections.
        """
        dupes = [n for n, c in Counter(d.name for d in self.devices).items() if c > 1]
        if dupes:
            raise CircuitError(f"Duplicate device names: {', '.join(sorted(dupes))}.")
        if not self.of_type(VoltageSource):
            raise CircuitError("Netlist has no voltage source.")
        uses = Counter(node for dev in self.devices for node in dev.terminals)
        if uses[GROUND] == 0:
            raise CircuitError("Netlist does not reference ground node '0'.")
        dangling = [n for n in self.nodes if uses[n] < 2]
        if dangling:
            raise CircuitError(
                f"Node(s) with a single connection: {', '.join(dangling)}."
            )


# ---------------------------------------------------------------------------
# Inverter chain experiment
# ---------------------------------------------------------------------------


def build_inverter_chain(
    vdd: float = 1.8,
    fanout: int = 5,
    load_cap: float = 5e-15,
    *,
    gate_cap: float = 1e-15,
    nmos: MosParams = NMOS_DEFAULT,
    pmos: MosParams = PMOS_DEFAULT,
) -> Netlist:
    """Stage-1 inverter driving *fanout* second-stage inverters.

    The input is tied low, so MN1 is off and ``out1`` sits at *vdd*.  Every
    output node carries *load_cap*; each fan-out inverter adds *gate_cap* at
    ``out1`` for its input.
    """
    if fanout < 1:
        raise CircuitError(f"Fan-out must be at least 1, got {fanout}.")
    devices: list[Device] = [
        VoltageSource("VDD", "vdd", GROUND, vdd),
        VoltageSource("VIN", "in", GROUND, 0.0),
        Mosfet("MP1", "out1", "in", "vdd", pmos),
        Mosfet("MN1", "out1", "in", GROUND, nmos),
        Capacitor("C1", "out1", GROUND, load_cap),
    ]
    for k in range(1, fanout + 1):
        out = f"out2_{k}"
        devices += [
            Mosfet(f"MP2_{k}", out, "out1", "vdd", pmos),
            Mosfet(f"MN2_{k}", out, "out1", GROUND, nmos),
            Capacitor(f"CG2_{k}", "out1", GROUND, gate_cap),
            Capacitor(f"C2_{k}", out, GROUND, load_cap),
        ]
    return Netlist(tuple(devices), title=f"inverter chain, fan-out {fanout}")


def inject_set(
    n: Netlist,
    target: str,
    source: MlpModel | OracleParams | MlpCurrent | OracleCurrent,
    *,
    let_value: float,
    t_strike: float = 200e-12,
    vd_binding: VdBinding = "live",
    vd: float | None = None,
    vd_max: float = 1.8,
    name: str = "ISET",
) -> Netlist:
    """Add a strike current source across the drain and source of *target*."""
    dev = n.device(target)
    if not isinstance(dev, Mosfet) or dev.params.mos_type is not MosType.NMOS:
        raise CircuitError(f"SET target {target!r} is not an NMOS transistor.")
    match source:
        case MlpModel():
            model: MlpCurrent | OracleCurrent = MlpCurrent(source)
        case OracleParams():
            model = OracleCurrent(source)
        case _:
            model = source
    strike = SetSource(
        name=name,
        plus=dev.drain,
        minus=dev.source,
        model=model,
        let_value=float(let_value),
        t_strike=t_strike,
        vd_binding=vd_binding,
        vd=vd,
        vd_max=vd_max,
    )
    logger.debug("Injecting SET at %s (LET %g, %s vd)", target, let_value, vd_binding)
    return n.with_device(strike)


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------


def parse_value(text: str) -> float:
    """Parse ``5f``, ``200p``, ``1.8`` or ``1e-12`` style numbers."""
    match = _NUMBER.match(text.strip())
    if match is None:
        raise CircuitError(f"Invalid number {text!r}.")
    number, suffix = match.groups()
    return float(number) * (_SUFFIXES[suffix.lower()] if suffix else 1.0)


def _options(fields: list[str], line_no: int) -> dict[str, str]:
    opts: dict[str, str] = {}
    for item in fields:
        key, sep, value = item.partition("=")
        if not sep or not value:
            raise CircuitError(f"Line {line_no}: expected key=value, got {item!r}.")
        opts[key.lower()] = value
    return opts


def _parse_mosfet(name: str, fields: list[str], line_no: int) -> Mosfet:
    if len(fields) < 4:
        raise CircuitError(f"Line {line_no}: MOSFET needs drain gate source type.")
    drain, gate, source, kind = fields[:4]
    base = {"nmos": NMOS_DEFAULT, "pmos": PMOS_DEFAULT}.get(kind.lower())
    if base is None:
        raise CircuitError(f"Line {line_no}: unknown MOSFET type {kind!r}.")
    opts = _options(fields[4:], line_no)
    keys = {"vth": "vth", "kp": "kp", "wl": "w_over_l", "lambda": "lam"}
    unknown = set(opts) - set(keys)
    if unknown:
        raise CircuitError(
            f"Line {line_no}: unknown MOSFET option(s) {sorted(unknown)}."
        )
    update = {keys[k]: parse_value(v) for k, v in opts.items()}
    params = MosParams.model_validate({**base.model_dump(), **update})
    return Mosfet(name, drain, gate, source, params)


def _parse_set(
    name: str, fields: list[str], line_no: int, base_dir: Path | None
) -> SetSource:
    if len(fields) < 3 or fields[2].lower() != "set":
        raise CircuitError(f"Line {line_no}: expected 'I<name> plus minus set ...'.")
    opts = _options(fields[3:], line_no)
    for key in ("model", "let"):
        if key not in opts:
            raise CircuitError(f"Line {line_no}: SET source needs {key}=.")
    if opts["model"].lower() == "oracle":
        model: MlpCurrent | OracleCurrent = OracleCurrent()
    else:
        path = Path(opts["model"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        model = MlpCurrent(load_model(path), path)
    binding = opts.get("binding", "live").lower()
    if binding not in ("live", "fixed"):
        raise CircuitError(f"Line {line_no}: binding must be live or fixed.")
    return SetSource(
        name=name,
        plus=fields[0],
        minus=fields[1],
        model=model,
        let_value=parse_value(opts["let"]),
        t_strike=parse_value(opts.get("tstrike", "200p")),
        vd_binding="live" if binding == "live" else "fixed",
        vd=parse_value(opts["vd"]) if "vd" in opts else None,
        vd_max=parse_value(opts.get("vdmax", "1.8")),
    )


def _parse_line(fields: list[str], line_no: int, base_dir: Path | None) -> Device:
    name, rest = fields[0], fields[1:]
    kind = name[0].upper()
    if kind in "RCV" and len(rest) < 3:
        raise CircuitError(f"Line {line_no}: {name} needs two nodes and a value.")
    match kind:
        case "R":
            return Resistor(name, rest[0], rest[1], parse_value(rest[2]))
        case "C":
            return Capacitor(name, rest[0], rest[1], parse_value(rest[2]))
        case "V" if rest[2].lower() == "pwl":
            values = [parse_value(v) for v in rest[3:]]
            if len(values) < 2 or len(values) % 2:
                raise CircuitError(f"Line {line_no}: pwl needs time/value pairs.")
            points = tuple(zip(values[::2], values[1::2], strict=True))
            if any(b[0] <= a[0] for a, b in zip(points, points[1:])):
                raise CircuitError(f"Line {line_no}: pwl times must increase.")
            return VoltageSource(name, rest[0], rest[1], points[0][1], points)
        case "V":
            return VoltageSource(name, rest[0], rest[1], parse_value(rest[2]))
        case "M":
            return _parse_mosfet(name, rest, line_no)
        case "I":
            return _parse_set(name, rest, line_no, base_dir)
    raise CircuitError(f"Line {line_no}: unknown element {name!r}.")


def parse_netlist(text: str, *, base_dir: Path | None = None) -> Netlist:
    """Parse the text format; relative model paths resolve against *base_dir*."""
    title = ""
    devices: list[Device] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("*"):
            continue
        if line.lower().startswith(".title"):
            title = line[len(".title") :].strip()
            continue
        if line.lower() == ".end":
            break
        try:
            devices.append(_parse_line(line.split(), line_no, base_dir))
        except CircuitError:
            raise
        except (SetMlError, ValueError) as exc:
            raise CircuitError(f"Line {line_no}: {exc}") from exc
    netlist = Netlist(tuple(devices), title)
    netlist.lint()
    return netlist


def _format_device(dev: Device) -> str:
    match dev:
        case Resistor():
            return f"{dev.name} {dev.a} {dev.b} {dev.resistance!r}"
        case Capacitor():
            return f"{dev.name} {dev.a} {dev.b} {dev.capacitance!r}"
        case VoltageSource(pwl=()):
            return f"{dev.name} {dev.plus} {dev.minus} {dev.dc!r}"
        case VoltageSource():
            points = " ".join(f"{t!r} {v!r}" for t, v in dev.pwl)
            return f"{dev.name} {dev.plus} {dev.minus} pwl {points}"
        case Mosfet():
            p = dev.params
            return (
                f"{dev.name} {dev.drain} {dev.gate} {dev.source} {p.mos_type.value} "
                f"vth={p.vth!r} kp={p.kp!r} wl={p.w_over_l!r} lambda={p.lam!r}"
            )
        case SetSource():
            return _format_set(dev)
    raise CircuitError(f"Cannot format device {dev!r}.")


def _format_set(dev: SetSource) -> str:
    match dev.model:
        case OracleCurrent(params=params) if params == OracleParams():
            model = "oracle"
        case MlpCurrent(path=Path() as path):
            model = str(path)
        case _:
            raise CircuitError(
                f"{dev.name}: only the default oracle or a model loaded from a "
                "file can be written as text."
            )
    text = (
        f"{dev.name} {dev.plus} {dev.minus} set model={model} "
        f"let={dev.let_value!r} tstrike={dev.t_strike!r} binding={dev.vd_binding}"
    )
    if dev.vd is not None:
        text += f" vd={dev.vd!r}"
    return text + f" vdmax={dev.vd_max!r}"


def format_netlist(n: Netlist) -> str:
    """Write *n* in the text format; :func:`parse_netlist` reads it back."""
    lines = [f".title {n.title}"] if n.title else []
    lines += [_format_device(dev) for dev in n.devices]
    lines.append(".end")
    return "\n".join(lines) + "\n"
