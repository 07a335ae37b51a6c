"""Small transient circuit simulator for single-event strike experiments.

Level-1 MOSFETs, linear R and C, DC and piecewise-linear voltage sources and
a SET current source driven by either the surrogate pulse or a trained
network.
"""

from setml.spicelet.analysis import (
    ChargeBalance,
    StrikeSummary,
    let_sweep,
    struck_node_charge_balance,
    summarize_strike,
    write_summary_csv,
)
from setml.spicelet.devices import (
    GROUND,
    NMOS_DEFAULT,
    PMOS_DEFAULT,
    Capacitor,
    MlpCurrent,
    MosParams,
    MosType,
    Mosfet,
    OracleCurrent,
    Resistor,
    SetSource,
    VoltageSource,
    mosfet_current,
    mosfet_eval,
)
from setml.spicelet.netlist import (
    Netlist,
    build_inverter_chain,
    format_netlist,
    inject_set,
    parse_netlist,
)
from setml.spicelet.transient import TransientTrace, dc_operating_point, transient

__all__ = [
    "GROUND",
    "NMOS_DEFAULT",
    "PMOS_DEFAULT",
    "Capacitor",
    "ChargeBalance",
    "MlpCurrent",
    "MosParams",
    "MosType",
    "Mosfet",
    "Netlist",
    "OracleCurrent",
    "Resistor",
    "SetSource",
    "StrikeSummary",
    "TransientTrace",
    "VoltageSource",
    "build_inverter_chain",
    "dc_operating_point",
    "format_netlist",
    "inject_set",
    "let_sweep",
    "mosfet_current",
    "mosfet_eval",
    "parse_netlist",
    "struck_node_charge_balance",
    "summarize_strike",
    "transient",
    "write_summary_csv",
]
