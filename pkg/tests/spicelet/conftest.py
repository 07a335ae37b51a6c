"""Shared fixtures for the spicelet test sub-package.

Circuits here are small enough to integrate in well under a second, so the
strike tests use a fan-out of one unless the fan-out itself is under test.
"""

from __future__ import annotations

import pytest

from setml.spicelet import Netlist, build_inverter_chain, parse_netlist

RC_NETLIST = """\
.title rc step
V1 in 0 pwl 0 0 1p 1
R1 in out 1k
C1 out 0 1p
.end
"""


@pytest.fixture
def rc_netlist() -> Netlist:
    """1 kOhm / 1 pF low-pass driven by a 1 V step at t = 1 ps."""
    return parse_netlist(RC_NETLIST)


@pytest.fixture
def single_chain() -> Netlist:
    return build_inverter_chain(vdd=1.8, fanout=1)
