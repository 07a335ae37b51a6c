"""Circuit elements and the level-1 MOSFET equations.

Sign conventions
----------------
Two-terminal elements are connected ``a -> b`` (or ``plus -> minus``); a
positive current flows from the first node through the element into the
second.  MOSFET drain current is positive when it flows into the drain and
out of the source, which for a conducting PMOS means a negative value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Literal, Protocol

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from setml.mlp import MlpModel, predict_current
from setml.oracle import OracleParams, current_at

GROUND = "0"

VdBinding = Literal["live", "fixed"]

_VD_STEP = 1e-4


class MosType(StrEnum):
    NMOS = "nmos"
    PMOS = "pmos"


class MosParams(BaseModel):
    """Level-1 square-law parameters.  ``vth`` is negative for PMOS."""

    model_config = ConfigDict(frozen=True)

    mos_type: MosType
    vth: float
    kp: float = Field(gt=0)
    """Process transconductance kp' = mu * Cox, A/V^2."""
    w_over_l: float = Field(gt=0)
    lam: float = Field(default=0.0, ge=0)
    """Channel-length modulation, 1/V."""

    @property
    def polarity(self) -> float:
        return 1.0 if self.mos_type is MosType.NMOS else -1.0

    @property
    def beta(self) -> float:
        return self.kp * self.w_over_l


NMOS_DEFAULT = MosParams(
    mos_type=MosType.NMOS, vth=0.4, kp=250e-6, w_over_l=420 / 130, lam=0.05
)
PMOS_DEFAULT = MosParams(
    mos_type=MosType.PMOS, vth=-0.4, kp=100e-6, w_over_l=2 * 420 / 130, lam=0.05
)


def _square_law(
    beta: float, vov: float, vds: float, lam: float
) -> tuple[float, float, float]:
    """Return (id, gm, gds) for vds >= 0 in n-channel orientation."""
    if vov <= 0.0:
        return 0.0, 0.0, 0.0
    clm = 1.0 + lam * vds
    if vds < vov:
        core = vov * vds - 0.5 * vds * vds
        return (
            beta * core * clm,
            beta * vds * clm,
            beta * ((vov - vds) * clm + core * lam),
        )
    return 0.5 * beta * vov * vov * clm, beta * vov * clm, 0.5 * beta * vov * vov * lam


def mosfet_eval(p: MosParams, vgs: float, vds: float) -> tuple[float, float, float]:
    """Drain current and its derivatives ``(id, d id/d vgs, d id/d vds)``.

    Drain and source swap roles when the channel is reverse biased.
    """
    s = p.polarity
    vgs_n, vds_n, vth_n = s * vgs, s * vds, s * p.vth
    if vds_n >= 0.0:
        i, gm, gds = _square_law(p.beta, vgs_n - vth_n, vds_n, p.lam)
    else:
        # reversed channel: the terminal called drain acts as the source
        i_r, gm_r, gds_r = _square_law(p.beta, vgs_n - vds_n - vth_n, -vds_n, p.lam)
        i, gm, gds = -i_r, -gm_r, gm_r + gds_r
    return s * i, gm, gds


def mosfet_current(p: MosParams, vgs: float, vds: float) -> float:
    """Level-1 drain current in amperes."""
    return mosfet_eval(p, vgs, vds)[0]


# ---------------------------------------------------------------------------
# SET current models
# ---------------------------------------------------------------------------


class SetCurrentModel(Protocol):
    """Anything that maps (time since strike, LET, drain bias) to amperes."""

    def current(self, ts: float, let_value: float, vd: float) -> float: ...


@dataclass(frozen=True)
class OracleCurrent:
    """Double-exponential surrogate as a circuit current source."""

    params: OracleParams = field(default_factory=OracleParams)

    def current(self, ts: float, let_value: float, vd: float) -> float:
        vd = min(max(vd, 0.0), self.params.vdd_ref)
        return float(current_at(ts, let_value, vd, self.params))


@dataclass(frozen=True, eq=False)
class MlpCurrent:
    """Trained network as a circuit current source."""

    model: MlpModel
    path: Path | None = None
    """File the model was loaded from, needed to write the netlist back."""

    def current(self, ts: float, let_value: float, vd: float) -> float:
        return float(predict_current(self.model, ts, let_value, vd))


# ---------------------------------------------------------------------------
# Elements
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Resistor:
    name: str
    a: str
    b: str
    resistance: float

    @property
    def terminals(self) -> tuple[str, ...]:
        return (self.a, self.b)


@dataclass(frozen=True)
class Capacitor:
    name: str
    a: str
    b: str
    capacitance: float

    @property
    def terminals(self) -> tuple[str, ...]:
        return (self.a, self.b)


@dataclass(frozen=True)
class VoltageSource:
    """DC source, or piecewise linear when *pwl* holds (time, value) points."""

    name: str
    plus: str
    minus: str
    dc: float = 0.0
    pwl: tuple[tuple[float, float], ...] = ()

    @property
    def terminals(self) -> tuple[str, ...]:
        return (self.plus, self.minus)

    def value(self, t: float) -> float:
        if not self.pwl:
            return self.dc
        times, values = zip(*self.pwl, strict=True)
        return float(np.interp(t, times, values))


@dataclass(frozen=True)
class Mosfet:
    name: str
    drain: str
    gate: str
    source: str
    params: MosParams

    @property
    def terminals(self) -> tuple[str, ...]:
        return (self.drain, self.gate, self.source)


@dataclass(frozen=True)
class SetSource:
    """Strike current flowing from *plus* (struck drain) to *minus*.

    ``vd_binding="live"`` feeds the instantaneous ``v(plus) - v(minus)``,
    clipped to ``[0, vd_max]``, into the model; ``"fixed"`` uses *vd*, or the
    pre-strike operating point when *vd* is None.  A non-positive LET
    disables the source.
    """

    name: str
    plus: str
    minus: str
    model: SetCurrentModel
    let_value: float
    t_strike: float = 200e-12
    vd_binding: VdBinding = "live"
    vd: float | None = None
    vd_max: float = 1.8

    @property
    def terminals(self) -> tuple[str, ...]:
        return (self.plus, self.minus)

    @property
    def enabled(self) -> bool:
        return self.let_value > 0.0

    def current(self, t: float, vd: float) -> float:
        """Injected current at absolute time *t* for drain bias *vd*."""
        if not self.enabled or t < self.t_strike:
            return 0.0
        vd = min(max(vd, 0.0), self.vd_max)
        return self.model.current(t - self.t_strike, self.let_value, vd)

    def current_and_slope(self, t: float, vd: float) -> tuple[float, float]:
        """Current and central-difference ``d i / d vd`` at *vd*."""
        if not self.enabled or t < self.t_strike:
            return 0.0, 0.0
        i = self.current(t, vd)
        hi = self.current(t, vd + _VD_STEP)
        lo = self.current(t, vd - _VD_STEP)
        return i, (hi - lo) / (2.0 * _VD_STEP)


Device = Resistor | Capacitor | VoltageSource | Mosfet | SetSource
