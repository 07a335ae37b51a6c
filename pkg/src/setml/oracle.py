"""Double-exponential SET current surrogate standing in for TCAD data.

The collected charge grows linearly with LET and with drain bias through a
collection efficiency ``eta0 + eta1 * vd / vdd_ref``.  The pulse shape is

    i(t) = Q / (tau_fall - tau_rise) * (exp(-s / tau_fall) - exp(-s / tau_rise))

with ``s = t - t0`` and ``i = 0`` before the strike, so that the waveform
integrates to ``Q``.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator

from setml.dataset import Waveform
from setml.errors import OracleError

logger = logging.getLogger(__name__)

LET_RANGE = (4.0, 100.0)
"""LET sweep of the training data, MeV*cm^2/mg."""

VD_RANGE = (0.0, 1.8)
"""Drain bias sweep of the training data, volts."""

_FEMTO = 1e-15


class OracleParams(BaseModel):
    """Constants of the surrogate waveform generator."""

    model_config = ConfigDict(frozen=True)

    tau_rise: float = Field(default=10e-12, gt=0)
    """Rise time constant, seconds."""

    tau_fall: float = Field(default=200e-12, gt=0)
    """Fall time constant, seconds."""

    t0: float = 0.0
    """Strike onset, seconds."""

    charge_per_let: float = Field(default=10.8, gt=0)
    """Deposited charge in fC per micrometre per MeV*cm^2/mg (silicon)."""

    depth: float = Field(default=1.0, gt=0)
    """Charge collection depth, micrometres."""

    eta0: float = 0.3
    """Bias-independent collection efficiency."""

    eta1: float = 0.5
    """Collection efficiency gained at ``vd = vdd_ref``."""

    vdd_ref: float = Field(default=1.8, gt=0)
    """Reference supply voltage, volts."""

    @model_validator(mode="after")
    def _check_invariants(self) -> OracleParams:
        if not self.tau_fall > self.tau_rise:
            raise ValueError(
                f"tau_fall ({self.tau_fall}) must exceed tau_rise ({self.tau_rise})."
            )
        if not (0 < self.eta0 and self.eta0 + self.eta1 <= 1):
            raise ValueError(
                f"Collection efficiencies need 0 < eta0 and eta0 + eta1 <= 1, "
                f"got eta0={self.eta0}, eta1={self.eta1}."
            )
        return self


def collected_charge(let_value: float, vd: float, p: OracleParams) -> float:
    """Return the collected charge in coulombs for one strike."""
    if not let_value > 0:
        raise OracleError(f"LET must be positive, got {let_value}.")
    if not 0.0 <= vd <= p.vdd_ref:
        raise OracleError(
            f"Drain bias {vd} V is outside the swept range [0, {p.vdd_ref}] V."
        )
    efficiency = p.eta0 + p.eta1 * vd / p.vdd_ref
    return p.charge_per_let * let_value * p.depth * efficiency * _FEMTO


def peak_time(p: OracleParams) -> float:
    """Return the time of the current maximum (where di/dt = 0)."""
    tr, tf = p.tau_rise, p.tau_fall
    return p.t0 + tf * tr / (tf - tr) * math.log(tf / tr)


def current_at(
    t: ArrayLike, let_value: float, vd: float, p: OracleParams
) -> NDArray[np.float64]:
    """Evaluate the double-exponential current at arbitrary times."""
    if p.tau_fall == p.tau_rise:
        raise OracleError("tau_fall equals tau_rise; the pulse normaliser is 1/0.")
    q = collected_charge(let_value, vd, p)
    s = np.asarray(t, dtype=np.float64) - p.t0
    after = s >= 0.0
    s = np.where(after, s, 0.0)
    shape = np.exp(-s / p.tau_fall) - np.exp(-s / p.tau_rise)
    return np.where(after, q / (p.tau_fall - p.tau_rise) * shape, 0.0)


def generate_waveform(
    let_value: float, vd: float, grid: ArrayLike, p: OracleParams
) -> Waveform:
    """Sample the surrogate waveform for one (LET, drain bias) condition.

    *grid* must be strictly increasing and cover ``[t0, t0 + 5 tau_fall]``.
    """
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 1 or not np.all(np.diff(g) > 0):
        raise OracleError("Time grid must be one-dimensional and strictly increasing.")
    t_end = p.t0 + 5.0 * p.tau_fall
    if g[0] > p.t0 or g[-1] < t_end * (1.0 - 1e-12):
        raise OracleError(
            f"Time grid [{g[0]:.3e}, {g[-1]:.3e}] s must cover the pulse window "
            f"[{p.t0:.3e}, {t_end:.3e}] s."
        )
    return Waveform(let_value, vd, g, current_at(g, let_value, vd, p))


def _check_range(let_value: float, vd: float) -> str | None:
    lo, hi = LET_RANGE
    if not lo <= let_value <= hi:
        return f"LET {let_value} outside [{lo}, {hi}]"
    lo, hi = VD_RANGE
    if not lo <= vd <= hi:
        return f"vd {vd} outside [{lo}, {hi}]"
    return None


def generate_grid_dataset(
    let_values: Sequence[float],
    vd_values: Sequence[float],
    grid: ArrayLike,
    p: OracleParams,
) -> list[Waveform]:
    """Generate one waveform per (LET, vd) pair of the cartesian product.

    Order is LET-major, then drain bias, in the order given.
    """
    if not let_values or not vd_values:
        raise OracleError("LET and drain-bias value lists must be non-empty.")
    pairs = [(float(a), float(b)) for a in let_values for b in vd_values]
    bad = [(pair, why) for pair in pairs if (why := _check_range(*pair)) is not None]
    if bad:
        listing = "; ".join(f"(let={a}, vd={b}): {why}" for (a, b), why in bad)
        raise OracleError(f"Requested conditions out of range: {listing}.")
    waveforms = [generate_waveform(a, b, grid, p) for a, b in pairs]
    logger.info("Generated %d surrogate waveforms", len(waveforms))
    return waveforms


def default_let_values() -> list[float]:
    """LET grid 4, 8, ..., 100 MeV*cm^2/mg."""
    return [float(x) for x in range(4, 101, 4)]


def default_vd_values() -> list[float]:
    """Drain-bias grid 0, 0.2, ..., 1.8 V."""
    return [round(0.2 * k, 10) for k in range(10)]


def base_time_grid(t_stop: float, dt: float) -> NDArray[np.float64]:
    """Uniform grid ``0, dt, ..., t_stop`` built from integer multiples of dt."""
    if not (dt > 0 and t_stop > dt):
        raise OracleError(f"Need 0 < dt < t_stop, got dt={dt}, t_stop={t_stop}.")
    n = int(round(t_stop / dt))
    return np.arange(n + 1) * dt

