"""Pulse measurements used to judge fitted models and circuit responses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import trapezoid

from setml.dataset import Waveform
from setml.errors import DatasetError
from setml.mlp import MlpModel, predict_current

if TYPE_CHECKING:
    from setml.spicelet.transient import TransientTrace

_PICO = 1e-12


def _pulse(
    t: ArrayLike, i: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    ta = np.asarray(t, dtype=np.float64)
    ia = np.asarray(i, dtype=np.float64)
    if ta.ndim != 1 or ta.shape != ia.shape or len(ta) < 2:
        raise DatasetError("Pulse needs matching 1-D time and current arrays.")
    return ta, ia


def pulse_peak(t: ArrayLike, i: ArrayLike) -> tuple[float, float]:
    """Return ``(time, current)`` of the largest sample."""
    ta, ia = _pulse(t, i)
    k = int(np.argmax(ia))
    return float(ta[k]), float(ia[k])


def pulse_fwhm(t: ArrayLike, i: ArrayLike) -> float:
    """Full width at half maximum, crossings located by linear interpolation."""
    ta, ia = _pulse(t, i)
    k = int(np.argmax(ia))
    half = ia[k] / 2.0
    if not half > 0:
        raise DatasetError("Pulse has no positive peak.")

    below = np.flatnonzero(ia[:k] < half)
    if len(below) == 0:
        raise DatasetError("Pulse does not rise through half maximum.")
    a = below[-1]
    t_rise = np.interp(half, ia[a : a + 2], ta[a : a + 2])

    below = np.flatnonzero(ia[k:] < half)
    if len(below) == 0:
        raise DatasetError("Pulse does not fall through half maximum.")
    b = k + below[0]
    # descending segment; np.interp needs increasing abscissae
    t_fall = np.interp(half, ia[b - 1 : b + 1][::-1], ta[b - 1 : b + 1][::-1])
    return float(t_fall - t_rise)


def collected_charge_of(t: ArrayLike, i: ArrayLike) -> float:
    """Trapezoidal integral of the current, coulombs."""
    ta, ia = _pulse(t, i)
    return float(trapezoid(ia, ta))


@dataclass(frozen=True)
class FitQuality:
    """Relative errors of a model against a reference pulse."""

    peak_rel_err: float
    fwhm_rel_err: float


def fit_quality(m: MlpModel, reference: Waveform) -> FitQuality:
    """Compare the model's pulse with *reference* on the reference time grid."""
    predicted = np.asarray(
        predict_current(m, reference.t, reference.let_value, reference.vd)
    )
    _, ref_peak = pulse_peak(reference.t, reference.i)
    _, got_peak = pulse_peak(reference.t, predicted)
    ref_width = pulse_fwhm(reference.t, reference.i)
    got_width = pulse_fwhm(reference.t, predicted)
    return FitQuality(
        peak_rel_err=abs(got_peak - ref_peak) / abs(ref_peak),
        fwhm_rel_err=abs(got_width - ref_width) / ref_width,
    )


def perturbation_depth(trace: TransientTrace, node: str, vdd: float) -> float:
    """Largest drop of *node* below the supply over the trace."""
    return float(vdd - np.min(trace.voltage(node)))


@dataclass(frozen=True)
class Plateau:
    t_start: float
    t_end: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


def detect_plateau(
    t: ArrayLike,
    i: ArrayLike,
    *,
    min_duration: float = 20e-12,
    slope_frac: float = 0.05,
    level_frac: float = 0.5,
) -> Plateau | None:
    """Find the longest flat stretch of a current pulse.

    A sample is flat when ``|di/dt|`` stays below ``slope_frac`` of the peak
    per picosecond and the current is at least ``level_frac`` of the peak.
    Returns None when no run of flat samples lasts *min_duration*.
    """
    ta, ia = _pulse(t, i)
    peak = float(np.max(ia))
    if not peak > 0:
        return None
    slope = np.gradient(ia, ta)
    flat = (np.abs(slope) < slope_frac * peak / _PICO) & (ia >= level_frac * peak)

    best: Plateau | None = None
    start: int | None = None
    for k, is_flat in enumerate([*flat.tolist(), False]):
        if is_flat and start is None:
            start = k
        elif not is_flat and start is not None:
            run = Plateau(float(ta[start]), float(ta[k - 1]))
            if best is None or run.duration > best.duration:
                best = run
            start = None
    if best is None or best.duration < min_duration:
        return None
    return best
