"""Tests for setml.metrics: peak, width, charge and plateau measurements."""

from __future__ import annotations

import numpy as np
import pytest
from pytest_mock import MockerFixture

from setml.errors import DatasetError
from setml.metrics import (
    collected_charge_of,
    detect_plateau,
    fit_quality,
    pulse_fwhm,
    pulse_peak,
)
from setml.mlp import MlpModel
from setml.oracle import (
    OracleParams,
    base_time_grid,
    collected_charge,
    generate_waveform,
)


def _triangle() -> tuple[np.ndarray, np.ndarray]:
    t = np.linspace(0.0, 4.0, 401)
    return t, np.clip(2.0 - np.abs(t - 2.0), 0.0, None)


def _flat_top(width_ps: float) -> tuple[np.ndarray, np.ndarray]:
    t = np.arange(0, 400) * 1e-12
    knots = [0.0, 10e-12, (10 + width_ps) * 1e-12, (20 + width_ps) * 1e-12, 399e-12]
    i = np.interp(t, knots, [0.0, 1e-3, 1e-3, 0.0, 0.0])
    return t, i


class TestPulseShape:
    """Peak, width and charge."""

    def test_peak(self) -> None:
        """The triangle peaks at t=2 with height 2."""
        assert pulse_peak(*_triangle()) == (2.0, 2.0)

    def test_fwhm_of_triangle(self) -> None:
        """A base-4 triangle is 2 wide at half height."""
        assert pulse_fwhm(*_triangle()) == pytest.approx(2.0)

    def test_fwhm_needs_both_crossings(self) -> None:
        """A pulse that never falls below half maximum has no width."""
        t = np.linspace(0.0, 1.0, 11)
        with pytest.raises(DatasetError, match="fall"):
            pulse_fwhm(t, t)

    def test_charge_of_surrogate(self) -> None:
        """Integrating the surrogate over 50 fall times recovers Q to 0.1 %."""
        p = OracleParams()
        w = generate_waveform(30.0, 0.8, base_time_grid(10e-9, 0.5e-12), p)
        assert collected_charge_of(w.t, w.i) == pytest.approx(
            collected_charge(30.0, 0.8, p), rel=1e-3
        )

    def test_mismatched_arrays(self) -> None:
        """Time and current arrays must have the same length."""
        with pytest.raises(DatasetError):
            pulse_peak([0.0, 1.0], [0.0])


class TestFitQuality:
    """Model-versus-reference pulse comparison."""

    def test_scaled_prediction(
        self, tiny_model: MlpModel, mocker: MockerFixture
    ) -> None:
        """A prediction at 90 % of the reference has 10 % peak error, same width."""
        ref = generate_waveform(40.0, 0.9, base_time_grid(1e-9, 1e-12), OracleParams())
        mocker.patch("setml.metrics.predict_current", return_value=0.9 * ref.i)
        q = fit_quality(tiny_model, ref)
        assert q.peak_rel_err == pytest.approx(0.1)
        assert q.fwhm_rel_err == pytest.approx(0.0, abs=1e-12)


class TestDetectPlateau:
    """Flat-top detection on injected currents."""

    def test_flat_top_found(self) -> None:
        """A 100 ps flat top is detected with roughly that length."""
        plateau = detect_plateau(*_flat_top(100.0))
        assert plateau is not None
        assert plateau.duration == pytest.approx(100e-12, abs=5e-12)

    def test_short_flat_top_ignored(self) -> None:
        """A 10 ps flat top is below the 20 ps minimum."""
        assert detect_plateau(*_flat_top(10.0)) is None

    def test_zero_current(self) -> None:
        """No current, no plateau."""
        t = np.arange(100) * 1e-12
        assert detect_plateau(t, np.zeros_like(t)) is None

    def test_sharp_spike_has_no_plateau(self) -> None:
        """A fast triangular spike is never flat."""
        t = np.arange(0, 200) * 1e-12
        i = np.clip(1e-3 - np.abs(t - 100e-12) * 1e-3 / 10e-12, 0.0, None)
        assert detect_plateau(t, i) is None
