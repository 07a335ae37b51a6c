"""Tests for setml.spicelet.analysis: charge bookkeeping and LET sweeps."""

from __future__ import annotations

import io

import numpy as np
import pytest

from setml.dataset import SetDataset, densify_adaptive, split_dataset, waveforms_to_rows
from setml.errors import CircuitError
from setml.mlp import MlpModel
from setml.oracle import (
    OracleParams,
    base_time_grid,
    default_let_values,
    default_vd_values,
    generate_grid_dataset,
)
from setml.spicelet import (
    Netlist,
    StrikeSummary,
    TransientTrace,
    build_inverter_chain,
    inject_set,
    let_sweep,
    struck_node_charge_balance,
    summarize_strike,
    transient,
    write_summary_csv,
)
from setml.spicelet.analysis import SUMMARY_HEADER
from setml.trainer import Architecture, TrainConfig, train_lm

VDD = 1.8
LETS = (5.0, 20.0, 40.0, 60.0, 80.0)


def _synthetic_trace(v_out: list[float], i_set: list[float]) -> TransientTrace:
    t = np.arange(len(v_out)) * 5e-12
    return TransientTrace(
        t=t,
        nodes=("out1",),
        voltages=np.array(v_out).reshape(-1, 1),
        sources=("ISET",),
        set_currents=np.array(i_set).reshape(-1, 1),
    )


class TestChargeBalance:
    """KCL integrated at the struck node."""

    def test_balances_within_one_percent(self, single_chain: Netlist) -> None:
        """Injected charge equals capacitor discharge plus restoring charge."""
        struck = inject_set(single_chain, "MN1", OracleParams(), let_value=20.0)
        trace = transient(struck, t_stop=1e-9, dt=1e-12)
        balance = struck_node_charge_balance(trace, struck)
        assert balance.injected > 0
        assert balance.relative_error < 1e-2

    def test_requires_set_source(self, single_chain: Netlist) -> None:
        trace = transient(single_chain, 5e-12, 1e-12)
        with pytest.raises(CircuitError, match="not a SET source"):
            struck_node_charge_balance(trace, single_chain, "MN1")


class TestSummarizeStrike:
    """Per-LET summary rows."""

    def test_dip_and_recovery(self) -> None:
        """Minimum, depth, the half-supply crossing and recovery are read off."""
        trace = _synthetic_trace([1.8, 0.5, 1.0, 1.75], [0.0] * 4)
        s = summarize_strike(40.0, trace, vdd=VDD)
        assert (s.min_v, s.crossed_half_vdd, s.recovered) == (0.5, True, True)
        assert s.depth == pytest.approx(1.3)
        assert s.plateau_ps == 0.0

    def test_not_recovered(self) -> None:
        """Ending below 90 % of vdd is not a recovery."""
        trace = _synthetic_trace([1.8, 1.2, 1.5, 1.6], [0.0] * 4)
        s = summarize_strike(20.0, trace, vdd=VDD)
        assert not s.crossed_half_vdd
        assert not s.recovered

    def test_plateau_measured_in_picoseconds(self) -> None:
        """A held current shows up as plateau_ps."""
        i = [0.0] + [1e-3] * 8 + [0.0]
        trace = _synthetic_trace([1.8] * 10, i)
        s = summarize_strike(40.0, trace, vdd=VDD)
        assert s.plateau_ps == pytest.approx(25.0)

    def test_csv(self) -> None:
        """Booleans are written as 0/1 and floats in repr form."""
        sink = io.StringIO()
        write_summary_csv([StrikeSummary(5.0, 1.5, 0.3, False, True, 0.0)], sink)
        assert sink.getvalue().splitlines() == [
            ",".join(SUMMARY_HEADER),
            "5.0,1.5,0.3,0,1,0.0",
        ]


class TestLetSweep:
    """One transient per LET."""

    def test_order_and_threads(self, single_chain: Netlist) -> None:
        """Traces follow the LET order whatever the worker count."""
        lets = [40.0, 10.0]
        kwargs = {"t_stop": 400e-12, "dt": 2e-12}
        serial = let_sweep(single_chain, OracleParams(), lets, **kwargs)
        threaded = let_sweep(single_chain, OracleParams(), lets, workers=2, **kwargs)
        assert serial == threaded
        depths = [float(VDD - np.min(tr.voltage("out1"))) for tr in serial]
        assert depths[0] > depths[1]

    def test_bad_target(self, single_chain: Netlist) -> None:
        with pytest.raises(CircuitError):
            let_sweep(single_chain, OracleParams(), [10.0], target="MP1")


# ---------------------------------------------------------------------------
# Full strike experiment
# ---------------------------------------------------------------------------


def _check_strike_response(traces: list[TransientTrace]) -> list[StrikeSummary]:
    summaries = [
        summarize_strike(let, tr, vdd=VDD) for let, tr in zip(LETS, traces, strict=True)
    ]
    for tr in traces:
        pre = tr.voltage("out1")[tr.t < 200e-12]
        assert np.max(np.abs(pre - VDD)) < 1e-6
    depths = [s.depth for s in summaries]
    assert all(b > a for a, b in zip(depths, depths[1:])), depths
    assert summaries[-1].crossed_half_vdd
    assert summaries[-1].recovered
    return summaries


@pytest.mark.slow
class TestInverterChainStrike:
    """Fan-out-five chain struck at MN1 over the LET ladder."""

    def test_oracle_source(self) -> None:
        """Deeper dips for higher LET, recovery, plateau and charge balance."""
        chain = build_inverter_chain(vdd=VDD, fanout=5)
        traces = let_sweep(chain, OracleParams(), LETS, workers=len(LETS))
        summaries = _check_strike_response(traces)
        assert summaries[-1].plateau_ps >= 20.0
        struck = inject_set(chain, "MN1", OracleParams(), let_value=LETS[-1])
        balance = struck_node_charge_balance(traces[-1], struck)
        assert balance.relative_error < 1e-2

    def test_trained_source_tracks_oracle(self, trained: MlpModel) -> None:
        """A trained network reproduces the surrogate's dips within 0.15 V."""
        chain = build_inverter_chain(vdd=VDD, fanout=5)
        model_traces = let_sweep(chain, trained, LETS, workers=len(LETS))
        _check_strike_response(model_traces)
        oracle_traces = let_sweep(chain, OracleParams(), LETS, workers=len(LETS))
        for let, m, o in zip(LETS, model_traces, oracle_traces, strict=True):
            dm = VDD - np.min(m.voltage("out1"))
            do = VDD - np.min(o.voltage("out1"))
            assert abs(dm - do) < 0.15, let


@pytest.fixture(scope="module")
def trained() -> MlpModel:
    waves = generate_grid_dataset(
        default_let_values(),
        default_vd_values(),
        base_time_grid(1e-9, 1e-12),
        OracleParams(),
    )
    rows = waveforms_to_rows(densify_adaptive(w, 1e-3) for w in waves)
    data: SetDataset = split_dataset(rows, seed=0)
    model, _ = train_lm(
        Architecture.parse("8x8x1"), data, TrainConfig(batch_size=4000)
    )
    return model
