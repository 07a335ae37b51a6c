"""Tests for setml.trainer: LM update, training loop and architecture sweep."""

from __future__ import annotations

import io
import logging

import numpy as np
import pytest
from pytest_mock import MockerFixture

from setml.dataset import (
    NormParams,
    SetDataset,
    Split,
    densify_adaptive,
    split_dataset,
    waveforms_to_rows,
)
from setml.errors import DatasetError, ModelError
from setml.metrics import fit_quality
from setml.mlp import (
    MlpModel,
    Transfer,
    flatten_params,
    forward,
    jacobian,
    with_params,
    zero_model,
)
from setml.oracle import (
    OracleParams,
    base_time_grid,
    default_let_values,
    default_vd_values,
    generate_grid_dataset,
    generate_waveform,
)
from setml.trainer import (
    DEFAULT_SWEEP,
    SWEEP_HEADER,
    Architecture,
    StopReason,
    SweepRow,
    TrainConfig,
    architecture_sweep,
    format_sweep_table,
    lm_step,
    mse,
    ordering_violations,
    physical_rmse,
    train_lm,
    write_sweep_csv,
)

# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


HIDDEN_TRANSFERS = ("tansig", "logsig", "elliotsig")


def _scattered_inputs(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.column_stack(
        [np.linspace(-1.0, 1.0, n), rng.uniform(4, 100, n), rng.uniform(0, 1.8, n)]
    )


def _sin_dataset(n: int = 500) -> SetDataset:
    x = _scattered_inputs(n)
    rows = np.column_stack([x, np.sin(x[:, 0])])
    return split_dataset(rows, seed=0)


def _contradicting_dataset(n: int = 300) -> SetDataset:
    """Validation targets are the negated training function."""
    x = _scattered_inputs(n, seed=5)
    f = np.sin(3.0 * x[:, 0]) * np.cos(x[:, 1] / 30.0)
    k = np.arange(n)
    split = np.where(k % 5 == 0, Split.VALIDATION, np.where(k % 5 == 1, Split.TEST, 0))
    target = np.where(split == Split.VALIDATION, -f, f)
    return SetDataset(np.column_stack([x, target]), split, split_seed=0)


# ---------------------------------------------------------------------------
# Architecture
# ---------------------------------------------------------------------------


class TestArchitecture:
    """Layer-string parsing."""

    def test_parse_x_and_times(self) -> None:
        """Both separators give the same hidden sizes."""
        a = Architecture.parse("8x16x8x1")
        times = "\N{MULTIPLICATION SIGN}"
        b = Architecture.parse(f"8{times}16{times}8{times}1", "tansig")
        assert a == b
        assert a.layer_dims == (3, 8, 16, 8, 1)

    def test_output_layer_is_purelin(self) -> None:
        """Hidden layers take the chosen transfer, the output purelin."""
        arch = Architecture.parse("16x1", Transfer.LOGSIG)
        assert arch.transfers == (Transfer.LOGSIG, Transfer.PURELIN)
        assert arch.label == "16x1"

    @pytest.mark.parametrize("text", ["8x8x2", "8xx1", "0x1", "abc"])
    def test_rejects_bad_strings(self, text: str) -> None:
        """Sizes must be positive integers ending in 1."""
        with pytest.raises(ModelError):
            Architecture.parse(text)

    def test_unknown_transfer(self) -> None:
        """An unknown hidden transfer is a ModelError."""
        with pytest.raises(ModelError):
            Architecture.parse("8x1", "relu")

    def test_default_sweep_rows(self) -> None:
        """Three architectures times three hidden transfers."""
        assert len(DEFAULT_SWEEP) == 9
        assert {a.label for a in DEFAULT_SWEEP} == {"16x1", "8x8x1", "8x16x8x1"}


# ---------------------------------------------------------------------------
# Error measures and LM step
# ---------------------------------------------------------------------------


class TestMse:
    """Normalised mean squared error."""

    def test_zero_network_on_symmetric_targets(self) -> None:
        """A zero net on targets spanning [-1, 1] scores mean(target^2)."""
        rows = np.column_stack([_scattered_inputs(40), np.linspace(-1.0, 1.0, 40)])
        data = SetDataset(rows, np.zeros(40, dtype=np.int8), split_seed=0)
        m = zero_model((3, 2, 1), ("tansig", "purelin"), data.fit_norm())
        assert mse(m, data, Split.TRAIN) == pytest.approx(np.mean(rows[:, 3] ** 2))

    def test_physical_rmse_scales_by_half_range(self, tiny_model: MlpModel) -> None:
        """Output range 1 A: normalised MSE 0.04 is 0.1 A RMSE."""
        assert physical_rmse(tiny_model, 0.04) == pytest.approx(0.1)


class TestLmStep:
    """Damped Gauss-Newton update."""

    def _linear_problem(self) -> tuple[MlpModel, np.ndarray, np.ndarray]:
        norm = NormParams(
            in_min=(-1.0, -1.0, -1.0), in_max=(1.0, 1.0, 1.0), out_min=-1.0, out_max=1.0
        )
        m = zero_model((3, 1), ("purelin",), norm)
        x = np.random.default_rng(3).uniform(-1, 1, size=(50, 3))
        y = x @ np.array([1.0, -2.0, 0.5]) + 0.25 + 0.01 * np.sin(np.arange(50))
        return m, x, y

    def test_linear_problem_solved_in_one_step(self) -> None:
        """With mu -> 0 one step reaches the least-squares optimum."""
        m, x, y = self._linear_problem()
        j = jacobian(m, x)
        new = with_params(m, lm_step(m, j, y - forward(m, x), 1e-12))
        residual = y - np.asarray(forward(new, x))
        assert np.max(np.abs(j.T @ residual)) < 1e-8

    def test_large_mu_gives_tiny_step(self) -> None:
        """Heavy damping shrinks the update toward zero."""
        m, x, y = self._linear_problem()
        step = lm_step(m, jacobian(m, x), y - forward(m, x), 1e12)
        assert np.max(np.abs(step)) < 1e-9

    def test_large_mu_follows_gradient(self, tiny_norm: NormParams) -> None:
        """Heavy damping turns the step into gradient descent on the MSE."""
        rng = np.random.default_rng(4)
        m = zero_model((3, 4, 1), ("tansig", "purelin"), tiny_norm)
        m = with_params(m, rng.normal(size=m.param_count))
        x = rng.uniform(-1, 1, size=(40, 3))
        e = np.sin(x[:, 0]) - np.asarray(forward(m, x))
        j = jacobian(m, x)
        dw = lm_step(m, j, e, 1e8) - flatten_params(m)
        g = j.T @ e
        cosine = dw @ g / (np.linalg.norm(dw) * np.linalg.norm(g))
        assert cosine > 0.999

    def test_zero_jacobian_gives_zero_step(self) -> None:
        """J = 0 leaves the parameters unchanged."""
        m, x, y = self._linear_problem()
        j = np.zeros((len(x), m.param_count))
        new = lm_step(m, j, y - forward(m, x), 1.0)
        np.testing.assert_array_equal(new, flatten_params(m))


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


class TestTrainLm:
    """Levenberg-Marquardt training."""

    def test_accepted_steps_decrease_train_mse(self, small_dataset: SetDataset) -> None:
        """Every accepted step lowers the training MSE."""
        cfg = TrainConfig(max_epochs=15, val_patience=100)
        _, report = train_lm(Architecture.parse("8x8x1"), small_dataset, cfg)
        assert len(report.train_mse) == report.epochs + 1
        assert np.all(np.diff(report.train_mse) < 0)

    def test_returns_best_validation_model(self, small_dataset: SetDataset) -> None:
        """The returned model carries the lowest validation MSE seen."""
        cfg = TrainConfig(max_epochs=15, val_patience=100)
        model, report = train_lm(Architecture.parse("4x1"), small_dataset, cfg)
        assert report.final_val_mse == min(report.val_mse)
        assert report.val_mse[report.best_epoch] == report.final_val_mse
        assert mse(model, small_dataset, Split.VALIDATION) == report.final_val_mse

    def test_mu_history_bounded(self, small_dataset: SetDataset) -> None:
        """Damping stays within (0, mu_max]."""
        cfg = TrainConfig(max_epochs=10)
        _, report = train_lm(Architecture.parse("4x1"), small_dataset, cfg)
        assert all(0 < mu <= cfg.mu_max for mu in report.mu)

    def test_same_seed_same_model(self, small_dataset: SetDataset) -> None:
        """Training is deterministic for a fixed initialisation seed."""
        cfg = TrainConfig(max_epochs=5, init_seed=9)
        arch = Architecture.parse("4x4x1")
        a, _ = train_lm(arch, small_dataset, cfg)
        b, _ = train_lm(arch, small_dataset, cfg)
        assert a.same_as(b)

    def test_workers_do_not_change_result(self, small_dataset: SetDataset) -> None:
        """Threaded Jacobian blocks sum in fixed order."""
        arch = Architecture.parse("4x4x1")
        base = TrainConfig(max_epochs=4, block_rows=64)
        a, _ = train_lm(arch, small_dataset, base)
        b, _ = train_lm(arch, small_dataset, base.model_copy(update={"workers": 3}))
        assert a.same_as(b)

    def test_batch_subsample(self, small_dataset: SetDataset) -> None:
        """A fixed subsample trains and is reproducible."""
        cfg = TrainConfig(max_epochs=5, batch_size=100)
        arch = Architecture.parse("4x1")
        a, report = train_lm(arch, small_dataset, cfg)
        b, _ = train_lm(arch, small_dataset, cfg)
        assert report.epochs > 0
        assert a.same_as(b)

    def test_max_epochs_stop(self, small_dataset: SetDataset) -> None:
        """The epoch cap is reported as the stop reason."""
        cfg = TrainConfig(max_epochs=3, val_patience=100, grad_tol=0.0)
        _, report = train_lm(Architecture.parse("8x1"), small_dataset, cfg)
        assert report.stop_reason is StopReason.MAX_EPOCHS
        assert report.epochs == 3

    def test_val_patience_stop(self) -> None:
        """Validation error that keeps rising stops training early."""
        cfg = TrainConfig(max_epochs=200, val_patience=3, grad_tol=0.0)
        _, report = train_lm(Architecture.parse("8x8x1"), _contradicting_dataset(), cfg)
        assert report.stop_reason is StopReason.VAL_PATIENCE
        assert report.epochs < 200

    def test_empty_split_rejected(self, small_dataset: SetDataset) -> None:
        """All three splits must hold rows."""
        no_test = SetDataset(
            small_dataset.rows,
            np.where(small_dataset.split == Split.TEST, 0, small_dataset.split),
            split_seed=0,
        )
        with pytest.raises(DatasetError, match="test"):
            train_lm(Architecture.parse("4x1"), no_test, TrainConfig(max_epochs=1))

    def test_history_csv(self, small_dataset: SetDataset) -> None:
        """One header plus one row per history entry."""
        _, report = train_lm(
            Architecture.parse("4x1"), small_dataset, TrainConfig(max_epochs=3)
        )
        sink = io.StringIO()
        report.write_history_csv(sink)
        lines = sink.getvalue().splitlines()
        assert lines[0] == "epoch,train_mse,val_mse,mu"
        assert len(lines) == len(report.train_mse) + 1
        assert lines[1].startswith("0,")

    def test_sin_benchmark(self) -> None:
        """An 8x1 tansig net fits sin on [-1, 1] below 1e-5 within 200 epochs."""
        cfg = TrainConfig(max_epochs=200, val_patience=1000)
        _, report = train_lm(Architecture.parse("8x1"), _sin_dataset(), cfg)
        assert report.final_train_mse < 1e-5


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------


class TestArchitectureSweep:
    """Comparison table."""

    CONFIGS = (
        Architecture.parse("4x1", Transfer.TANSIG),
        Architecture.parse("4x1", Transfer.ELLIOTSIG),
        Architecture.parse("2x1", Transfer.LOGSIG),
    )

    def test_rows_in_input_order(self, small_dataset: SetDataset) -> None:
        """Without sorting the rows follow the configuration order."""
        cfg = TrainConfig(max_epochs=2)
        rows = architecture_sweep(small_dataset, self.CONFIGS, cfg)
        assert [(r.arch, r.transfer) for r in rows] == [
            ("4x1", Transfer.TANSIG),
            ("4x1", Transfer.ELLIOTSIG),
            ("2x1", Transfer.LOGSIG),
        ]

    def test_sorted_by_test_mse(self, small_dataset: SetDataset) -> None:
        """sort_by_mse orders rows by ascending test MSE."""
        rows = architecture_sweep(
            small_dataset, self.CONFIGS, TrainConfig(max_epochs=2), sort_by_mse=True
        )
        assert [r.test_mse for r in rows] == sorted(r.test_mse for r in rows)

    def test_parallel_matches_serial(self, small_dataset: SetDataset) -> None:
        """Concurrent rows equal serial rows."""
        cfg = TrainConfig(max_epochs=2)
        serial = architecture_sweep(small_dataset, self.CONFIGS, cfg)
        parallel = architecture_sweep(small_dataset, self.CONFIGS, cfg, workers=3)
        assert serial == parallel

    def test_empty_configs(self, small_dataset: SetDataset) -> None:
        """At least one architecture is required."""
        with pytest.raises(ModelError):
            architecture_sweep(small_dataset, [], TrainConfig())

    def test_csv_and_table(self, small_dataset: SetDataset) -> None:
        """CSV header and text table list every row."""
        rows = architecture_sweep(
            small_dataset, self.CONFIGS[:1], TrainConfig(max_epochs=1)
        )
        sink = io.StringIO()
        write_sweep_csv(rows, sink)
        lines = sink.getvalue().splitlines()
        assert lines[0] == ",".join(SWEEP_HEADER)
        assert lines[1].startswith("4x1,tansig,")
        table = format_sweep_table(rows).splitlines()
        assert table[0].split() == list(SWEEP_HEADER)
        assert table[1].split()[0] == "4x1"

    @staticmethod
    def _row(arch: str, tf: Transfer, test_mse: float) -> SweepRow:
        return SweepRow(
            arch=arch,
            transfer=tf,
            train_mse=test_mse,
            val_mse=test_mse,
            test_mse=test_mse,
            epochs=1,
            stop_reason=StopReason.MAX_EPOCHS,
        )

    def test_ordering_violations(self) -> None:
        """Inverted depth and transfer orderings are reported as pairs."""
        shallow = self._row("16x1", Transfer.TANSIG, 1e-6)
        deep = self._row("8x8x1", Transfer.TANSIG, 2e-6)
        logsig = self._row("8x8x1", Transfer.LOGSIG, 1e-6)
        elliot = self._row("8x8x1", Transfer.ELLIOTSIG, 5e-6)
        assert ordering_violations([shallow, deep, logsig, elliot]) == [
            (deep, shallow),
            (deep, logsig),
        ]

    def test_consistent_sweep_has_no_violations(self) -> None:
        rows = [
            self._row("16x1", Transfer.TANSIG, 3e-6),
            self._row("8x8x1", Transfer.TANSIG, 1e-6),
            self._row("8x8x1", Transfer.LOGSIG, 1e-6),
            self._row("16x1", Transfer.ELLIOTSIG, 1e-3),
        ]
        assert ordering_violations(rows) == []

    def test_inverted_sweep_logs_warning(
        self,
        small_dataset: SetDataset,
        mocker: MockerFixture,
        caplog: pytest.LogCaptureFixture,
    ) -> None:
        """architecture_sweep warns about every inverted pair."""
        mse_by_label = {"4x1": 1e-6, "4x4x1": 1e-5}

        def fake_train(
            arch: Architecture, data: SetDataset, cfg: TrainConfig
        ) -> tuple[None, object]:
            test_mse = mse_by_label[arch.label]
            report = mocker.Mock(
                arch=arch.label,
                transfer=arch.transfer,
                final_train_mse=test_mse,
                final_val_mse=test_mse,
                final_test_mse=test_mse,
                epochs=1,
                stop_reason=StopReason.MAX_EPOCHS,
            )
            return None, report

        mocker.patch("setml.trainer.train_lm", side_effect=fake_train)
        configs = [Architecture.parse("4x1"), Architecture.parse("4x4x1")]
        with caplog.at_level(logging.WARNING, logger="setml.trainer"):
            architecture_sweep(small_dataset, configs, TrainConfig())
        warnings = [r for r in caplog.records if r.levelno == logging.WARNING]
        assert len(warnings) == 1
        assert "4x1 tansig (test MSE 1.000e-06) beats 4x4x1" in warnings[0].getMessage()


# ---------------------------------------------------------------------------
# Long acceptance runs
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def full_dataset() -> SetDataset:
    p = OracleParams()
    waves = generate_grid_dataset(
        default_let_values(), default_vd_values(), base_time_grid(1e-9, 1e-12), p
    )
    rows = waveforms_to_rows(densify_adaptive(w, 1e-3) for w in waves)
    return split_dataset(rows, seed=0)


@pytest.mark.slow
class TestSurrogateAcceptance:
    """Architecture ordering and pulse fidelity on the default grid."""

    def test_depth_ordering(self, full_dataset: SetDataset) -> None:
        """Deeper tansig networks reach lower test MSE."""
        cfg = TrainConfig(batch_size=4000)
        rows = architecture_sweep(
            full_dataset,
            [Architecture.parse(s) for s in ("8x16x8x1", "8x8x1", "16x1")],
            cfg,
            workers=3,
        )
        deep, mid, shallow = (r.test_mse for r in rows)
        assert deep < mid < shallow

    def test_transfer_ordering(self, full_dataset: SetDataset) -> None:
        """At 8x8x1 tansig is no worse than logsig, and both beat elliotsig."""
        rows = architecture_sweep(
            full_dataset,
            [Architecture.parse("8x8x1", tf) for tf in HIDDEN_TRANSFERS],
            TrainConfig(batch_size=4000),
            workers=3,
        )
        tansig, logsig, elliotsig = (r.test_mse for r in rows)
        assert tansig <= logsig < elliotsig

    def test_pulse_peak_and_width(self, full_dataset: SetDataset) -> None:
        """Peak and FWHM of held-out pulses within 5 % of the surrogate."""
        model, _ = train_lm(
            Architecture.parse("8x8x1"), full_dataset, TrainConfig(batch_size=4000)
        )
        grid = base_time_grid(1e-9, 1e-12)
        for let_value in (5.0, 20.0, 40.0, 60.0, 80.0):
            for vd in (0.2, 0.4, 0.6, 0.8, 1.2):
                ref = generate_waveform(let_value, vd, grid, OracleParams())
                q = fit_quality(model, ref)
                assert q.peak_rel_err < 0.05, (let_value, vd)
                assert q.fwhm_rel_err < 0.05, (let_value, vd)
