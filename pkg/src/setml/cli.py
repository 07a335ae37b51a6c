"""CLI entry point for ``setml``.

Subcommands
-----------
``setml generate``  - surrogate waveforms -> densified, split dataset CSV
                      plus a JSON manifest (``--manifest`` replays one).
``setml train``     - train one architecture with Levenberg-Marquardt;
                      writes the model file and the training report.
``setml sweep``     - train the architecture grid and tabulate the MSEs.
``setml export``    - write the model as a Verilog-A module and check the
                      emitted text against the model on random points.
``setml simulate``  - strike the inverter chain for a list of LETs and write
                      one trace CSV per LET plus a summary CSV.
``setml pipeline``  - generate, train, export and simulate in one go.

Common options (``--config FILE``, ``--output-dir``, ``-v``) go before the
subcommand.  Defaults come from :class:`setml.settings.Settings`.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections.abc import Sequence
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from setml.dataset import (
    SetDataset,
    densify_adaptive,
    read_dataset_csv,
    split_dataset,
    waveforms_to_rows,
    write_dataset_csv,
)
from setml.errors import ConfigError, SetMlError
from setml.mlp import MlpModel, Transfer, load_model, predict, save_model
from setml.oracle import (
    OracleParams,
    base_time_grid,
    default_let_values,
    default_vd_values,
    generate_grid_dataset,
)
from setml.settings import Settings, get_settings, load_settings
from setml.spicelet import (
    build_inverter_chain,
    let_sweep,
    parse_netlist,
    summarize_strike,
    write_summary_csv,
)
from setml.trainer import (
    DEFAULT_SWEEP,
    Architecture,
    TrainConfig,
    architecture_sweep,
    format_sweep_table,
    train_lm,
    write_sweep_csv,
)
from setml.vacodegen import DEFAULT_MODULE_NAME, export_verilog_a, golden_check

logger = logging.getLogger(__name__)

DEFAULT_ARCH = "8x8x1"

# ── Run configuration ───────────────────────────────────────────────────────


class GenerateManifest(BaseModel):
    """Everything needed to regenerate a dataset CSV byte for byte."""

    model_config = ConfigDict(frozen=True)

    seed: int = 0
    let_values: list[float] = Field(default_factory=default_let_values)
    vd_values: list[float] = Field(default_factory=default_vd_values)
    t_stop: float = 1e-9
    dt: float = 1e-12
    densify: bool = True
    max_rel_err: float = 1e-3
    oracle: OracleParams = Field(default_factory=OracleParams)


class RunConfig(BaseModel):
    """Resolved options of one subcommand invocation."""

    model_config = ConfigDict(frozen=True)

    command: str
    output_dir: Path
    inputs: tuple[Path, ...] = ()
    """Files that must exist before any work starts."""
    seed: int = 0
    train: TrainConfig = Field(default_factory=TrainConfig)

    def validate_paths(self) -> None:
        """Fail fast on missing inputs or an unwritable output directory."""
        for path in self.inputs:
            if not path.is_file():
                raise ConfigError(f"Input file not found: {path}")
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(
                f"Cannot create output directory {self.output_dir}: {exc}"
            ) from exc
        if not os.access(self.output_dir, os.W_OK):
            raise ConfigError(f"Output directory {self.output_dir} is not writable.")


def _run_config(
    args: argparse.Namespace, settings: Settings, inputs: Sequence[Path] = ()
) -> RunConfig:
    seed = args.seed if getattr(args, "seed", None) is not None else settings.seed
    train = TrainConfig(
        max_epochs=_pick(args, "max_epochs", settings.max_epochs),
        init_seed=seed,
        batch_size=_pick(args, "batch_size", settings.batch_size),
        workers=_pick(args, "workers", settings.workers),
    )
    cfg = RunConfig(
        command=args.command,
        output_dir=args.output_dir or settings.output_dir,
        inputs=tuple(inputs),
        seed=seed,
        train=train,
    )
    cfg.validate_paths()
    return cfg


def _pick[T](args: argparse.Namespace, name: str, default: T) -> T:
    value = getattr(args, name, None)
    return default if value is None else value


# ── Helpers ─────────────────────────────────────────────────────────────────


def _architecture(text: str) -> str:
    """argparse type: validate an ``8x8x1`` style layer string."""
    try:
        Architecture.parse(text)
    except SetMlError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    return text


def _float_list(text: str) -> list[float]:
    """argparse type: ``5,20,40`` -> [5.0, 20.0, 40.0]."""
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated numbers, got {text!r}"
        ) from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one number")
    return values


def _let_tag(let_value: float) -> str:
    return f"{let_value:g}".replace(".", "p")


def build_dataset(manifest: GenerateManifest) -> SetDataset:
    """Oracle grid, optional densification and the seeded split."""
    grid = base_time_grid(manifest.t_stop, manifest.dt)
    waveforms = generate_grid_dataset(
        manifest.let_values, manifest.vd_values, grid, manifest.oracle
    )
    if manifest.densify:
        waveforms = [densify_adaptive(w, manifest.max_rel_err) for w in waveforms]
    return split_dataset(waveforms_to_rows(waveforms), manifest.seed)


def load_dataset(data_path: Path) -> SetDataset:
    """Read a dataset CSV, taking its split seed from the sibling manifest."""
    manifest_path = data_path.with_suffix(".manifest.json")
    split_seed = None
    if manifest_path.is_file():
        split_seed = GenerateManifest.model_validate_json(
            manifest_path.read_text(encoding="utf-8")
        ).seed
    with data_path.open(encoding="utf-8") as fh:
        return read_dataset_csv(fh, split_seed)


# ── Subcommands ─────────────────────────────────────────────────────────────


def _generate(cfg: RunConfig, manifest: GenerateManifest, out: Path) -> Path:
    data = build_dataset(manifest)
    with out.open("w", newline="", encoding="utf-8") as fh:
        write_dataset_csv(data, fh)
    manifest_path = out.with_suffix(".manifest.json")
    manifest_path.write_text(
        manifest.model_dump_json(indent=2) + "\n", encoding="utf-8"
    )
    counts = data.counts()
    print(
        f"✓ {len(data.rows)} rows "
        f"({' / '.join(str(n) for n in counts.values())} train/val/test) -> {out}"
    )
    logger.info("Manifest written to %s", manifest_path)
    return out


def _run_generate(args: argparse.Namespace, settings: Settings) -> None:
    """Handle ``setml generate``."""
    if args.manifest is not None:
        cfg = _run_config(args, settings, [args.manifest])
        manifest = GenerateManifest.model_validate_json(
            args.manifest.read_text(encoding="utf-8")
        )
    else:
        cfg = _run_config(args, settings)
        oracle = OracleParams(
            **{
                k: v
                for k, v in (("tau_rise", args.tau_rise), ("tau_fall", args.tau_fall))
                if v is not None
            }
        )
        manifest = GenerateManifest(
            seed=cfg.seed,
            let_values=args.let or default_let_values(),
            vd_values=args.vd or default_vd_values(),
            t_stop=settings.t_stop_data,
            dt=settings.dt_data,
            densify=not args.no_densify,
            max_rel_err=args.max_rel_err or settings.max_rel_err,
            oracle=oracle,
        )
    _generate(cfg, manifest, args.out or cfg.output_dir / "dataset.csv")


def _train(
    cfg: RunConfig, data_path: Path, arch: Architecture, model_out: Path
) -> Path:
    data = load_dataset(data_path)
    model, report = train_lm(arch, data, cfg.train)
    save_model(model, model_out)
    history = cfg.output_dir / "train_report.csv"
    with history.open("w", newline="", encoding="utf-8") as fh:
        report.write_history_csv(fh)
    (cfg.output_dir / "train_report.json").write_text(
        report.model_dump_json(indent=2) + "\n", encoding="utf-8"
    )
    print(
        f"✓ {arch.label} {arch.transfer.value}: {report.epochs} epochs "
        f"({report.stop_reason.value}), test MSE {report.final_test_mse:.4e}, "
        f"test RMSE {report.test_rmse:.4e} A -> {model_out}"
    )
    return model_out


def _run_train(args: argparse.Namespace, settings: Settings) -> None:
    """Handle ``setml train``."""
    out_dir = args.output_dir or settings.output_dir
    data_path = args.data or out_dir / "dataset.csv"
    cfg = _run_config(args, settings, [data_path])
    arch = Architecture.parse(args.arch, args.transfer)
    _train(cfg, data_path, arch, args.model_out or cfg.output_dir / "model.txt")


def _run_sweep(args: argparse.Namespace, settings: Settings) -> None:
    """Handle ``setml sweep``."""
    out_dir = args.output_dir or settings.output_dir
    data_path = args.data or out_dir / "dataset.csv"
    cfg = _run_config(args, settings, [data_path])
    if args.arch:
        configs = [
            Architecture.parse(a, tf) for a in args.arch for tf in args.transfer
        ]
    else:
        configs = list(DEFAULT_SWEEP)
    data = load_dataset(data_path)
    rows = architecture_sweep(
        data,
        configs,
        cfg.train.model_copy(update={"workers": 1}),
        workers=cfg.train.workers,
        sort_by_mse=args.sort,
    )
    out = cfg.output_dir / "sweep.csv"
    with out.open("w", newline="", encoding="utf-8") as fh:
        write_sweep_csv(rows, fh)
    print(format_sweep_table(rows))
    print(f"✓ {len(rows)} architecture(s) -> {out}")


def _export(
    cfg: RunConfig, model_path: Path, name: str, t_strike: float, points: int
) -> Path:
    model = load_model(model_path)
    module = export_verilog_a(model, name, t_strike)
    worst = golden_check(model, module, points=points, seed=cfg.seed)
    path = module.write(cfg.output_dir)
    print(f"✓ {path} (golden check on {points} points, max |error| {worst:.2e} A)")
    return path


def _run_export(args: argparse.Namespace, settings: Settings) -> None:
    """Handle ``setml export``."""
    out_dir = args.output_dir or settings.output_dir
    model_path = args.model or out_dir / "model.txt"
    cfg = _run_config(args, settings, [model_path])
    t_strike = args.t_strike if args.t_strike is not None else settings.t_strike
    _export(cfg, model_path, args.name, t_strike, args.check_points)


def _simulate(
    cfg: RunConfig,
    args: argparse.Namespace,
    settings: Settings,
    model_path: Path | None,
) -> Path:
    source = load_model(model_path) if model_path is not None else OracleParams()
    lets = args.lets or settings.lets
    if isinstance(source, MlpModel):
        # logs once when the LET sweep or supply leaves the training ranges
        predict(source, source.norm.in_min[0], lets, args.vdd)
    if args.netlist is not None:
        netlist = parse_netlist(
            args.netlist.read_text(encoding="utf-8"), base_dir=args.netlist.parent
        )
    else:
        netlist = build_inverter_chain(args.vdd, _pick(args, "fanout", settings.fanout))
    traces = let_sweep(
        netlist,
        source,
        lets,
        target=args.target,
        t_strike=args.t_strike if args.t_strike is not None else settings.t_strike,
        vd_binding=args.binding or settings.vd_binding,
        vd_max=args.vdd,
        t_stop=args.t_stop or settings.sim_t_stop,
        dt=args.dt or settings.sim_dt,
        workers=cfg.train.workers,
    )
    summaries = []
    for let_value, trace in zip(lets, traces, strict=True):
        path = cfg.output_dir / f"trace_let{_let_tag(let_value)}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            trace.to_csv(fh)
        summaries.append(
            summarize_strike(let_value, trace, vdd=args.vdd, node=args.node)
        )
        logger.info("Trace written to %s", path)
    summary_path = cfg.output_dir / "strike_summary.csv"
    with summary_path.open("w", newline="", encoding="utf-8") as fh:
        write_summary_csv(summaries, fh)
    for s in summaries:
        print(
            f"  LET {s.let_value:g}: min {s.min_v:.3f} V, depth {s.depth:.3f} V, "
            f"plateau {s.plateau_ps:.0f} ps"
        )
    print(f"✓ {len(traces)} trace(s) -> {cfg.output_dir}")
    return summary_path


def _run_simulate(args: argparse.Namespace, settings: Settings) -> None:
    """Handle ``setml simulate``."""
    inputs = [p for p in (args.model, args.netlist) if p is not None]
    cfg = _run_config(args, settings, inputs)
    _simulate(cfg, args, settings, args.model)


def _run_pipeline(args: argparse.Namespace, settings: Settings) -> None:
    """Handle ``setml pipeline``: generate -> train -> export -> simulate."""
    cfg = _run_config(args, settings)
    manifest = GenerateManifest(
        seed=cfg.seed,
        t_stop=settings.t_stop_data,
        dt=settings.dt_data,
        max_rel_err=settings.max_rel_err,
    )
    data_path = _generate(cfg, manifest, cfg.output_dir / "dataset.csv")
    arch = Architecture.parse(args.arch, args.transfer)
    model_path = _train(cfg, data_path, arch, cfg.output_dir / "model.txt")
    t_strike = args.t_strike if args.t_strike is not None else settings.t_strike
    _export(cfg, model_path, DEFAULT_MODULE_NAME, t_strike, 1000)
    _simulate(cfg, args, settings, model_path)


# ── Argument parser ─────────────────────────────────────────────────────────


def _add_train_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, help="Dataset CSV (default: OUT/dataset.csv).")
    p.add_argument("--seed", type=int, help="Weight initialisation seed.")
    p.add_argument("--max-epochs", type=int, help="LM epoch cap (default 1000).")
    p.add_argument(
        "--batch-size",
        type=int,
        help="Train on a fixed random subsample of this many rows.",
    )
    p.add_argument("--workers", type=int, help="Worker threads.")


def _add_simulate_options(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--lets",
        type=_float_list,
        help="Comma-separated LET values (default: 5,20,40,60,80).",
    )
    p.add_argument(
        "--binding",
        choices=["live", "fixed"],
        help="Drain-bias input of the SET source (default: live).",
    )
    p.add_argument("--fanout", type=int, help="Second-stage inverters (default 5).")
    p.add_argument("--vdd", type=float, default=1.8, help="Supply voltage.")
    p.add_argument("--t-strike", type=float, help="Strike time, seconds.")
    p.add_argument("--t-stop", type=float, help="Transient stop time, seconds.")
    p.add_argument("--dt", type=float, help="Transient time step, seconds.")
    p.add_argument(
        "--netlist",
        type=Path,
        help="Simulate this netlist file instead of the built-in inverter chain.",
    )
    p.add_argument("--target", default="MN1", help="NMOS to strike (default MN1).")
    p.add_argument("--node", default="out1", help="Node to summarise (default out1).")
    p.add_argument("--workers", type=int, help="Parallel LET runs.")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="setml",
        description="Neural-network SET current models: data, training, "
        "Verilog-A export and circuit strikes.",
    )
    parser.add_argument(
        "--config", type=Path, help="key=value settings file (SETML_* names)."
    )
    parser.add_argument(
        "--output-dir", type=Path, help="Artifact directory (env SETML_OUTPUT_DIR)."
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v info, -vv debug."
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    # ``setml generate``
    gen = subparsers.add_parser("generate", help="Build the training dataset.")
    gen.add_argument(
        "--let", type=float, action="append", help="LET value (repeatable)."
    )
    gen.add_argument(
        "--vd", type=float, action="append", help="Drain bias (repeatable)."
    )
    gen.add_argument("--seed", type=int, help="Split seed.")
    gen.add_argument("--max-rel-err", type=float, help="Densification tolerance.")
    gen.add_argument(
        "--no-densify", action="store_true", help="Keep the uniform time grid."
    )
    gen.add_argument("--tau-rise", type=float, help="Oracle rise time, seconds.")
    gen.add_argument("--tau-fall", type=float, help="Oracle fall time, seconds.")
    gen.add_argument("--out", type=Path, help="Dataset CSV (default: OUT/dataset.csv).")
    gen.add_argument(
        "--manifest", type=Path, help="Regenerate exactly from a manifest JSON."
    )

    # ``setml train``
    train = subparsers.add_parser("train", help="Train one architecture.")
    train.add_argument(
        "--arch", type=_architecture, default=DEFAULT_ARCH, help="e.g. 8x8x1."
    )
    train.add_argument(
        "--transfer",
        choices=[t.value for t in Transfer if t is not Transfer.PURELIN],
        default=Transfer.TANSIG.value,
        help="Hidden-layer transfer function.",
    )
    train.add_argument("--model-out", type=Path, help="Model file to write.")
    _add_train_options(train)

    # ``setml sweep``
    sweep = subparsers.add_parser("sweep", help="Compare architectures.")
    sweep.add_argument(
        "--arch",
        type=_architecture,
        action="append",
        help="Architecture to include (repeatable; default: the 9-row grid).",
    )
    sweep.add_argument(
        "--transfer",
        type=lambda s: s.split(","),
        default=["tansig"],
        help="Comma-separated transfers used with --arch.",
    )
    sweep.add_argument("--sort", action="store_true", help="Sort rows by test MSE.")
    _add_train_options(sweep)

    # ``setml export``
    export = subparsers.add_parser("export", help="Write the Verilog-A module.")
    export.add_argument(
        "--model", type=Path, help="Model file (default OUT/model.txt)."
    )
    export.add_argument("--name", default=DEFAULT_MODULE_NAME, help="Module name.")
    export.add_argument("--t-strike", type=float, help="Default strike time, s.")
    export.add_argument(
        "--check-points", type=int, default=1000, help="Golden-check sample count."
    )
    export.add_argument("--seed", type=int, help="Golden-check sampling seed.")

    # ``setml simulate``
    sim = subparsers.add_parser("simulate", help="Strike the inverter chain.")
    sim.add_argument(
        "--model", type=Path, help="Trained model (default: the surrogate pulse)."
    )
    _add_simulate_options(sim)

    # ``setml pipeline``
    pipe = subparsers.add_parser("pipeline", help="Run every stage in order.")
    pipe.add_argument("--arch", type=_architecture, default=DEFAULT_ARCH)
    pipe.add_argument(
        "--transfer",
        choices=[t.value for t in Transfer if t is not Transfer.PURELIN],
        default=Transfer.TANSIG.value,
    )
    pipe.add_argument("--seed", type=int, help="Split and initialisation seed.")
    pipe.add_argument("--max-epochs", type=int, help="LM epoch cap.")
    pipe.add_argument("--batch-size", type=int, help="Fixed LM subsample size.")
    _add_simulate_options(pipe)

    return parser


_HANDLERS = {
    "generate": _run_generate,
    "train": _run_train,
    "sweep": _run_sweep,
    "export": _run_export,
    "simulate": _run_simulate,
    "pipeline": _run_pipeline,
}


def main(argv: Sequence[str] | None = None) -> None:
    """CLI entry point: ``setml``."""
    parser = _build_parser()
    args = parser.parse_args(argv)

    try:
        settings = (
            load_settings(args.config) if args.config is not None else get_settings()
        )
    except ValidationError as exc:
        print(f"✗ Invalid settings: {exc}", file=sys.stderr)
        sys.exit(1)
    level = {0: settings.log_level.upper(), 1: "INFO"}.get(args.verbose, "DEBUG")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        _HANDLERS[args.command](args, settings)
    except SetMlError as exc:
        print(f"✗ {exc}", file=sys.stderr)
        sys.exit(1)
    except ValidationError as exc:
        print(f"✗ Invalid parameters: {exc}", file=sys.stderr)
        sys.exit(1)
