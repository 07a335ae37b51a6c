"""Application settings loaded from environment variables or a key=value file."""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Literal

from pydantic import field_validator
from pydantic_settings import BaseSettings, NoDecode, SettingsConfigDict


class Settings(BaseSettings):
    """setml pipeline configuration.

    Every field can be set through a ``SETML_<FIELD>`` environment variable,
    a ``.env`` file in the working directory, or a config file passed with
    ``setml --config FILE`` (same ``key=value`` syntax).
    """

    model_config = SettingsConfigDict(
        env_prefix="SETML_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    output_dir: Path = Path("out")
    """Default directory for every artifact the CLI writes."""

    seed: int = 0
    """Seed for the dataset split and weight initialisation."""

    max_rel_err: float = 1e-3
    """Adaptive densification tolerance, relative to the pulse peak."""

    t_stop_data: float = 1e-9
    """End of the generated waveform window, seconds."""

    dt_data: float = 1e-12
    """Base sampling step of generated waveforms before densification."""

    max_epochs: int = 1000
    """Levenberg-Marquardt epoch cap."""

    batch_size: int | None = None
    """Fixed uniformly subsampled LM batch. None trains on the full split."""

    workers: int = 1
    """Thread count for sweeps, LET runs and Jacobian row blocks."""

    t_strike: float = 200e-12
    """Ion strike time of the circuit experiment, seconds."""

    sim_t_stop: float = 1e-9
    """Transient stop time, seconds."""

    sim_dt: float = 1e-12
    """Transient time step, seconds."""

    fanout: int = 5
    """Number of second-stage inverters driven by the struck inverter."""

    vd_binding: Literal["live", "fixed"] = "live"
    """Drain-bias input of the SET source: live drain voltage or pre-strike bias."""

    lets: Annotated[list[float], NoDecode] = [5.0, 20.0, 40.0, 60.0, 80.0]
    """LET values (MeV*cm^2/mg) of the circuit sweep.
    Example: SETML_LETS=5,20,40,60,80"""

    log_level: str = "WARNING"
    """Root logger level used when ``--verbose`` is not given."""

    @field_validator("lets", mode="before")
    @classmethod
    def _parse_lets(cls, v: object) -> object:
        """Accept a comma-separated string from the environment."""
        if isinstance(v, str):
            return [float(x) for x in v.split(",") if x.strip()]
        return v


_settings: Settings | None = None


def get_settings() -> Settings:
    """Return the cached settings instance."""
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


def load_settings(config_file: Path) -> Settings:
    """Build settings from *config_file* (key=value) plus the environment.

    The result replaces the cached instance so later ``get_settings()`` calls
    see the same values.
    """
    global _settings
    _settings = Settings(_env_file=config_file)  # type: ignore[call-arg]
    return _settings
