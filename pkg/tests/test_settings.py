"""Tests for setml.settings: defaults, LET list parsing, config files and
the singleton."""

from __future__ import annotations

import os
from pathlib import Path

import pytest
from pydantic import ValidationError

import setml.settings as settings_module
from setml.settings import Settings, get_settings, load_settings


def _isolated_settings(
    monkeypatch: pytest.MonkeyPatch, **overrides: object
) -> Settings:
    """Return Settings with no env-file and all SETML_ vars cleared."""
    for key in list(os.environ):
        if key.startswith("SETML_"):
            monkeypatch.delenv(key, raising=False)
    return Settings(_env_file=None, **overrides)  # type: ignore[call-arg]


class TestSettingsDefaults:
    """Verify that Settings has the expected default values."""

    def test_default_output_dir(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """Artifacts go to ./out by default."""
        assert _isolated_settings(monkeypatch).output_dir == Path("out")

    def test_default_lets(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """The circuit sweep defaults to five LET values."""
        s = _isolated_settings(monkeypatch)
        assert s.lets == [5.0, 20.0, 40.0, 60.0, 80.0]

    def test_default_timing(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """Strike at 200 ps, 1 ns window, 1 ps steps."""
        s = _isolated_settings(monkeypatch)
        assert s.t_strike == 200e-12
        assert s.sim_t_stop == 1e-9
        assert s.sim_dt == 1e-12

    def test_default_binding_is_live(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """The SET source follows the live drain voltage by default."""
        assert _isolated_settings(monkeypatch).vd_binding == "live"

    def test_default_batch_size_is_none(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """Training uses the full split unless a batch size is given."""
        assert _isolated_settings(monkeypatch).batch_size is None


class TestSettingsParseLets:
    """Verify the _parse_lets validator behaviour."""

    def test_comma_separated_string(self) -> None:
        """A comma-separated string becomes a list of floats."""
        assert Settings._parse_lets("5, 20,40") == [5.0, 20.0, 40.0]

    def test_trailing_comma_ignored(self) -> None:
        """Empty items are dropped."""
        assert Settings._parse_lets("5,") == [5.0]

    def test_list_passthrough(self) -> None:
        """A list value is returned unchanged."""
        assert Settings._parse_lets([1.0, 2.0]) == [1.0, 2.0]

    def test_from_environment(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """SETML_LETS is read as a plain comma list, not JSON."""
        monkeypatch.setenv("SETML_LETS", "10,30")
        assert Settings(_env_file=None).lets == [10.0, 30.0]  # type: ignore[call-arg]

    def test_invalid_binding_rejected(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """Only live and fixed are accepted bindings."""
        with pytest.raises(ValidationError):
            _isolated_settings(monkeypatch, vd_binding="sticky")


class TestLoadSettings:
    """Verify config-file loading."""

    def test_config_file_values(
        self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        """key=value lines with the SETML_ prefix are applied."""
        monkeypatch.delenv("SETML_SEED", raising=False)
        monkeypatch.delenv("SETML_FANOUT", raising=False)
        cfg = tmp_path / "setml.env"
        cfg.write_text("SETML_SEED=7\nSETML_FANOUT=2\n", encoding="utf-8")
        s = load_settings(cfg)
        assert s.seed == 7
        assert s.fanout == 2

    def test_load_replaces_cached_instance(self, tmp_path: Path) -> None:
        """get_settings() returns what load_settings() built."""
        cfg = tmp_path / "setml.env"
        cfg.write_text("SETML_WORKERS=3\n", encoding="utf-8")
        loaded = load_settings(cfg)
        assert get_settings() is loaded


class TestGetSettingsSingleton:
    """Verify that get_settings() behaves as a singleton factory."""

    def test_returns_settings_instance(self) -> None:
        """get_settings() should return a Settings instance."""
        assert isinstance(get_settings(), Settings)

    def test_returns_same_instance_on_second_call(self) -> None:
        """Two consecutive calls return the same object."""
        assert get_settings() is get_settings()

    def test_singleton_reset(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """After resetting _settings, a new instance is created."""
        first = get_settings()
        monkeypatch.setattr(settings_module, "_settings", None)
        assert get_settings() is not first
