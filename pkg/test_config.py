import json

import pytest

from config import (
    CameraSamplerConfig,
    RoAugConfig,
    Settings,
    ViewMode,
    load_run_config,
    provenance_config,
)
from utils.errors import ConfigError


@pytest.fixture(autouse=True)
def _no_dotenv(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


def test_defaults():
    settings = Settings()
    assert settings.master_seed == 0
    assert settings.viaug.tx_range == 0.25
    assert settings.viaug.mode is ViewMode.INCONSISTENT
    assert settings.roaug.brightness_range == 30
    assert settings.paired.brightness_range == 40
    assert settings.camera.fov_range == (40.0, 70.0)
    assert settings.camera.radius_mean == 0.85


@pytest.mark.parametrize(
    "kwargs",
    [
        {"workers": 0},
        {"parallel_backend": "dask"},
        {"chain_registry": "/nonexistent/chains.json"},
    ],
)
def test_invalid_settings_rejected(kwargs):
    with pytest.raises(ValueError):
        Settings(**kwargs)


def test_negative_brightness_rejected():
    with pytest.raises(ValueError):
        RoAugConfig(brightness_range=-1)


def test_environment_is_read(monkeypatch):
    monkeypatch.setenv("XAUG_MASTER_SEED", "17")
    monkeypatch.setenv("XAUG_VIAUG__MODE", "consistent")
    settings = Settings()
    assert settings.master_seed == 17
    assert settings.viaug.mode is ViewMode.CONSISTENT


def test_flags_beat_file_beat_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("XAUG_MASTER_SEED", "1")
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"master_seed": 2, "roaug": {"brightness_range": 10}}))

    from_file = load_run_config(path)
    assert from_file.master_seed == 2
    assert from_file.roaug.brightness_range == 10

    flagged = load_run_config(path, {"master_seed": 3, "roaug": {"brightness_range": 0}, "workers": None})
    assert flagged.master_seed == 3
    assert flagged.roaug.brightness_range == 0
    assert flagged.workers == 1


def test_bad_config_files(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    with pytest.raises(ConfigError):
        load_run_config(broken)
    listing = tmp_path / "list.json"
    listing.write_text("[]")
    with pytest.raises(ConfigError):
        load_run_config(listing)
    invalid = tmp_path / "invalid.json"
    invalid.write_text(json.dumps({"workers": 0}))
    with pytest.raises(ConfigError):
        load_run_config(invalid)


def test_provenance_excludes_execution_knobs():
    recorded = provenance_config(Settings(workers=4, parallel_backend="loky"))
    assert "workers" not in recorded and "parallel_backend" not in recorded
    assert recorded == provenance_config(Settings(workers=1))
    assert recorded["viaug"]["mode"] == "inconsistent"


def test_camera_config_anchors():
    cfg = CameraSamplerConfig()
    assert {a.name for a in cfg.anchors} >= {"side", "front"}
    assert cfg.anchor_fraction == 0.0
