import json
from pathlib import Path

import pytest

from guided_shield.config_loader import (
    CONFIG_ENV_VAR,
    ConfigError,
    PipelineConfig,
    bundled_data_path,
    load_config,
    resolve_properties,
)
from guided_shield.property import particle_world_properties


def _write(path: Path, data: dict) -> Path:
    path.write_text(json.dumps(data))
    return path


class TestLoadConfig:
    def test_defaults(self, tmp_path):
        config, path = load_config(str(_write(tmp_path / "c.json", {})))
        assert path == str(tmp_path / "c.json")
        assert config.splitter.samples_per_region == 354
        assert config.splitter.splitter_config().min_samples == 351
        assert config.run.modes == ["noshield", "full", "guided"]
        assert config.run.seeds == [12, 66, 99]

    def test_relative_paths_follow_the_config(self, tmp_path):
        sub = tmp_path / "exp"
        sub.mkdir()
        config, _ = load_config(str(_write(sub / "c.json", {"network": "nets/p.json", "output_dir": "out"})))
        assert Path(config.network) == sub / "nets" / "p.json"
        assert config.output_path("report.csv") == sub / "out" / "report.csv"
        assert config.properties == "particle_world"

    def test_environment_variable(self, tmp_path, monkeypatch):
        path = _write(tmp_path / "elsewhere.json", {"run": {"episodes": 7}})
        monkeypatch.setenv(CONFIG_ENV_VAR, str(path))
        monkeypatch.chdir(tmp_path)
        config, found = load_config()
        assert found == str(path)
        assert config.run.episodes == 7

    def test_working_directory_fallback(self, tmp_path, monkeypatch):
        _write(tmp_path / "config.json", {"run": {"episodes": 3}})
        monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)
        monkeypatch.chdir(tmp_path)
        config, _ = load_config()
        assert config.run.episodes == 3

    def test_nothing_to_load(self, tmp_path, monkeypatch):
        monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)
        monkeypatch.chdir(tmp_path)
        with pytest.raises(ConfigError, match="not found"):
            load_config()

    def test_missing_explicit_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(str(tmp_path / "absent.json"))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(str(path))

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError, match="verifier"):
            load_config(str(_write(tmp_path / "c.json", {"verifier": {"max_branchs": 5}})))

    def test_too_few_samples(self, tmp_path):
        path = _write(tmp_path / "c.json", {"splitter": {"samples_per_region": 10}})
        with pytest.raises(ConfigError, match="ln"):
            load_config(str(path))

    def test_unknown_map(self, tmp_path):
        with pytest.raises(ConfigError, match="map"):
            load_config(str(_write(tmp_path / "c.json", {"run": {"maps": [0, 9]}})))

    def test_unknown_mode(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(_write(tmp_path / "c.json", {"run": {"modes": ["partial"]}})))

    def test_example_config_is_valid(self):
        root = Path(__file__).resolve().parents[1]
        config, _ = load_config(str(root / "config.example.json"))
        assert Path(config.network).exists()


class TestResolveProperties:
    def test_builtin_set(self):
        assert resolve_properties(PipelineConfig()) == particle_world_properties()

    def test_margin_is_applied(self):
        config = PipelineConfig.model_validate({"verifier": {"margin": 0.25}})
        assert all(p.margin == 0.25 for p in resolve_properties(config))

    def test_property_file(self, tmp_path):
        config, _ = load_config(str(_write(
            tmp_path / "c.json",
            {"properties": str(bundled_data_path("properties", "mapless_navigation.json"))},
        )))
        names = [p.name for p in resolve_properties(config)]
        assert names == ["M1", "M2", "M3", "M4", "M5"]

    def test_missing_property_file(self, tmp_path):
        config, _ = load_config(str(_write(tmp_path / "c.json", {"properties": "props.json"})))
        with pytest.raises(ConfigError, match="properties file not found"):
            resolve_properties(config)

    def test_broken_property_file(self, tmp_path):
        (tmp_path / "props.json").write_text(json.dumps({"properties": [{"name": "P"}]}))
        config, _ = load_config(str(_write(tmp_path / "c.json", {"properties": "props.json"})))
        with pytest.raises(ConfigError):
            resolve_properties(config)
