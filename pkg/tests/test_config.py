import glob
import os

import pytest

import config
from config import ConfigError, config_to_dict, load_experiment_config


def write_toml(tmp_path, text, name="exp.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestDefaults:
    def test_defaults_validate(self):
        cfg = load_experiment_config()
        assert cfg.material.E_i == 15e6
        assert cfg.scales.f_c == pytest.approx(5.625e7)
        assert not cfg.linear

    def test_relative_paths_resolve_against_base_dir(self):
        cfg = load_experiment_config(overrides={"paths.dataset": "data/x.csv"})
        assert cfg.paths.dataset == os.path.join(config.BASE_DIR, "data/x.csv")

    def test_round_trip_to_dict(self):
        d = config_to_dict(load_experiment_config())
        assert d["loading"]["drainage"] == "top"
        assert d["scales"]["L"] == 7.5


@pytest.mark.parametrize("path", sorted(glob.glob(os.path.join(config.CONFIG_DIR, "*.toml"))))
def test_shipped_configs_validate(path):
    load_experiment_config(path)


class TestFiles:
    def test_file_values_and_overrides(self, tmp_path):
        path = write_toml(tmp_path, '[material]\nE_i = 2e6\n[run]\nmode = "remodelled"\n')
        cfg = load_experiment_config(path, {"run.mode": "linear", "run.seed": None})
        assert cfg.material.E_i == 2e6
        assert cfg.linear
        assert cfg.run.seed == 42

    def test_partial_scales_merge_with_defaults(self, tmp_path):
        cfg = load_experiment_config(write_toml(tmp_path, "[scales]\nd = 2e-5\n"))
        assert cfg.scales.d == 2e-5
        assert cfg.scales.L == 7.5

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_experiment_config(str(tmp_path / "nope.toml"))

    def test_invalid_toml(self, tmp_path):
        with pytest.raises(ConfigError, match="not valid TOML"):
            load_experiment_config(write_toml(tmp_path, "[material\n"))

    def test_unknown_table(self, tmp_path):
        with pytest.raises(ConfigError, match="Unknown table"):
            load_experiment_config(write_toml(tmp_path, "[plotting]\ndpi = 300\n"))

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError, match="Unknown key"):
            load_experiment_config(write_toml(tmp_path, "[material]\nyoung = 1.0\n"))

    def test_bad_scales(self, tmp_path):
        with pytest.raises(ConfigError, match="scales"):
            load_experiment_config(write_toml(tmp_path, "[scales]\nd = -1.0\n"))


class TestValidation:
    @pytest.mark.parametrize("key, value, message", [
        ("material.nu_i", 0.5, "nu_i"),
        ("material.phi_i", 0.9, "phi_i"),
        ("material.E_i", 0.0, "E_i"),
        ("geometry.n_elements", 2, "n_elements"),
        ("loading.kind", "shear", "kind"),
        ("loading.direction", "sideways", "direction"),
        ("loading.drainage", "left", "drainage"),
        ("loading.steps_per_cycle", 2, "steps_per_cycle"),
        ("solver.dt_growth", 0.9, "dt_growth"),
        ("run.mode", "fast", "run.mode"),
        ("run.workers", 0, "workers"),
        ("surrogate.validation_fraction", 1.0, "validation_fraction"),
        ("loading.nu_sweep", [0.2, 0.6], "nu_sweep"),
    ])
    def test_rejected(self, key, value, message):
        with pytest.raises(ConfigError, match=message):
            load_experiment_config(overrides={key: value})

    def test_darcy_fractions_checked(self):
        with pytest.raises(ConfigError, match="delta_p_fractions"):
            load_experiment_config(overrides={"loading.kind": "darcy", "loading.delta_p_fractions": [0.5, 1.5]})

    def test_missing_architecture(self):
        with pytest.raises(ConfigError, match="K11"):
            load_experiment_config(overrides={"surrogate.architectures": {"M11": [4]}})

    def test_malformed_override(self):
        with pytest.raises(ConfigError, match="section.key"):
            load_experiment_config(overrides={"seed": 1})
