"""
Unit tests for run configuration, environment settings and command input validation.
"""
from pathlib import Path

import pytest
from pydantic import ValidationError

from src.cli.commands.base import CommandInput
from src.cli.commands.reproduce_table import ReproduceTableInput
from src.config import Settings
from src.models.coding import ColorStrategy
from src.models.run import RunConfig, parse_override


class TestRunConfigDefaults:
    """Test that absent keys take the published defaults."""

    def test_empty_config(self):
        """Test the default protocol and network parameters."""
        config = RunConfig()

        assert config.dataset == "cifar10"
        assert (config.w_p, config.stride, config.pool_r, config.n_features) == (5, 1, 2, 64)
        assert config.n_runs == 3
        assert config.resolved_epochs == 100
        assert config.resolved_n_patches == 100_000

        snn = config.snn_config(n_inputs=50)
        assert snn.v_th0 == 20.0
        assert snn.t_obj == 0.7
        assert snn.alpha_plus == snn.alpha_minus == 0.001
        assert snn.d_max == 0.01
        assert config.zero_latency_spikes is False
        assert config.extraction_inhibition is True

    def test_ae_defaults(self):
        """Test AE epochs, patch count and the color/64 table row."""
        config = RunConfig(extractor="ae", color_mode=ColorStrategy.RAW_RGB)

        assert config.resolved_epochs == 1000
        assert config.resolved_n_patches == 200_000
        assert config.ae_hyperparameters() == (0.005, 0.5, 1e-4)

    def test_ae_gray_and_large_rows(self):
        """Test the grayscale/64 and 1024-feature rows."""
        gray = RunConfig(extractor="ae", color_mode=ColorStrategy.RAW_GRAY)
        large = RunConfig(extractor="ae", color_mode=ColorStrategy.RAW_RGB, n_features=1024)

        assert gray.ae_hyperparameters() == (0.01, 0.05, 1e-5)
        assert large.ae_hyperparameters() == (0.005, 0.1, 1e-5)

    def test_explicit_ae_key_wins(self):
        """Test that an explicit key overrides the table row."""
        config = RunConfig(extractor="ae", color_mode=ColorStrategy.RAW_GRAY, ae_gamma=0.2)
        assert config.ae_hyperparameters() == (0.01, 0.2, 1e-5)
        assert config.ae_config(n_inputs=25).gamma == 0.2

    def test_run_seeds(self):
        """Test that run seeds are seed + run index."""
        config = RunConfig(seed=10)
        assert [config.run_seed(i) for i in range(3)] == [10, 11, 12]

    def test_run_name(self):
        """Test the generated and explicit run names."""
        assert RunConfig().run_name == "cifar10-grayscale-snn-nf64"
        assert RunConfig(name="beta").run_name == "beta"

    def test_features_per_group(self):
        """Test that two-group strategies split the dictionary in halves."""
        assert RunConfig(color_mode=ColorStrategy.GRAYSCALE_PLUS_COLOR).features_per_group() == [32, 32]
        assert RunConfig(color_mode=ColorStrategy.GRAYSCALE_PLUS_COLOR, n_features=5).features_per_group() == [2, 3]
        assert RunConfig().features_per_group() == [64]


class TestRunConfigValidation:
    """Test that invalid configurations are rejected with the offending name."""

    def test_unknown_key(self):
        """Test that an unknown key aborts with its name."""
        with pytest.raises(ValidationError) as exc_info:
            RunConfig.from_mapping({"n_featurez": 32})
        assert "n_featurez" in str(exc_info.value)

    def test_zero_runs(self):
        """Test that n_runs must be at least 1."""
        with pytest.raises(ValidationError):
            RunConfig(n_runs=0)

    def test_even_dog_size(self):
        """Test that DoG kernels must have an odd side."""
        with pytest.raises(ValidationError) as exc_info:
            RunConfig(dog_size=6)
        assert "odd" in str(exc_info.value)

    def test_weight_bounds(self):
        """Test that w_min must be below w_max."""
        with pytest.raises(ValidationError) as exc_info:
            RunConfig(w_min=1.0, w_max=0.5)
        assert "w_min" in str(exc_info.value)

    def test_t_obj_inside_window(self):
        """Test that t_obj must lie inside the coding window."""
        with pytest.raises(ValidationError):
            RunConfig(t_obj=1.5)

    def test_ae_rho_range(self):
        """Test that the AE target activation must be in (0, 1)."""
        with pytest.raises(ValidationError):
            RunConfig(extractor="ae", ae_rho=1.5)

    def test_unknown_color_mode(self):
        """Test that color_mode only takes the known strategies."""
        with pytest.raises(ValidationError):
            RunConfig.from_mapping({"color_mode": "sepia"})


class TestRunConfigFiles:
    """Test TOML loading and key=value overrides."""

    def test_from_file_with_overrides(self, tmp_path):
        """Test that overrides are typed and applied after the file."""
        path = tmp_path / "run.toml"
        path.write_text('dataset = "synthetic"\nn_features = 16\nbeta_plus = 2.0\n')

        config = RunConfig.from_file(path, ["n_features=8", "zero_latency_spikes=true", "color_mode=bio_color"])

        assert config.dataset == "synthetic"
        assert config.n_features == 8
        assert config.beta_plus == 2.0
        assert config.zero_latency_spikes is True
        assert config.color_mode == ColorStrategy.BIO_COLOR

    def test_parse_override(self):
        """Test TOML scalar typing of override values."""
        assert parse_override("n_runs=2") == ("n_runs", 2)
        assert parse_override("svm_c = 0.5") == ("svm_c", 0.5)
        assert parse_override("dataset=stl10") == ("dataset", "stl10")

    def test_parse_override_needs_equals(self):
        """Test that an override without '=' is rejected."""
        with pytest.raises(ValueError):
            parse_override("n_runs")

    def test_toml_rendering_reloads(self, tmp_path):
        """Test that to_toml renders a file from_file accepts unchanged."""
        config = RunConfig(dataset="synthetic", extractor="ae", color_mode=ColorStrategy.RAW_GRAY, ae_rho=0.02)
        path = tmp_path / "copy.toml"
        path.write_text(config.to_toml())
        assert RunConfig.from_file(path) == config

    def test_shipped_presets_parse(self):
        """Test that every preset under configs/ is a valid run configuration."""
        presets = sorted((Path(__file__).parents[2] / "configs").glob("*.toml"))
        assert presets
        for preset in presets:
            RunConfig.from_file(preset)

    def test_with_updates_validates(self):
        """Test that with_updates returns a validated copy."""
        config = RunConfig()
        assert config.with_updates(n_runs=1).n_runs == 1
        with pytest.raises(ValidationError):
            config.with_updates(stride=0)


class TestSettings:
    """Test environment settings."""

    def test_defaults(self, monkeypatch):
        """Test default locations and the derived cache directory."""
        for name in ("WORKBENCH_DATA_ROOT", "WORKBENCH_OUTPUT_DIR", "WORKBENCH_CACHE_DIR", "N_JOBS"):
            monkeypatch.delenv(name, raising=False)
        settings = Settings(_env_file=None)

        assert settings.data_root == Path("data")
        assert settings.resolved_cache_dir == Path("runs") / "cache"
        assert settings.n_jobs == 1

    def test_environment_variables(self, monkeypatch, tmp_path):
        """Test that the data root and job count come from the environment."""
        monkeypatch.setenv("WORKBENCH_DATA_ROOT", str(tmp_path))
        monkeypatch.setenv("N_JOBS", "4")
        settings = Settings(_env_file=None)

        assert settings.data_root == tmp_path
        assert settings.n_jobs == 4

    def test_log_level_validation(self):
        """Test that log levels are normalized and checked."""
        assert Settings(_env_file=None, log_level="debug").log_level == "DEBUG"
        with pytest.raises(ValidationError):
            Settings(_env_file=None, log_level="LOUD")

    def test_log_format_validation(self):
        """Test that only json and console rendering are accepted."""
        with pytest.raises(ValidationError):
            Settings(_env_file=None, log_format="xml")


class TestCommandInputValidation:
    """Test validation of CLI command inputs."""

    def test_valid_input(self, tmp_path):
        """Test a config path plus overrides."""
        input_obj = CommandInput(config=tmp_path / "run.toml", overrides=["n_runs=1"])
        assert input_obj.overrides == ["n_runs=1"]

    def test_malformed_override(self):
        """Test that overrides must look like key=value."""
        with pytest.raises(ValidationError):
            CommandInput(overrides=["n_runs"])

    def test_unknown_table(self):
        """Test that reproduce-table only accepts known tables."""
        with pytest.raises(ValidationError) as exc_info:
            ReproduceTableInput(table="table99")
        assert "table99" in str(exc_info.value)

    def test_known_table(self):
        """Test a valid table name."""
        assert ReproduceTableInput(table="stdp-beta").table == "stdp-beta"
