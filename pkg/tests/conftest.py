"""
Shared fixtures: isolated settings and a toy-scale synthetic run configuration.
"""
import pytest

from src.config import Settings
from src.models.run import RunConfig


@pytest.fixture
def workbench_settings(tmp_path):
    """Settings writing every artifact under the test's temporary directory."""
    return Settings(
        _env_file=None,
        environment="test",
        data_root=tmp_path / "data",
        output_dir=tmp_path / "runs",
        log_format="console",
        metrics_enabled=False,
    )


@pytest.fixture
def smoke_config():
    """Small synthetic SNN run that trains in a few seconds."""
    return RunConfig(
        name="smoke",
        dataset="synthetic",
        color_mode="grayscale",
        extractor="snn",
        n_runs=1,
        seed=7,
        synthetic_n_images=200,
        synthetic_side=16,
        n_features=16,
        n_patches=2000,
        epochs=10,
        analysis_n_images=20,
    )
