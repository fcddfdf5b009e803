"""
Unit tests for dictionary, cache, descriptor and model files, tables and pixmaps.
"""
import json

import numpy as np
import pytest

from src.models.ae import AeConfig
from src.models.classify import DescriptorSet, LinearModel
from src.models.coding import ColorStrategy
from src.models.run import RunManifest
from src.models.snn import SnnConfig
from src.services.ae_service import init_ae
from src.services.snn_service import init_network
from src.services.storage_service import (
    DICTIONARY_MAGIC,
    StorageFormatError,
    is_valid_channel_cache,
    load_channel_cache,
    load_descriptors,
    load_dictionary,
    load_linear_model,
    load_manifest,
    read_pixmap,
    read_table,
    save_channel_cache,
    save_descriptors,
    save_dictionary,
    save_linear_model,
    save_manifest,
    write_pixmap,
    write_table,
)


class TestDictionaryFiles:
    """Test cases for save_dictionary and load_dictionary."""

    def test_snn_dictionary(self, tmp_path):
        """Test that SNN arrays and config survive a save and load."""
        state = init_network(SnnConfig(n_f=4, n_inputs=18, beta_plus=2.0, seed=3))
        path = save_dictionary(tmp_path / "snn.sfw", [state], ColorStrategy.GRAYSCALE, meta={"run": 1})

        loaded = load_dictionary(path)

        assert loaded.kind == "snn"
        assert loaded.strategy == ColorStrategy.GRAYSCALE
        assert loaded.meta == {"run": 1}
        assert loaded.states[0].config == state.config
        np.testing.assert_array_equal(loaded.states[0].weights, state.weights)
        np.testing.assert_array_equal(loaded.states[0].delays, state.delays)
        np.testing.assert_array_equal(loaded.states[0].thresholds, state.thresholds)

    def test_ae_dictionary_two_groups(self, tmp_path):
        """Test an AE dictionary with one part per channel group."""
        states = [
            init_ae(AeConfig(n_f=3, n_inputs=8, lambda_=1e-4)),
            init_ae(AeConfig(n_f=5, n_inputs=16, seed=1)),
        ]
        path = save_dictionary(tmp_path / "ae.sfw", states, ColorStrategy.GRAYSCALE_PLUS_COLOR)

        loaded = load_dictionary(path)

        assert loaded.kind == "ae"
        assert [s.n_f for s in loaded.states] == [3, 5]
        assert loaded.states[0].config.lambda_ == 1e-4
        np.testing.assert_array_equal(loaded.states[1].w_dec, states[1].w_dec)

    def test_header_layout(self, tmp_path):
        """Test magic, kind byte and the JSON config block."""
        state = init_network(SnnConfig(n_f=2, n_inputs=2))
        path = save_dictionary(tmp_path / "d.sfw", [state], ColorStrategy.GRAYSCALE)
        data = path.read_bytes()

        assert data[:4] == DICTIONARY_MAGIC
        assert data[6] == 1
        length = int.from_bytes(data[7:11], "little")
        header = json.loads(data[11:11 + length])
        assert header["parts"][0]["config"]["n_f"] == 2

    def test_bad_magic(self, tmp_path):
        """Test that a foreign file is rejected."""
        path = tmp_path / "x.sfw"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(StorageFormatError):
            load_dictionary(path)

    def test_truncated(self, tmp_path):
        """Test that a cut-off payload is rejected."""
        state = init_network(SnnConfig(n_f=4, n_inputs=8))
        path = save_dictionary(tmp_path / "d.sfw", [state], ColorStrategy.GRAYSCALE)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(StorageFormatError):
            load_dictionary(path)

    def test_mixed_kinds_rejected(self, tmp_path):
        """Test that SNN and AE states cannot share a file."""
        states = [init_network(SnnConfig(n_f=2, n_inputs=18)), init_ae(AeConfig(n_f=2, n_inputs=36))]
        with pytest.raises(StorageFormatError):
            save_dictionary(tmp_path / "d.sfw", states, ColorStrategy.GRAYSCALE_PLUS_COLOR)


class TestChannelCache:
    """Test cases for the coded channel cache."""

    def setup_method(self):
        """Set up a small coded stack."""
        rng = np.random.default_rng(0)
        self.channels = rng.uniform(size=(3, 8, 8, 2)).astype(np.float32)
        self.labels = np.array([2, 0, 1])

    def test_save_and_map(self, tmp_path):
        """Test that the memory-mapped cache holds the stacks and labels."""
        path = save_channel_cache(tmp_path / "c.cache", self.channels, self.labels, ColorStrategy.GRAYSCALE)

        channels, labels, strategy = load_channel_cache(path)

        assert strategy == ColorStrategy.GRAYSCALE
        np.testing.assert_array_equal(channels, self.channels)
        np.testing.assert_array_equal(labels, self.labels)

    def test_validity(self, tmp_path):
        """Test that count, strategy and shape are all checked."""
        path = save_channel_cache(tmp_path / "c.cache", self.channels, self.labels, ColorStrategy.GRAYSCALE)

        assert is_valid_channel_cache(path, 3, ColorStrategy.GRAYSCALE, (8, 8))
        assert not is_valid_channel_cache(path, 4, ColorStrategy.GRAYSCALE)
        assert not is_valid_channel_cache(path, 3, ColorStrategy.BIO_COLOR)
        assert not is_valid_channel_cache(path, 3, ColorStrategy.GRAYSCALE, (16, 16))
        assert not is_valid_channel_cache(tmp_path / "missing.cache", 3, ColorStrategy.GRAYSCALE)

    def test_truncated_cache_invalid(self, tmp_path):
        """Test that a partially written cache is not trusted."""
        path = save_channel_cache(tmp_path / "c.cache", self.channels, self.labels, ColorStrategy.GRAYSCALE)
        path.write_bytes(path.read_bytes()[:-4])
        assert not is_valid_channel_cache(path, 3, ColorStrategy.GRAYSCALE)


class TestDescriptorAndModelFiles:
    """Test cases for descriptor sets and linear models."""

    def test_descriptors(self, tmp_path):
        """Test descriptor values (as float32) and labels."""
        values = np.arange(12, dtype=np.float64).reshape(3, 4) / 7.0
        descriptors = DescriptorSet(values, np.array([1, 0, 1]), 2)

        loaded = load_descriptors(save_descriptors(tmp_path / "d.sfds", descriptors))

        assert loaded.n_classes == 2
        np.testing.assert_allclose(loaded.values, values, rtol=1e-6)
        np.testing.assert_array_equal(loaded.labels, [1, 0, 1])

    def test_linear_model(self, tmp_path):
        """Test that a loaded model predicts like the saved one."""
        rng = np.random.default_rng(1)
        model = LinearModel(
            coef=rng.normal(size=(3, 4)),
            intercept=rng.normal(size=3),
            classes=np.array([0, 1, 2]),
            mean=rng.normal(size=4),
            scale=rng.uniform(0.5, 2.0, size=4),
            C=0.5,
        )
        loaded = load_linear_model(save_linear_model(tmp_path / "m.sflm", model))

        x = rng.normal(size=(20, 4))
        assert loaded.C == 0.5
        np.testing.assert_array_equal(loaded.predict(x), model.predict(x))


class TestTextAndImageFiles:
    """Test cases for tables, pixmaps and manifests."""

    def test_table(self, tmp_path):
        """Test the title comment line and header row."""
        path = write_table(tmp_path / "t.csv", "Accuracy per color strategy", ["variant", "mean", "std"], [["gray", 45.1, 0.2]])

        assert path.read_text().splitlines()[0] == "# Accuracy per color strategy"
        title, columns, rows = read_table(path)
        assert title == "Accuracy per color strategy"
        assert columns == ["variant", "mean", "std"]
        assert rows == [["gray", "45.1", "0.2"]]

    def test_pixmap(self, tmp_path):
        """Test the P6 header and pixel payload."""
        rgb = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
        path = write_pixmap(tmp_path / "p.ppm", rgb)

        assert path.read_bytes().startswith(b"P6\n3 2\n255\n")
        np.testing.assert_array_equal(read_pixmap(path), rgb)

    def test_pixmap_whitespace_valued_pixels(self, tmp_path):
        """Test that raster bytes equal to whitespace characters survive the round trip."""
        rgb = np.array([[[32, 10, 9], [13, 11, 12]]], dtype=np.uint8)
        path = write_pixmap(tmp_path / "ws.ppm", rgb)

        np.testing.assert_array_equal(read_pixmap(path), rgb)

        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(StorageFormatError, match="truncated"):
            read_pixmap(path)

        path.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
        with pytest.raises(StorageFormatError, match="8-bit"):
            read_pixmap(path)

    def test_pixmap_needs_uint8_rgb(self, tmp_path):
        """Test that float or single-channel data is rejected."""
        with pytest.raises(StorageFormatError):
            write_pixmap(tmp_path / "p.ppm", np.zeros((2, 2, 3)))
        with pytest.raises(StorageFormatError):
            write_pixmap(tmp_path / "p.ppm", np.zeros((2, 2), dtype=np.uint8))

    def test_manifest(self, tmp_path):
        """Test that a manifest is written as JSON and read back."""
        manifest = RunManifest(config={"seed": 4}, command="train", seeds=[4, 5], software_version="0.1.0")
        loaded = load_manifest(save_manifest(tmp_path / "manifest.json", manifest))
        assert loaded == manifest
