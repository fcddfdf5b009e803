"""
Unit tests for sparseness, coherence, reconstruction, histograms and filter sheets.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from src.models.ae import AeConfig
from src.models.coding import ColorStrategy, DogParams
from src.models.snn import SnnConfig
from src.services.ae_service import AeFeatureExtractor, init_ae, train_ae
from src.services.coding_service import encode_array
from src.services.dataset_service import cut_patches, make_synthetic, sample_patch_origins
from src.services.metrics_service import (
    MetricsError,
    coherence_matrix,
    export_filters,
    filter_sheet,
    reconstruct_channels,
    reconstruct_image,
    reconstruct_patch,
    reconstruction_report,
    render_channels,
    sparseness,
    sparseness_report,
    weight_histogram,
)
from src.services.snn_service import SnnFeatureExtractor, init_network
from src.services.storage_service import read_pixmap


class IdentityExtractor:
    """Toy extractor whose features are the patch itself."""

    channel_groups = (1,)

    def __init__(self, w_p):
        self.w_p = w_p

    @property
    def n_features(self):
        return self.w_p * self.w_p

    def transform(self, patches):
        return patches.reshape(len(patches), -1)

    def reconstruct(self, patches, features):
        return features.reshape(patches.shape)

    def dictionaries(self):
        return [np.eye(self.n_features)]


class TestSparseness:
    """Test cases for sparseness and sparseness_report."""

    def test_one_hot(self):
        """Test that a one-hot vector is maximally sparse."""
        values = np.zeros(64)
        values[17] = 0.4
        assert sparseness(values) == 1.0

    def test_constant(self):
        """Test that a constant vector has zero sparseness."""
        assert sparseness(np.full(64, 0.3)) == pytest.approx(0.0, abs=1e-12)

    def test_worked_example(self):
        """Test (1,1,0,0): (2 - √2) / 1."""
        assert sparseness(np.array([1.0, 1.0, 0.0, 0.0])) == pytest.approx(2.0 - np.sqrt(2.0))

    def test_silent_vector(self):
        """Test that an all-zero vector counts as 1."""
        assert sparseness(np.zeros(8)) == 1.0

    def test_single_feature_rejected(self):
        """Test that n_f = 1 has no sparseness."""
        with pytest.raises(MetricsError):
            sparseness(np.array([0.5]))

    @given(arrays(np.float64, st.integers(min_value=2, max_value=40), elements=st.floats(0.0, 1.0)))
    @settings(max_examples=100)
    def test_bounded(self, values):
        """Test that sparseness stays in [0, 1]."""
        assert 0.0 <= sparseness(values) <= 1.0

    def test_report(self):
        """Test mean and std over samples."""
        features = np.array([[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]])
        report = sparseness_report(features)
        np.testing.assert_allclose(report.values, [1.0, 0.0], atol=1e-12)
        assert report.mean == pytest.approx(0.5)
        assert report.summary()["n_samples"] == 2


class TestCoherence:
    """Test cases for coherence_matrix."""

    def test_worked_example(self):
        """Test (1,0) against (1,1): 1/√2."""
        report = coherence_matrix(np.array([[1.0, 0.0], [1.0, 1.0]]))
        assert report.mu[0, 1] == pytest.approx(1.0 / np.sqrt(2.0))
        assert report.mean == pytest.approx(1.0 / np.sqrt(2.0))

    def test_identical_and_orthogonal(self):
        """Test μ = 1 for duplicates and 0 for orthogonal rows."""
        report = coherence_matrix(np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 3.0]]))
        assert report.mu[0, 1] == pytest.approx(1.0)
        assert report.mu[0, 2] == 0.0
        assert report.near_duplicates == 1
        assert report.max_offdiag == pytest.approx(1.0)

    def test_properties(self):
        """Test symmetry, unit diagonal and invariance to row rescaling."""
        rng = np.random.default_rng(2)
        dictionary = rng.normal(size=(10, 25))
        report = coherence_matrix(dictionary)
        rescaled = coherence_matrix(dictionary * rng.uniform(0.1, 10.0, size=(10, 1)))

        np.testing.assert_allclose(report.mu, report.mu.T)
        np.testing.assert_array_equal(np.diag(report.mu), 1.0)
        assert report.mu.min() >= 0.0 and report.mu.max() <= 1.0
        np.testing.assert_allclose(report.mu, rescaled.mu, atol=1e-12)

    def test_dead_units_excluded(self):
        """Test that zero-norm rows are reported, not compared."""
        report = coherence_matrix(np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]))
        assert report.dead_units == [1]
        assert report.mu.shape == (2, 2)
        assert report.summary()["dead_units"] == 1


class TestReconstruction:
    """Test cases for patch and image reconstruction."""

    def test_snn_zero_activation(self):
        """Test that a silent SNN reconstructs a zero patch."""
        state = init_network(SnnConfig(n_f=4, n_inputs=18, v_th0=1e6))
        extractor = SnnFeatureExtractor([state], ColorStrategy.GRAYSCALE)
        patch = np.full((3, 3, 2), 0.5)
        np.testing.assert_array_equal(reconstruct_patch(extractor, patch), 0.0)

    def test_snn_single_feature_is_weight_row(self):
        """Test that activation 1 on one feature returns its weight row."""
        state = init_network(SnnConfig(n_f=4, n_inputs=18, seed=5))
        extractor = SnnFeatureExtractor([state], ColorStrategy.GRAYSCALE)
        features = np.zeros((1, 4))
        features[0, 2] = 1.0
        recon = extractor.reconstruct(np.zeros((1, 3, 3, 2)), features)
        np.testing.assert_allclose(recon[0].reshape(-1), state.weights[2])

    def test_identity_extractor_is_exact(self):
        """Test zero error when every patch is reproduced."""
        channels = np.random.default_rng(3).uniform(size=(9, 9, 1))
        averaged, error = reconstruct_channels(IdentityExtractor(3), channels, 3, 2)
        assert error == pytest.approx(0.0, abs=1e-20)
        np.testing.assert_allclose(averaged, channels)

    def test_uncovered_pixels_ignored(self):
        """Test that pixels outside every patch add no error."""
        channels = np.random.default_rng(4).uniform(size=(8, 8, 1))
        averaged, error = reconstruct_channels(IdentityExtractor(3), channels, 3, 2)
        assert error == pytest.approx(0.0, abs=1e-20)
        np.testing.assert_array_equal(averaged[7], 0.0)

    def test_overlap_average(self):
        """Test that overlapping reconstructions are averaged per pixel."""

        class ConstantExtractor(IdentityExtractor):
            def reconstruct(self, patches, features):
                index = np.arange(len(patches), dtype=np.float64)
                return np.broadcast_to(index[:, None, None, None], patches.shape).copy()

        averaged, _ = reconstruct_channels(ConstantExtractor(2), np.zeros((3, 3, 1)), 2, 1)
        # Centre pixel is covered by patches 0..3
        assert averaged[1, 1, 0] == pytest.approx(1.5)
        assert averaged[0, 0, 0] == 0.0
        assert averaged[2, 2, 0] == 3.0

    def test_trained_ae_beats_untrained(self):
        """Test that training lowers the image reconstruction error."""
        image_set = make_synthetic(20, 8, 2, seed=0)
        strategy = ColorStrategy.RAW_GRAY
        coded = encode_array(image_set.pixels, strategy, DogParams())
        origins = sample_patch_origins(len(coded), 8, 8, 500, 3, seed=1)
        patches = cut_patches(coded, origins, 3).reshape(500, -1)
        config = AeConfig(n_f=16, n_inputs=9, epochs=30, batch_size=32, gamma=0.0)
        trained, _ = train_ae(config, patches)

        before = reconstruction_report(AeFeatureExtractor([init_ae(config)], strategy), image_set, strategy, 3, 1)
        after = reconstruction_report(AeFeatureExtractor([trained], strategy), image_set, strategy, 3, 1)

        assert after.mean < before.mean
        assert after.summary()["n_images"] == 20

    def test_reconstruct_image_codes_first(self):
        """Test that reconstruct_image works in the coded space."""
        image = make_synthetic(1, 6, 2, seed=2)[0]
        averaged, error = reconstruct_image(IdentityExtractor(3), image, ColorStrategy.RAW_GRAY, 3, 1)
        assert averaged.shape == (6, 6, 1)
        assert error == pytest.approx(0.0, abs=1e-20)


class TestWeightHistogram:
    """Test cases for weight_histogram."""

    def test_snn_range(self):
        """Test two bins over [w_min, w_max] covering every weight."""
        state = init_network(SnnConfig(n_f=8, n_inputs=50))
        histogram = weight_histogram(state, 2)
        np.testing.assert_array_equal(histogram.edges, [0.0, 0.5, 1.0])
        assert histogram.total == 400

    def test_untrained_is_flat(self):
        """Test that uniform initial weights give a roughly flat histogram."""
        state = init_network(SnnConfig(n_f=100, n_inputs=200))
        counts = weight_histogram(state, 10).counts
        assert counts.min() > 0.8 * counts.mean()

    def test_ae_range(self):
        """Test that AE bins span the encoder weight range."""
        state = init_ae(AeConfig(n_f=4, n_inputs=9))
        histogram = weight_histogram(state, 5)
        assert histogram.edges[0] == pytest.approx(state.w_enc.min())
        assert histogram.edges[-1] == pytest.approx(state.w_enc.max())
        assert len(histogram.rows()) == 5

    def test_one_bin_rejected(self):
        """Test that bins < 2 is rejected."""
        with pytest.raises(MetricsError):
            weight_histogram(init_ae(AeConfig(n_f=2, n_inputs=2)), 1)


class TestFilterSheets:
    """Test cases for filter rendering and export."""

    def test_grid_layout(self):
        """Test an 8×8 grid of 5×5 tiles at scale 2."""
        dictionary = np.random.default_rng(0).uniform(size=(64, 50))
        sheet = filter_sheet(dictionary, ColorStrategy.GRAYSCALE, 5, scale=2)
        assert sheet.shape == (8 * 11 + 1, 8 * 11 + 1, 3)
        assert sheet.dtype == np.uint8

    def test_raw_white_tile(self):
        """Test that an all-w_max raw feature renders white."""
        tile = render_channels(np.ones((3, 3, 3)), ColorStrategy.RAW_RGB)
        np.testing.assert_array_equal(tile, 255)

    def test_signed_map_span(self):
        """Test that on/off maps use mid-gray for zero and reach both ends."""
        channels = np.zeros((2, 2, 2))
        channels[0, 0, 0] = 0.8
        channels[1, 1, 1] = 0.8
        tile = render_channels(channels, ColorStrategy.GRAYSCALE)
        assert tile[0, 0, 0] == 255
        assert tile[1, 1, 0] == 0
        assert tile[0, 1, 0] == 128

    def test_color_strategies_render_rgb(self):
        """Test that opponent maps are mapped back to three color channels."""
        rng = np.random.default_rng(1)
        for strategy in (ColorStrategy.RGB_OPPONENT, ColorStrategy.BIO_COLOR):
            tile = render_channels(rng.uniform(size=(4, 4, strategy.n_channels)), strategy)
            assert tile.shape == (4, 4, 3)
            assert tile.min() >= 0 and tile.max() <= 255

    def test_export_per_group(self, tmp_path):
        """Test one pixmap per channel group for grayscale_plus_color."""
        rng = np.random.default_rng(2)
        dictionaries = [rng.uniform(size=(4, 18)), rng.uniform(size=(4, 36))]

        paths = export_filters(dictionaries, ColorStrategy.GRAYSCALE_PLUS_COLOR, 3, tmp_path / "filters.ppm")

        assert [p.name for p in paths] == ["filters-g0.ppm", "filters-g1.ppm"]
        assert read_pixmap(paths[0]).shape == (2 * 13 + 1, 2 * 13 + 1, 3)

    def test_row_length_checked(self):
        """Test that rows must match the patch geometry."""
        with pytest.raises(MetricsError):
            filter_sheet(np.zeros((4, 10)), ColorStrategy.GRAYSCALE, 3)
