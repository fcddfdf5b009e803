"""
Unit tests for dataset loaders, grayscale conversion and patch sampling.
"""
import numpy as np
import pytest

from src.models.image import LabeledImageSet, Split
from src.services.dataset_service import (
    DatasetFormatError,
    DatasetNotFoundError,
    PatchGeometryError,
    dense_patch_array,
    dense_patches,
    grayscale_set,
    grid_side,
    load_cifar10,
    load_cifar100,
    load_stl10,
    make_synthetic,
    sample_patches,
    save_cifar_records,
    to_grayscale,
)


def _cifar_record(label: int, fill) -> bytes:
    """One CIFAR-10 record whose R, G, B planes hold constant values."""
    planes = [np.full(1024, v, dtype=np.uint8) for v in fill]
    return bytes([label]) + b"".join(p.tobytes() for p in planes)


class TestCifarLoaders:
    """Test cases for the CIFAR binary loaders."""

    def test_single_file_layout(self, tmp_path):
        """Test that labels and channel-planar pixels are decoded."""
        path = tmp_path / "test_batch.bin"
        path.write_bytes(_cifar_record(3, (255, 0, 51)) + _cifar_record(7, (0, 255, 0)))

        image_set = load_cifar10(path, Split.TEST)

        assert len(image_set) == 2
        assert image_set.labels.tolist() == [3, 7]
        assert image_set.image_shape == (32, 32, 3)
        np.testing.assert_allclose(image_set.pixels[0, 5, 9], [1.0, 0.0, 0.2], atol=1e-6)
        np.testing.assert_allclose(image_set.pixels[1, 31, 0], [0.0, 1.0, 0.0], atol=1e-6)

    def test_row_major_pixel_order(self, tmp_path):
        """Test that pixel bytes inside a plane are row-major."""
        red = np.zeros(1024, dtype=np.uint8)
        red[1 * 32 + 4] = 255  # row 1, col 4
        record = bytes([0]) + red.tobytes() + bytes(2048)
        path = tmp_path / "one.bin"
        path.write_bytes(record)

        image_set = load_cifar10(path, Split.TRAIN)

        assert image_set.pixels[0, 1, 4, 0] == pytest.approx(1.0)
        assert image_set.pixels[0, 4, 1, 0] == 0.0

    def test_directory_split_files(self, tmp_path):
        """Test that a train directory concatenates its five batches."""
        for i in range(1, 6):
            (tmp_path / f"data_batch_{i}.bin").write_bytes(_cifar_record(i, (0, 0, 0)))

        image_set = load_cifar10(tmp_path, Split.TRAIN)

        assert image_set.labels.tolist() == [1, 2, 3, 4, 5]
        assert image_set.split == Split.TRAIN

    def test_truncated_file(self, tmp_path):
        """Test that a partial record is rejected."""
        path = tmp_path / "bad.bin"
        path.write_bytes(_cifar_record(1, (0, 0, 0))[:-1])

        with pytest.raises(DatasetFormatError):
            load_cifar10(path, Split.TEST)

    def test_empty_file(self, tmp_path):
        """Test that an empty file is a record-count error."""
        path = tmp_path / "empty.bin"
        path.write_bytes(b"")

        with pytest.raises(DatasetFormatError):
            load_cifar10(path, Split.TEST)

    def test_out_of_range_label(self, tmp_path):
        """Test that CIFAR-10 labels above 9 are rejected."""
        path = tmp_path / "bad_label.bin"
        path.write_bytes(_cifar_record(10, (0, 0, 0)))

        with pytest.raises(DatasetFormatError, match="label 10"):
            load_cifar10(path, Split.TEST)

    def test_missing_directory(self, tmp_path):
        """Test that a missing path raises DatasetNotFoundError."""
        with pytest.raises(DatasetNotFoundError):
            load_cifar10(tmp_path / "nope", Split.TEST)

    def test_cifar100_uses_fine_label(self, tmp_path):
        """Test that the second label byte is the class label."""
        record = bytes([4, 87]) + bytes(3072)
        path = tmp_path / "test.bin"
        path.write_bytes(record)

        image_set = load_cifar100(path, Split.TEST)

        assert image_set.labels.tolist() == [87]
        assert image_set.n_classes == 100

    def test_save_and_reload_records(self, tmp_path):
        """Test that written records load back to the same set."""
        image_set = make_synthetic(6, 32, 3, seed=2)
        path = save_cifar_records(image_set, tmp_path / "fixture" / "test_batch.bin")

        loaded = load_cifar10(path, Split.TEST)

        np.testing.assert_array_equal(loaded.labels, image_set.labels)
        np.testing.assert_allclose(loaded.pixels, image_set.pixels, atol=0.5 / 255 + 1e-6)


class TestStl10Loader:
    """Test cases for the STL-10 loader."""

    def _write(self, root, image: np.ndarray, labels: bytes):
        # Column-major inside each channel
        planes = image.transpose(2, 1, 0).astype(np.uint8)
        (root / "test_X.bin").write_bytes(planes.tobytes())
        (root / "test_y.bin").write_bytes(labels)

    def test_column_major_order_and_labels(self, tmp_path):
        """Test the channel-separated column-major layout and 1-indexed labels."""
        image = np.zeros((96, 96, 3), dtype=np.uint8)
        image[2, 40, 1] = 255
        self._write(tmp_path, image, bytes([10]))

        image_set = load_stl10(tmp_path, Split.TEST)

        assert image_set.labels.tolist() == [9]
        assert image_set.pixels[0, 2, 40, 1] == pytest.approx(1.0)
        assert image_set.pixels[0, 40, 2, 1] == 0.0

    def test_zero_label_rejected(self, tmp_path):
        """Test that label 0 is outside the 1..10 range."""
        self._write(tmp_path, np.zeros((96, 96, 3), dtype=np.uint8), bytes([0]))

        with pytest.raises(DatasetFormatError):
            load_stl10(tmp_path, Split.TEST)

    def test_label_count_mismatch(self, tmp_path):
        """Test that image and label counts must agree."""
        self._write(tmp_path, np.zeros((96, 96, 3), dtype=np.uint8), bytes([1, 2]))

        with pytest.raises(DatasetFormatError):
            load_stl10(tmp_path, Split.TEST)


class TestGrayscaleAndPatches:
    """Test cases for grayscale conversion and patch extraction."""

    def setup_method(self):
        """Set up a small RGB set."""
        self.image_set = make_synthetic(4, 12, 2, seed=5)

    def test_grayscale_weights(self):
        """Test BT.601 luminance of pure colors."""
        pixels = np.zeros((1, 3, 3), dtype=np.float64)
        pixels[0, 0] = [1, 0, 0]
        pixels[0, 1] = [0, 1, 0]
        pixels[0, 2] = [1, 1, 1]
        image_set = LabeledImageSet(pixels[None], np.array([0]), Split.TEST, 1)

        gray = to_grayscale(image_set[0])

        assert gray.channels == 1
        np.testing.assert_allclose(gray.pixels[0, :, 0], [0.299, 0.587, 1.0])

    def test_grayscale_set(self):
        """Test whole-set conversion keeps labels and matches per-image conversion."""
        gray_set = grayscale_set(self.image_set)

        assert gray_set.pixels.shape == (4, 12, 12, 1)
        assert gray_set.name.endswith("-bw")
        np.testing.assert_array_equal(gray_set.labels, self.image_set.labels)
        np.testing.assert_allclose(gray_set.pixels[2], to_grayscale(self.image_set[2]).pixels, rtol=1e-6, atol=1e-6)

        with pytest.raises(ValueError):
            grayscale_set(gray_set)

    def test_sampled_patches_deterministic(self):
        """Test that a seed fixes the patch list."""
        first = sample_patches(self.image_set, 20, 5, seed=11)
        second = sample_patches(self.image_set, 20, 5, seed=11)

        assert [p.origin for p in first] == [p.origin for p in second]
        for patch in first:
            image, row, col = patch.origin
            assert patch.side == 5
            assert 0 <= row <= 7 and 0 <= col <= 7
            np.testing.assert_array_equal(
                patch.values, self.image_set.pixels[image, row:row + 5, col:col + 5]
            )

    def test_patch_larger_than_image(self):
        """Test that an oversized patch raises PatchGeometryError."""
        with pytest.raises(PatchGeometryError):
            sample_patches(self.image_set, 5, 13, seed=0)

    def test_grid_side(self):
        """Test k = floor((side - w_p)/s) + 1."""
        assert grid_side(32, 5, 1) == 28
        assert grid_side(96, 5, 1) == 92
        assert grid_side(10, 5, 2) == 3

    def test_dense_patches_match_slices(self):
        """Test that dense windows equal direct slices, row-major by origin."""
        image = self.image_set[1]
        grid = dense_patches(image, 5, 2)

        assert len(grid) == 4 and len(grid[0]) == 4
        patch = grid[2][3]
        assert patch.origin == (1, 4, 6)
        np.testing.assert_array_equal(patch.values, image.pixels[4:9, 6:11])

    def test_dense_patch_array_shape(self):
        """Test the k×k×w_p×w_p×C layout."""
        windows = dense_patch_array(self.image_set.pixels[0], 5, 1)

        assert windows.shape == (8, 8, 5, 5, 3)


class TestSyntheticSet:
    """Test cases for the synthetic fixture generator."""

    def test_balanced_and_deterministic(self):
        """Test class balance, value range and determinism."""
        first = make_synthetic(40, 16, 4, seed=9)
        second = make_synthetic(40, 16, 4, seed=9)

        np.testing.assert_array_equal(first.pixels, second.pixels)
        assert np.bincount(first.labels).tolist() == [10, 10, 10, 10]
        assert first.pixels.min() >= 0.0 and first.pixels.max() <= 1.0

    def test_split_seeds_differ(self):
        """Test that different seeds give different images."""
        first = make_synthetic(10, 16, 2, seed=1)
        second = make_synthetic(10, 16, 2, seed=2)

        assert not np.array_equal(first.pixels, second.pixels)
