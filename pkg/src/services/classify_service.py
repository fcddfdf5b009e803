"""
Classification protocol: dense feature maps, sum pooling into image
descriptors and one-vs-rest linear SVMs over standardized descriptors.
"""
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Protocol, Tuple

import numpy as np
import structlog
from sklearn.metrics import confusion_matrix
from sklearn.svm import LinearSVC

from src.models.classify import DescriptorSet, Evaluation, FeatureMaps, ImageDescriptor, LinearModel
from src.models.coding import ColorStrategy, DogParams
from src.models.image import LabeledImage, LabeledImageSet
from src.services.coding_service import encode_array
from src.services.dataset_service import dense_patch_array, grid_side
from src.utils.observability import DESCRIPTORS_BUILT
from src.utils.rng import make_rng

logger = structlog.get_logger(__name__)

# Images coded per encode_array call while building descriptors
ENCODE_CHUNK = 256


class ClassifierError(ValueError):
    """Raised on invalid descriptor or classifier inputs."""
    pass


class FeatureExtractor(Protocol):
    """A frozen patch dictionary (SNN or AE), one model per channel group."""

    @property
    def n_features(self) -> int: ...

    @property
    def channel_groups(self) -> Tuple[int, ...]: ...

    def transform(self, patches: np.ndarray) -> np.ndarray: ...

    def reconstruct(self, patches: np.ndarray, features: np.ndarray) -> np.ndarray: ...

    def dictionaries(self) -> List[np.ndarray]: ...


def maps_from_channels(extractor: FeatureExtractor, channels: np.ndarray, w_p: int, s: int,
                       image_id: int = 0) -> FeatureMaps:
    """Feature maps of an already coded H×W×C_in image."""
    expected = sum(extractor.channel_groups)
    if channels.shape[2] != expected:
        raise ClassifierError(f"Coded image has {channels.shape[2]} channels, extractor expects {expected}")
    windows = dense_patch_array(channels, w_p, s)
    k_rows, k_cols = windows.shape[:2]
    features = extractor.transform(windows.reshape((k_rows * k_cols,) + windows.shape[2:]))
    return FeatureMaps(maps=features.reshape(k_rows, k_cols, -1), image_id=image_id)


def extract_maps(extractor: FeatureExtractor, image: LabeledImage, strategy: ColorStrategy,
                 w_p: int, s: int, dog: Optional[DogParams] = None) -> FeatureMaps:
    """Code the image once, then run the extractor on every dense patch."""
    channels = encode_array(image.pixels[None], strategy, dog or DogParams())[0]
    return maps_from_channels(extractor, channels, w_p, s, image_id=image.source_id)


def pool_edges(k: int, r: int) -> np.ndarray:
    """Cell boundaries round(k·i/r), i = 0..r, rounding halves up."""
    if r < 1:
        raise ClassifierError(f"Pooling grid must be >= 1, got {r}")
    if r > k:
        raise ClassifierError(f"Pooling grid {r} exceeds feature map side {k}")
    return np.floor(k * np.arange(r + 1) / r + 0.5).astype(int)


def sum_pool(maps: FeatureMaps, r: int, label: int = 0) -> ImageDescriptor:
    """Sum each of the r×r cells; cells concatenated row-major."""
    rows = pool_edges(maps.maps.shape[0], r)[:-1]
    cols = pool_edges(maps.maps.shape[1], r)[:-1]
    pooled = np.add.reduceat(np.add.reduceat(maps.maps, rows, axis=0), cols, axis=1)
    return ImageDescriptor(values=pooled.reshape(-1), label=int(label))


def describe_channels(extractor: FeatureExtractor, channels: np.ndarray, w_p: int, s: int, r: int,
                      n_jobs: int = 1, first_id: int = 0) -> np.ndarray:
    """Pooled descriptors (N × r²·n_f) of already coded N×H×W×C_in stacks."""
    pool_edges(grid_side(channels.shape[1], w_p, s), r)
    values = np.zeros((len(channels), r * r * extractor.n_features), dtype=np.float64)

    def describe(index: int) -> None:
        coded = np.asarray(channels[index], dtype=np.float64)
        maps = maps_from_channels(extractor, coded, w_p, s, image_id=first_id + index)
        values[index] = sum_pool(maps, r).values

    # The extractor is read-only, so the thread count never changes the result
    with ThreadPoolExecutor(max_workers=max(1, n_jobs)) as executor:
        list(executor.map(describe, range(len(channels))))
    return values


def descriptors_from_channels(extractor: FeatureExtractor, channels: np.ndarray, labels: np.ndarray,
                              n_classes: int, w_p: int, s: int, r: int, n_jobs: int = 1) -> DescriptorSet:
    """Descriptors of a cached channel stack, read ENCODE_CHUNK images at a time."""
    blocks = [
        describe_channels(extractor, channels[start:start + ENCODE_CHUNK], w_p, s, r, n_jobs, first_id=start)
        for start in range(0, len(channels), ENCODE_CHUNK)
    ]
    values = np.concatenate(blocks) if blocks else np.zeros((0, r * r * extractor.n_features))
    DESCRIPTORS_BUILT.labels(extractor=type(extractor).__name__).inc(len(channels))
    logger.info("Descriptors built", images=len(channels), dim=values.shape[1], n_jobs=n_jobs)
    return DescriptorSet(values=values, labels=np.asarray(labels, dtype=np.int64), n_classes=n_classes)


def build_descriptors(extractor: FeatureExtractor, image_set: LabeledImageSet, strategy: ColorStrategy,
                      w_p: int, s: int, r: int, dog: Optional[DogParams] = None,
                      n_jobs: int = 1) -> DescriptorSet:
    """
    Descriptor of every image, in set order.

    Images are coded in chunks of ENCODE_CHUNK; each chunk is pooled in a
    thread pool of `n_jobs` workers.
    """
    dog = dog or DogParams()
    pool_edges(grid_side(image_set.pixels.shape[1], w_p, s), r)
    blocks = []
    for start in range(0, len(image_set), ENCODE_CHUNK):
        chunk = encode_array(image_set.pixels[start:start + ENCODE_CHUNK], strategy, dog)
        blocks.append(describe_channels(extractor, chunk, w_p, s, r, n_jobs, first_id=start))
    values = np.concatenate(blocks) if blocks else np.zeros((0, r * r * extractor.n_features))

    DESCRIPTORS_BUILT.labels(extractor=type(extractor).__name__).inc(len(image_set))
    logger.info("Descriptors built", images=len(image_set), dim=values.shape[1], n_jobs=n_jobs)
    return DescriptorSet(values=values, labels=image_set.labels.astype(np.int64), n_classes=image_set.n_classes)


def raw_descriptors_from_channels(channels: np.ndarray, labels: np.ndarray, n_classes: int) -> DescriptorSet:
    """Raw-pixel baseline over a cached channel stack: one flattened image per row."""
    values = np.asarray(channels, dtype=np.float64).reshape(len(channels), -1)
    DESCRIPTORS_BUILT.labels(extractor="raw_pixels").inc(len(channels))
    return DescriptorSet(values=values, labels=np.asarray(labels, dtype=np.int64), n_classes=n_classes)


def build_raw_descriptors(image_set: LabeledImageSet, strategy: ColorStrategy,
                          dog: Optional[DogParams] = None) -> DescriptorSet:
    """Raw-pixel baseline: the flattened coded image is the descriptor."""
    dog = dog or DogParams()
    blocks = [
        encode_array(image_set.pixels[start:start + ENCODE_CHUNK], strategy, dog).reshape(
            min(ENCODE_CHUNK, len(image_set) - start), -1
        )
        for start in range(0, len(image_set), ENCODE_CHUNK)
    ]
    values = np.concatenate(blocks) if blocks else np.zeros((0, 0))
    DESCRIPTORS_BUILT.labels(extractor="raw_pixels").inc(len(image_set))
    return DescriptorSet(values=values, labels=image_set.labels.astype(np.int64), n_classes=image_set.n_classes)


def _standardization(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = values.mean(axis=0)
    scale = values.std(axis=0)
    return mean, np.where(scale > 0, scale, 1.0)


def _one_vs_rest_targets(labels: np.ndarray, classes: np.ndarray) -> np.ndarray:
    return np.where(labels[:, None] == classes[None, :], 1.0, -1.0)


def dual_coordinate_descent(x: np.ndarray, y: np.ndarray, C: float, max_iter: int = 1000,
                            tol: float = 1e-4, seed: int = 0,
                            random_init: bool = False) -> Tuple[np.ndarray, int]:
    """
    L1-loss (hinge) linear SVM dual coordinate descent, all one-vs-rest
    problems at once.

    x is n×d (bias column already appended), y is n×m with ±1 targets for m
    binary problems. Returns the m×d weights and the number of passes used.
    Stops when the projected-gradient spread of a pass drops below `tol`.
    """
    n, d = x.shape
    m = y.shape[1]
    rng = make_rng(seed)
    q_diag = np.einsum("ij,ij->i", x, x)
    alpha = rng.uniform(0.0, C, size=(n, m)) if random_init else np.zeros((n, m))
    w = (alpha * y).T @ x

    passes = 0
    for passes in range(1, max_iter + 1):
        pg_max = np.full(m, -np.inf)
        pg_min = np.full(m, np.inf)
        for i in rng.permutation(n):
            if q_diag[i] <= 0.0:
                continue
            xi, yi, ai = x[i], y[i], alpha[i]
            grad = yi * (w @ xi) - 1.0
            pg = np.where(ai <= 0.0, np.minimum(grad, 0.0), np.where(ai >= C, np.maximum(grad, 0.0), grad))
            np.maximum(pg_max, pg, out=pg_max)
            np.minimum(pg_min, pg, out=pg_min)
            moving = np.abs(pg) > 1e-12
            if not moving.any():
                continue
            new_alpha = np.clip(ai - grad / q_diag[i], 0.0, C)
            step = np.where(moving, new_alpha - ai, 0.0)
            alpha[i] = ai + step
            w += (step * yi)[:, None] * xi[None, :]
        if np.all(pg_max - pg_min < tol):
            break
    return w, passes


def primal_objective(coef: np.ndarray, intercept: np.ndarray, values: np.ndarray,
                     targets: np.ndarray, C: float) -> np.ndarray:
    """½‖[w, b]‖² + C·Σ hinge, per one-vs-rest problem (bias regularized)."""
    margins = targets * (values @ coef.T + intercept)
    hinge = np.maximum(0.0, 1.0 - margins).sum(axis=0)
    return 0.5 * (np.sum(coef ** 2, axis=1) + intercept ** 2) + C * hinge


def train_linear(descriptors: DescriptorSet, C: float = 1.0, solver: str = "dual_cd",
                 max_iter: int = 1000, tol: float = 1e-4, seed: int = 0,
                 random_init: bool = False) -> LinearModel:
    """
    Fit one-vs-rest hinge-loss linear SVMs on z-scored descriptors.

    `dual_cd` runs the in-package coordinate descent; `liblinear` delegates to
    scikit-learn's LinearSVC with the same loss.
    """
    classes = np.unique(descriptors.labels)
    if len(classes) < 2:
        raise ClassifierError(f"Training needs at least 2 classes, got {len(classes)}")
    mean, scale = _standardization(descriptors.values)
    x = (descriptors.values - mean) / scale

    if solver == "dual_cd":
        targets = _one_vs_rest_targets(descriptors.labels, classes)
        augmented = np.hstack([x, np.ones((len(x), 1))])
        w, passes = dual_coordinate_descent(augmented, targets, C, max_iter, tol, seed, random_init)
        coef, intercept = w[:, :-1], w[:, -1]
        if passes >= max_iter:
            logger.warning("Dual coordinate descent hit max_iter", max_iter=max_iter)
    elif solver == "liblinear":
        svm = LinearSVC(C=C, loss="hinge", dual=True, max_iter=max_iter, tol=tol, random_state=seed)
        svm.fit(x, descriptors.labels)
        coef, intercept = svm.coef_, svm.intercept_
        if len(classes) == 2:
            coef = np.vstack([-coef, coef])
            intercept = np.concatenate([-intercept, intercept])
        passes = int(np.max(svm.n_iter_))
    else:
        raise ClassifierError(f"Unknown solver {solver!r}")

    logger.info(
        "Linear classifier trained",
        solver=solver,
        classes=len(classes),
        samples=len(x),
        dim=x.shape[1],
        passes=passes,
    )
    return LinearModel(coef=coef, intercept=intercept, classes=classes, mean=mean, scale=scale, C=C)


def evaluate(model: LinearModel, descriptors: DescriptorSet) -> Evaluation:
    """Accuracy and n_classes×n_classes confusion matrix (rows are true labels)."""
    if len(descriptors) == 0:
        raise ClassifierError("Cannot evaluate on an empty descriptor set")
    predicted = model.predict(descriptors.values)
    accuracy = float(np.mean(predicted == descriptors.labels))
    confusion = confusion_matrix(descriptors.labels, predicted, labels=np.arange(descriptors.n_classes))
    return Evaluation(accuracy=accuracy, confusion=confusion, n_samples=len(descriptors))
