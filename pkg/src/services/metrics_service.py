"""
Feature-quality analyses: sparseness, dictionary coherence, patch and image
reconstruction, weight histograms and filter sheet rendering.
"""
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from src.models.ae import AeState
from src.models.coding import ColorStrategy, DogParams
from src.models.image import LabeledImage, LabeledImageSet
from src.models.reports import CoherenceReport, ReconstructionReport, SparsenessReport, WeightHistogram
from src.models.snn import SnnState
from src.services.classify_service import ENCODE_CHUNK, FeatureExtractor, maps_from_channels
from src.services.coding_service import encode_array
from src.services.dataset_service import dense_patch_array
from src.services.storage_service import write_pixmap

logger = structlog.get_logger(__name__)

NEAR_DUPLICATE_COHERENCE = 0.999
ZERO_NORM = 1e-12

# Signed opponent map -> RGB; rows are the maps in channel order
_OPPONENT_MATRICES = {
    ColorStrategy.RGB_OPPONENT: np.array([
        [1.0, -1.0, 0.0],
        [0.0, 1.0, -1.0],
        [-1.0, 0.0, 1.0],
    ]),
    ColorStrategy.BIO_COLOR: np.array([
        [1.0, -1.0, 0.0],
        [0.5, 0.5, -1.0],
    ]),
}


class MetricsError(ValueError):
    """Raised on analysis inputs that have no defined measurement."""
    pass


def sparseness(values: np.ndarray) -> float:
    """(√n − L1/L2) / (√n − 1); a silent vector counts as maximally sparse."""
    return float(_sparseness_rows(np.asarray(values, dtype=np.float64)[None, :])[0])


def _sparseness_rows(features: np.ndarray) -> np.ndarray:
    n = features.shape[1]
    if n < 2:
        raise MetricsError(f"Sparseness needs at least 2 features, got {n}")
    l1 = np.abs(features).sum(axis=1)
    l2 = np.sqrt((features ** 2).sum(axis=1))
    silent = l2 == 0.0
    ratio = l1 / np.where(silent, 1.0, l2)
    root = np.sqrt(n)
    sp = np.where(silent, 1.0, (root - ratio) / (root - 1.0))
    return np.clip(sp, 0.0, 1.0)


def sparseness_report(features: np.ndarray) -> SparsenessReport:
    """Sparseness of every row of an n_samples × n_f feature matrix."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return SparsenessReport(values=_sparseness_rows(features))


def feature_sparseness(extractor: FeatureExtractor, channels: np.ndarray, w_p: int, s: int,
                       n_jobs: int = 1) -> SparsenessReport:
    """Sparseness of the feature vector at every dense position of coded N×H×W×C_in stacks."""
    parts: List[np.ndarray] = [np.zeros(0)] * len(channels)

    def measure(index: int) -> None:
        coded = np.asarray(channels[index], dtype=np.float64)
        maps = maps_from_channels(extractor, coded, w_p, s, image_id=index).maps
        parts[index] = _sparseness_rows(maps.reshape(-1, maps.shape[-1]))

    with ThreadPoolExecutor(max_workers=max(1, n_jobs)) as executor:
        list(executor.map(measure, range(len(channels))))
    return SparsenessReport(values=np.concatenate(parts) if parts else np.zeros(0))


def coherence_matrix(dictionary: np.ndarray) -> CoherenceReport:
    """
    Absolute cosine similarity between dictionary rows.

    Zero-norm rows cannot be normalized; they are left out of μ and listed
    as dead units.
    """
    dictionary = np.asarray(dictionary, dtype=np.float64)
    if dictionary.ndim != 2:
        raise MetricsError(f"Dictionary must be n_f × n_inputs, got shape {dictionary.shape}")
    norms = np.linalg.norm(dictionary, axis=1)
    alive = norms > ZERO_NORM
    dead = [int(i) for i in np.flatnonzero(~alive)]

    unit = dictionary[alive] / norms[alive, None]
    mu = np.clip(np.abs(unit @ unit.T), 0.0, 1.0)
    np.fill_diagonal(mu, 1.0)

    n = mu.shape[0]
    if n < 2:
        return CoherenceReport(mu=mu, mean=0.0, std=0.0, max_offdiag=0.0, near_duplicates=0, dead_units=dead)
    upper = mu[np.triu_indices(n, k=1)]
    return CoherenceReport(
        mu=mu,
        mean=float(upper.mean()),
        std=float(upper.std()),
        max_offdiag=float(upper.max()),
        near_duplicates=int(np.sum(upper >= NEAR_DUPLICATE_COHERENCE)),
        dead_units=dead,
    )


def reconstruct_patch(extractor: FeatureExtractor, patch: np.ndarray) -> np.ndarray:
    """Reconstruction of one coded w_p×w_p×C_in patch from its own features."""
    batch = np.asarray(patch, dtype=np.float64)[None]
    return extractor.reconstruct(batch, extractor.transform(batch))[0]


def reconstruct_channels(extractor: FeatureExtractor, channels: np.ndarray, w_p: int,
                         s: int) -> Tuple[np.ndarray, float]:
    """
    Overlap-averaged dense reconstruction of a coded H×W×C_in image.

    Returns the reconstruction and its sum of squared errors over the pixels
    covered by at least one patch. Uncovered pixels are left at zero.
    """
    windows = dense_patch_array(channels, w_p, s)
    k_rows, k_cols = windows.shape[:2]
    flat = windows.reshape((k_rows * k_cols,) + windows.shape[2:])
    recon = extractor.reconstruct(flat, extractor.transform(flat)).reshape(windows.shape)

    total = np.zeros(channels.shape, dtype=np.float64)
    counts = np.zeros(channels.shape[:2], dtype=np.float64)
    row_span = s * (k_rows - 1) + 1
    col_span = s * (k_cols - 1) + 1
    for a in range(w_p):
        for b in range(w_p):
            total[a:a + row_span:s, b:b + col_span:s] += recon[:, :, a, b]
            counts[a:a + row_span:s, b:b + col_span:s] += 1.0

    covered = counts > 0
    averaged = np.zeros_like(total)
    averaged[covered] = total[covered] / counts[covered][:, None]
    error = float(np.sum((channels[covered] - averaged[covered]) ** 2))
    return averaged, error


def reconstruct_image(extractor: FeatureExtractor, image: LabeledImage, strategy: ColorStrategy,
                      w_p: int, s: int, dog: Optional[DogParams] = None) -> Tuple[np.ndarray, float]:
    """Code the image, then reconstruct it in the coded space."""
    channels = encode_array(image.pixels[None], strategy, dog or DogParams())[0]
    return reconstruct_channels(extractor, channels, w_p, s)


def reconstruction_errors(extractor: FeatureExtractor, channels: np.ndarray, w_p: int, s: int,
                          n_jobs: int = 1) -> np.ndarray:
    """Sum of squared reconstruction errors of every coded N×H×W×C_in stack."""
    errors = np.zeros(len(channels), dtype=np.float64)

    def measure(index: int) -> None:
        coded = np.asarray(channels[index], dtype=np.float64)
        errors[index] = reconstruct_channels(extractor, coded, w_p, s)[1]

    with ThreadPoolExecutor(max_workers=max(1, n_jobs)) as executor:
        list(executor.map(measure, range(len(channels))))
    return errors


def reconstruction_report(extractor: FeatureExtractor, image_set: LabeledImageSet, strategy: ColorStrategy,
                          w_p: int, s: int, dog: Optional[DogParams] = None,
                          n_jobs: int = 1) -> ReconstructionReport:
    """Per-image reconstruction errors over a whole image set."""
    dog = dog or DogParams()
    blocks = [
        reconstruction_errors(
            extractor, encode_array(image_set.pixels[start:start + ENCODE_CHUNK], strategy, dog), w_p, s, n_jobs
        )
        for start in range(0, len(image_set), ENCODE_CHUNK)
    ]
    report = ReconstructionReport(errors=np.concatenate(blocks) if blocks else np.zeros(0))
    logger.info("Reconstruction measured", images=len(image_set), mean_error=report.mean)
    return report


def weight_histogram(state: Union[SnnState, AeState], bins: int) -> WeightHistogram:
    """SNN weights binned over [w_min, w_max]; AE encoder weights over their own range."""
    if bins < 2:
        raise MetricsError(f"Histogram needs at least 2 bins, got {bins}")
    if isinstance(state, SnnState):
        values = state.weights
        bounds = (state.config.w_min, state.config.w_max)
    else:
        values = state.w_enc
        bounds = (float(values.min()), float(values.max()))
    counts, edges = np.histogram(values, bins=bins, range=bounds)
    return WeightHistogram(edges=edges, counts=counts)


def group_strategies(strategy: ColorStrategy) -> List[ColorStrategy]:
    """Strategy that describes each channel group on its own."""
    strategy = ColorStrategy(strategy)
    if strategy == ColorStrategy.GRAYSCALE_PLUS_COLOR:
        return [ColorStrategy.GRAYSCALE, ColorStrategy.BIO_COLOR]
    return [strategy]


def render_channels(channels: np.ndarray, strategy: ColorStrategy) -> np.ndarray:
    """
    Render an H×W×C map of one channel group as H×W×3 uint8.

    On/off pairs become signed maps (on minus off) around mid-gray, mapped to
    RGB through the opponent transform. Raw channels are shown as intensities.
    """
    strategy = ColorStrategy(strategy)
    channels = np.asarray(channels, dtype=np.float64)
    if channels.shape[-1] != strategy.n_channels:
        raise MetricsError(
            f"{strategy.value} maps have {strategy.n_channels} channels, got {channels.shape[-1]}"
        )

    if not strategy.uses_dog:
        low = min(float(channels.min()), 0.0)
        span = float(channels.max()) - low
        unit = (channels - low) / span if span > 0 else np.zeros_like(channels)
    else:
        signed = channels[..., 0::2] - channels[..., 1::2]
        matrix = _OPPONENT_MATRICES.get(strategy)
        if matrix is not None:
            signed = signed @ np.linalg.pinv(matrix).T
        peak = float(np.abs(signed).max())
        unit = 0.5 + 0.5 * signed / peak if peak > 0 else np.full_like(signed, 0.5)

    if unit.shape[-1] == 1:
        unit = np.repeat(unit, 3, axis=-1)
    return np.round(np.clip(unit, 0.0, 1.0) * 255.0).astype(np.uint8)


def filter_sheet(dictionary: np.ndarray, strategy: ColorStrategy, w_p: int, scale: int = 4) -> np.ndarray:
    """
    One tile per dictionary row, ceil(√n_f) tiles per row, 1-pixel black
    separators. Every tile is normalized on its own.
    """
    n_f = dictionary.shape[0]
    strategy = ColorStrategy(strategy)
    if dictionary.shape[1] != w_p * w_p * strategy.n_channels:
        raise MetricsError(
            f"Rows of length {dictionary.shape[1]} do not match {w_p}×{w_p}×{strategy.n_channels} patches"
        )
    cols = int(np.ceil(np.sqrt(n_f)))
    rows = int(np.ceil(n_f / cols))
    tile = w_p * scale
    sheet = np.zeros((rows * (tile + 1) + 1, cols * (tile + 1) + 1, 3), dtype=np.uint8)
    for index, row in enumerate(dictionary):
        rendered = render_channels(row.reshape(w_p, w_p, strategy.n_channels), strategy)
        rendered = rendered.repeat(scale, axis=0).repeat(scale, axis=1)
        top = 1 + (index // cols) * (tile + 1)
        left = 1 + (index % cols) * (tile + 1)
        sheet[top:top + tile, left:left + tile] = rendered
    return sheet


def export_filters(dictionaries: Sequence[np.ndarray], strategy: ColorStrategy, w_p: int,
                   path: Path, scale: int = 4) -> List[Path]:
    """Write one filter sheet per channel group; several groups get numbered files."""
    path = Path(path)
    strategies = group_strategies(strategy)
    if len(strategies) != len(dictionaries):
        raise MetricsError(f"{strategy} has {len(strategies)} channel groups, got {len(dictionaries)} dictionaries")
    written = []
    for index, (dictionary, group) in enumerate(zip(dictionaries, strategies)):
        target = path if len(strategies) == 1 else path.with_name(f"{path.stem}-g{index}{path.suffix}")
        written.append(write_pixmap(target, filter_sheet(np.asarray(dictionary), group, w_p, scale)))
    logger.info("Filter sheets written", files=[str(p) for p in written])
    return written


def render_coded_image(channels: np.ndarray, strategy: ColorStrategy) -> np.ndarray:
    """Side-by-side rendering of each channel group of a coded image."""
    strategy = ColorStrategy(strategy)
    bounds = np.cumsum((0,) + strategy.channel_groups)
    panels = [
        render_channels(channels[..., a:b], group)
        for group, a, b in zip(group_strategies(strategy), bounds[:-1], bounds[1:])
    ]
    return np.concatenate(panels, axis=1)
