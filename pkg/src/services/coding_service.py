"""
Coding service: DoG on/off filtering, color opponent channels, latency
encoding of patches into spike trains and decoding of output spikes.
"""
from typing import List, Optional, Sequence

import numpy as np
import structlog
from scipy import ndimage

from src.models.coding import ChannelStack, ColorStrategy, DogParams, FeatureVector, SpikeTrain
from src.models.image import LabeledImage

logger = structlog.get_logger(__name__)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
DECODE_TOLERANCE = 1e-9
# DoG responses below this peak are floating-point residue of flat images
SCALE_FLOOR = 1e-12


class CodingError(ValueError):
    """Raised on invalid coding inputs (kernel geometry, channel counts, value ranges)."""
    pass


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized size×size Gaussian sampled at integer offsets in [-size//2, size//2]."""
    if size < 1 or size % 2 == 0:
        raise CodingError(f"Kernel size must be a positive odd integer, got {size}")
    if sigma <= 0:
        raise CodingError(f"Kernel sigma must be positive, got {sigma}")
    mu = size // 2
    offsets = np.arange(-mu, mu + 1, dtype=np.float64)
    sq = offsets[:, None] ** 2 + offsets[None, :] ** 2
    kernel = np.exp(-sq / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def dog_kernel(p: DogParams) -> np.ndarray:
    return gaussian_kernel(p.size, p.center_sigma) - gaussian_kernel(p.size, p.surround_sigma)


def dog_filter(channel: np.ndarray, p: DogParams) -> np.ndarray:
    """Convolve an H×W map with (G_center - G_surround), replicate-edge padding."""
    return ndimage.convolve(np.asarray(channel, dtype=np.float64), dog_kernel(p), mode="nearest")


def on_off_split(dog_map: np.ndarray):
    """(max(0, v), max(0, -v)) elementwise."""
    return np.maximum(dog_map, 0.0), np.maximum(-dog_map, 0.0)


def _opponent_maps(pixels: np.ndarray, strategy: ColorStrategy) -> List[np.ndarray]:
    """Pre-DoG maps for pixels shaped (..., H, W, C)."""
    n_channels = pixels.shape[-1]
    if n_channels not in (1, 3):
        raise CodingError(f"Images must have 1 or 3 channels, got {n_channels}")
    needs_color = strategy in (
        ColorStrategy.RGB_OPPONENT,
        ColorStrategy.BIO_COLOR,
        ColorStrategy.GRAYSCALE_PLUS_COLOR,
        ColorStrategy.RAW_RGB,
    )
    if needs_color and n_channels != 3:
        raise CodingError(f"Strategy {strategy.value} needs RGB input, got {n_channels} channel(s)")

    pixels = np.asarray(pixels, dtype=np.float64)
    if n_channels == 1:
        luminance = pixels[..., 0]
    else:
        luminance = pixels @ LUMA_WEIGHTS
    if strategy in (ColorStrategy.GRAYSCALE, ColorStrategy.RAW_GRAY):
        return [luminance]

    r, g, b = pixels[..., 0], pixels[..., 1], pixels[..., 2]
    red_green = r - g
    yellow_blue = 0.5 * r + 0.5 * g - b
    if strategy == ColorStrategy.RGB_OPPONENT:
        return [r - g, g - b, b - r]
    if strategy == ColorStrategy.BIO_COLOR:
        return [red_green, yellow_blue]
    if strategy == ColorStrategy.GRAYSCALE_PLUS_COLOR:
        return [luminance, red_green, yellow_blue]
    return [r, g, b]


def color_transform(image: LabeledImage, strategy: ColorStrategy) -> List[np.ndarray]:
    """Luminance, opponent or raw channel maps of one image, before any DoG."""
    return _opponent_maps(image.pixels, ColorStrategy(strategy))


def _scale_jointly(channels: np.ndarray) -> np.ndarray:
    """Divide each image's channels (..., H, W, C) by their joint maximum."""
    peak = channels.max(axis=(-3, -2, -1), keepdims=True)
    flat = peak <= SCALE_FLOOR
    return np.where(flat, 0.0, channels / np.where(flat, 1.0, peak))


def encode_array(pixels: np.ndarray, strategy: ColorStrategy, p: DogParams) -> np.ndarray:
    """
    Code an N×H×W×C image array into N×H×W×C_in channel maps in [0,1].

    DoG strategies emit an (on, off) pair per opponent map, scaled per image
    by the joint maximum of the sub-stack they belong to. Raw strategies pass
    pixel values through, clipped to [0,1].
    """
    strategy = ColorStrategy(strategy)
    maps = _opponent_maps(pixels, strategy)
    if not strategy.uses_dog:
        return np.clip(np.stack(maps, axis=-1), 0.0, 1.0)

    # Kernel axis of length 1 over the image index keeps images independent
    kernel = dog_kernel(p)[None, :, :]
    coded = []
    for channel in maps:
        filtered = ndimage.convolve(channel, kernel, mode="nearest")
        coded.extend(on_off_split(filtered))
    stacked = np.stack(coded, axis=-1)

    bounds = np.cumsum((0,) + strategy.channel_groups)
    parts = [_scale_jointly(stacked[..., a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
    return np.concatenate(parts, axis=-1)


def encode_image(image: LabeledImage, strategy: ColorStrategy, p: DogParams) -> ChannelStack:
    strategy = ColorStrategy(strategy)
    channels = encode_array(image.pixels[None], strategy, p)[0]
    return ChannelStack(channels=channels, strategy=strategy)


def _check_unit_range(values: np.ndarray) -> None:
    if values.size and (np.isnan(values).any() or values.min() < 0.0 or values.max() > 1.0):
        raise CodingError(
            f"Latency coding needs values in [0,1], got range "
            f"[{np.nanmin(values):.6g}, {np.nanmax(values):.6g}]"
        )


def latency_times(values: np.ndarray, t_duration: float,
                  zero_latency_spikes: bool = False) -> np.ndarray:
    """
    Dense spike times t = (1 - x)·t_duration for values shaped (..., n_inputs).

    Inputs that do not spike get +inf; x = 0 spikes at t_duration only when
    `zero_latency_spikes` is set.
    """
    values = np.asarray(values, dtype=np.float64)
    _check_unit_range(values)
    times = (1.0 - values) * t_duration
    if not zero_latency_spikes:
        times = np.where(values > 0.0, times, np.inf)
    return times


def encode_latency(patch_channels: np.ndarray, t_duration: float,
                   zero_latency_spikes: bool = False) -> SpikeTrain:
    """
    One spike per active input of a w_p×w_p×C_in patch.

    Inputs are indexed in row-major (row, col, channel) order; events are
    sorted by time, simultaneous events by ascending input index.
    """
    flat = np.asarray(patch_channels, dtype=np.float64).reshape(-1)
    dense = latency_times(flat, t_duration, zero_latency_spikes)
    active = np.flatnonzero(np.isfinite(dense))
    order = np.argsort(dense[active], kind="stable")
    return SpikeTrain(
        times=dense[active][order],
        channels=active[order],
        t_duration=t_duration,
        n_inputs=flat.size,
    )


def decode_times(fire_times: np.ndarray, t_out_min: float, t_out_max: float) -> np.ndarray:
    """f = 1 - (t - t_out_min)/(t_out_max - t_out_min); +inf (no spike) decodes to 0."""
    if not t_out_min < t_out_max:
        raise CodingError(f"t_out_min ({t_out_min}) must be below t_out_max ({t_out_max})")
    times = np.asarray(fire_times, dtype=np.float64)
    present = np.isfinite(times)
    if present.any():
        observed = times[present]
        if observed.min() < t_out_min - DECODE_TOLERANCE or observed.max() > t_out_max + DECODE_TOLERANCE:
            raise CodingError(
                f"Output spike times [{observed.min():.6g}, {observed.max():.6g}] fall outside "
                f"[{t_out_min}, {t_out_max}]"
            )
    features = 1.0 - (np.where(present, times, t_out_max) - t_out_min) / (t_out_max - t_out_min)
    return np.clip(features, 0.0, 1.0)


def decode_features(output_spikes: Sequence[Optional[float]], n_f: int,
                    t_out_min: float, t_out_max: float) -> FeatureVector:
    """Decode one optional spike time per neuron into a feature vector."""
    if len(output_spikes) != n_f:
        raise CodingError(f"Expected {n_f} output slots, got {len(output_spikes)}")
    times = np.array([np.inf if t is None else t for t in output_spikes], dtype=np.float64)
    return FeatureVector(values=decode_times(times, t_out_min, t_out_max))
