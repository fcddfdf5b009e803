"""
Storage service: versioned binary files for dictionaries, channel caches,
descriptors and linear models, plus CSV tables, pixmaps and run manifests.

Every binary file starts with a 4-byte magic and a little-endian u16 version.
"""
import csv
import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from src.models.ae import PARAMETER_NAMES, AeConfig, AeState
from src.models.classify import DescriptorSet, LinearModel
from src.models.coding import ColorStrategy
from src.models.run import RunManifest
from src.models.snn import SnnConfig, SnnState

logger = structlog.get_logger(__name__)

DICTIONARY_MAGIC = b"SFWD"
CHANNEL_CACHE_MAGIC = b"SFWC"
DESCRIPTOR_MAGIC = b"SFDS"
MODEL_MAGIC = b"SFLM"
FORMAT_VERSION = 1

KIND_SNN = 1
KIND_AE = 2
SNN_ARRAYS = ("weights", "delays", "thresholds")

# magic, version, n, height, width, channels, strategy tag
_CACHE_HEADER = struct.Struct("<4sHIIIIB")
# magic, version, n, dim, n_classes
_DESCRIPTOR_HEADER = struct.Struct("<4sHIII")
# Exactly one whitespace byte separates the maxval from the raster
_PIXMAP_HEADER = re.compile(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s")

State = Union[SnnState, AeState]


class StorageFormatError(ValueError):
    """Raised when a stored file has the wrong magic, version or length."""
    pass


class _Reader:
    """Bounds-checked cursor over a byte buffer."""

    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.path = path
        self.offset = 0

    def read(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise StorageFormatError(
                f"{self.path}: truncated, needed {size} bytes at offset {self.offset}"
            )
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))

    def array(self) -> np.ndarray:
        (ndim,) = self.unpack("<B")
        shape = self.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.read(8 * count), dtype="<f8").reshape(shape).astype(np.float64)


def _write_array(f: BinaryIO, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype="<f8")
    f.write(struct.pack("<B", array.ndim))
    if array.ndim:
        f.write(struct.pack(f"<{array.ndim}I", *array.shape))
    f.write(array.tobytes())


def _write_container(path: Path, magic: bytes, kind: int, header: Dict[str, Any],
                     arrays: Iterable[np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<4sHBI", magic, FORMAT_VERSION, kind, len(blob)))
        f.write(blob)
        for array in arrays:
            _write_array(f, array)
    return path


def _read_container(path: Path, magic: bytes) -> Tuple[int, Dict[str, Any], _Reader]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"No such file: {path}")
    reader = _Reader(path.read_bytes(), path)
    found, version, kind, length = reader.unpack("<4sHBI")
    if found != magic:
        raise StorageFormatError(f"{path}: bad magic {found!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise StorageFormatError(f"{path}: unknown format version {version}")
    try:
        header = json.loads(reader.read(length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise StorageFormatError(f"{path}: unreadable header block: {e}") from e
    return kind, header, reader


@dataclass
class StoredDictionary:
    """A trained dictionary: one state per channel group of `strategy`."""

    kind: str
    strategy: ColorStrategy
    states: List[State]
    meta: Dict[str, Any] = field(default_factory=dict)


def save_dictionary(path: Path, states: Sequence[State], strategy: ColorStrategy,
                    meta: Optional[Dict[str, Any]] = None) -> Path:
    """Write SNN or AE states (all of one kind) with their configs."""
    if not states:
        raise StorageFormatError("A dictionary needs at least one state")
    is_snn = isinstance(states[0], SnnState)
    if any(isinstance(s, SnnState) != is_snn for s in states):
        raise StorageFormatError("Cannot mix SNN and AE states in one dictionary")

    names = SNN_ARRAYS if is_snn else PARAMETER_NAMES
    header = {
        "strategy": ColorStrategy(strategy).value,
        "meta": meta or {},
        "parts": [
            {"config": s.config.model_dump(mode="json", by_alias=True), "arrays": list(names)}
            for s in states
        ],
    }
    arrays = [getattr(s, name) for s in states for name in names]
    path = _write_container(path, DICTIONARY_MAGIC, KIND_SNN if is_snn else KIND_AE, header, arrays)
    logger.debug("Dictionary saved", path=str(path), kind="snn" if is_snn else "ae", parts=len(states))
    return path


def load_dictionary(path: Path) -> StoredDictionary:
    kind, header, reader = _read_container(path, DICTIONARY_MAGIC)
    if kind not in (KIND_SNN, KIND_AE):
        raise StorageFormatError(f"{path}: unknown dictionary kind {kind}")
    states: List[State] = []
    for part in header["parts"]:
        arrays = {name: reader.array() for name in part["arrays"]}
        if kind == KIND_SNN:
            states.append(SnnState(config=SnnConfig.model_validate(part["config"]), **arrays))
        else:
            states.append(AeState(config=AeConfig.model_validate(part["config"]), **arrays))
    return StoredDictionary(
        kind="snn" if kind == KIND_SNN else "ae",
        strategy=ColorStrategy(header["strategy"]),
        states=states,
        meta=header.get("meta", {}),
    )


def save_channel_cache(path: Path, channels: np.ndarray, labels: np.ndarray,
                       strategy: ColorStrategy) -> Path:
    """N×H×W×C coded stacks as float32 followed by int32 labels."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, height, width, n_channels = channels.shape
    tmp = path.with_suffix(path.suffix + ".partial")
    with open(tmp, "wb") as f:
        f.write(_CACHE_HEADER.pack(
            CHANNEL_CACHE_MAGIC, FORMAT_VERSION, n, height, width, n_channels,
            ColorStrategy(strategy).tag,
        ))
        f.write(np.ascontiguousarray(channels, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(labels, dtype="<i4").tobytes())
    # Rename last so an interrupted write never looks like a valid cache
    tmp.replace(path)
    return path


def _cache_header(path: Path) -> Tuple[int, int, int, int, ColorStrategy]:
    with open(path, "rb") as f:
        raw = f.read(_CACHE_HEADER.size)
    if len(raw) < _CACHE_HEADER.size:
        raise StorageFormatError(f"{path}: truncated channel cache header")
    magic, version, n, height, width, n_channels, tag = _CACHE_HEADER.unpack(raw)
    if magic != CHANNEL_CACHE_MAGIC:
        raise StorageFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise StorageFormatError(f"{path}: unknown format version {version}")
    try:
        strategy = ColorStrategy.from_tag(tag)
    except IndexError as e:
        raise StorageFormatError(f"{path}: unknown strategy tag {tag}") from e
    expected = _CACHE_HEADER.size + n * height * width * n_channels * 4 + n * 4
    if path.stat().st_size != expected:
        raise StorageFormatError(f"{path}: size {path.stat().st_size} does not match header ({expected})")
    return n, height, width, n_channels, strategy


def load_channel_cache(path: Path) -> Tuple[np.ndarray, np.ndarray, ColorStrategy]:
    """Memory-mapped channel stacks, labels and strategy."""
    path = Path(path)
    n, height, width, n_channels, strategy = _cache_header(path)
    channels = np.memmap(path, dtype="<f4", mode="r", offset=_CACHE_HEADER.size,
                         shape=(n, height, width, n_channels))
    label_offset = _CACHE_HEADER.size + n * height * width * n_channels * 4
    labels = np.fromfile(path, dtype="<i4", count=n, offset=label_offset).astype(np.int64)
    return channels, labels, strategy


def is_valid_channel_cache(path: Path, n_images: Optional[int], strategy: ColorStrategy,
                           image_shape: Optional[Tuple[int, int]] = None) -> bool:
    """True when `path` holds a complete cache for this strategy (and image count, when given)."""
    path = Path(path)
    if not path.is_file():
        return False
    try:
        n, height, width, n_channels, stored = _cache_header(path)
    except StorageFormatError as e:
        logger.warning("Ignoring invalid channel cache", path=str(path), error=str(e))
        return False
    strategy = ColorStrategy(strategy)
    if image_shape is not None and (height, width) != tuple(image_shape):
        return False
    if n_images is not None and n != n_images:
        return False
    return stored == strategy and n_channels == strategy.n_channels


def save_descriptors(path: Path, descriptors: DescriptorSet) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(descriptors)
    dim = descriptors.dim if n else 0
    with open(path, "wb") as f:
        f.write(_DESCRIPTOR_HEADER.pack(DESCRIPTOR_MAGIC, FORMAT_VERSION, n, dim, descriptors.n_classes))
        f.write(np.ascontiguousarray(descriptors.values, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(descriptors.labels, dtype="<i4").tobytes())
    return path


def load_descriptors(path: Path) -> DescriptorSet:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"No such file: {path}")
    reader = _Reader(path.read_bytes(), path)
    magic, version, n, dim, n_classes = reader.unpack(_DESCRIPTOR_HEADER.format)
    if magic != DESCRIPTOR_MAGIC:
        raise StorageFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise StorageFormatError(f"{path}: unknown format version {version}")
    values = np.frombuffer(reader.read(4 * n * dim), dtype="<f4").reshape(n, dim)
    labels = np.frombuffer(reader.read(4 * n), dtype="<i4")
    return DescriptorSet(values=values.astype(np.float64), labels=labels.astype(np.int64), n_classes=n_classes)


def save_linear_model(path: Path, model: LinearModel) -> Path:
    header = {"C": model.C, "n_classes": model.n_classes}
    arrays = [model.mean, model.scale, model.classes, model.coef, model.intercept]
    return _write_container(path, MODEL_MAGIC, 0, header, arrays)


def load_linear_model(path: Path) -> LinearModel:
    _, header, reader = _read_container(path, MODEL_MAGIC)
    mean, scale, classes, coef, intercept = (reader.array() for _ in range(5))
    return LinearModel(
        coef=coef,
        intercept=intercept,
        classes=classes.astype(np.int64),
        mean=mean,
        scale=scale,
        C=float(header["C"]),
    )


def write_table(path: Path, title: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """CSV with a leading `# title` comment line, then a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# {title}\n")
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)
    logger.info("Table written", path=str(path), title=title)
    return path


def read_table(path: Path) -> Tuple[str, List[str], List[List[str]]]:
    with open(path, newline="", encoding="utf-8") as f:
        title = f.readline().lstrip("#").strip()
        rows = list(csv.reader(f))
    return title, rows[0], rows[1:]


def write_pixmap(path: Path, rgb: np.ndarray) -> Path:
    """Binary P6 pixmap of an H×W×3 uint8 array."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise StorageFormatError(f"Pixmaps need H×W×3 uint8 data, got {rgb.shape} {rgb.dtype}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(rgb).tobytes())
    return path


def read_pixmap(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    header = _PIXMAP_HEADER.match(data)
    if header is None or header.group(3) != b"255":
        raise StorageFormatError(f"{path}: not a binary 8-bit pixmap")
    width, height = int(header.group(1)), int(header.group(2))
    raster = data[header.end():header.end() + width * height * 3]
    pixels = np.frombuffer(raster, dtype=np.uint8)
    if pixels.size != width * height * 3:
        raise StorageFormatError(f"{path}: truncated pixmap")
    return pixels.reshape(height, width, 3)


def save_manifest(path: Path, manifest: RunManifest) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    return path


def load_manifest(path: Path) -> RunManifest:
    return RunManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))
