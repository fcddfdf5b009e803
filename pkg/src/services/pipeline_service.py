"""
Experiment pipeline: channel caches, dictionary training, descriptor
evaluation and feature analyses for one run configuration, plus the
table-reproduction grids built on top of it.
"""
import json
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import structlog

from src.config import Settings, get_settings
from src.models.classify import DescriptorSet
from src.models.coding import ColorStrategy
from src.models.image import LabeledImageSet, Split
from src.models.reports import ReconstructionReport
from src.models.run import RunConfig, RunManifest
from src.services.ae_service import AeFeatureExtractor, train_ae
from src.services.classify_service import (
    ENCODE_CHUNK,
    FeatureExtractor,
    descriptors_from_channels,
    evaluate,
    raw_descriptors_from_channels,
    train_linear,
)
from src.services.coding_service import encode_array
from src.services.dataset_service import (
    cut_patches,
    load_cifar10,
    load_cifar100,
    load_stl10,
    make_synthetic,
    sample_patch_origins,
)
from src.services.metrics_service import (
    coherence_matrix,
    export_filters,
    feature_sparseness,
    reconstruct_channels,
    reconstruction_errors,
    render_coded_image,
    weight_histogram,
)
from src.services.snn_service import SnnFeatureExtractor, init_network, train_snn
from src.services.storage_service import (
    StoredDictionary,
    is_valid_channel_cache,
    load_channel_cache,
    load_dictionary,
    load_manifest,
    save_channel_cache,
    save_descriptors,
    save_dictionary,
    save_linear_model,
    save_manifest,
    write_pixmap,
    write_table,
)
from src.utils.observability import track_stage

logger = structlog.get_logger(__name__)

DATASET_DIRS = {
    "cifar10": "cifar-10-batches-bin",
    "cifar100": "cifar-100-binary",
    "stl10": "stl10_binary",
}
LOADERS: Dict[str, Callable[[Path, Split], LabeledImageSet]] = {
    "cifar10": load_cifar10,
    "cifar100": load_cifar100,
    "stl10": load_stl10,
}
# Keeps the synthetic test images disjoint from the training images
SYNTHETIC_TEST_SEED_OFFSET = 1_000_003
PACKAGE_NAME = "stdp-feature-workbench"


class PipelineError(Exception):
    """Base class for pipeline failures."""
    pass


class MissingInputError(PipelineError, FileNotFoundError):
    """Raised when a stage needs an artifact that has not been produced."""
    pass


class PipelineConfigError(PipelineError, ValueError):
    """Raised when a stage does not apply to the run configuration."""
    pass


def software_version() -> str:
    try:
        return metadata.version(PACKAGE_NAME)
    except metadata.PackageNotFoundError:
        return "0.0.0+local"


@dataclass
class CodedSplit:
    """Memory-mapped coded channel stacks of one split."""

    channels: np.ndarray
    labels: np.ndarray
    n_classes: int
    strategy: ColorStrategy

    def __len__(self) -> int:
        return int(self.channels.shape[0])


@dataclass
class RunAnalysis:
    """Analysis results of one trained dictionary."""

    sparseness_mean: float
    sparseness_std: float
    coherence: List[Dict[str, Any]] = field(default_factory=list)
    reconstruction: Optional[ReconstructionReport] = None

    @property
    def coherence_mean(self) -> float:
        return float(np.mean([c["mean"] for c in self.coherence])) if self.coherence else float("nan")


class ExperimentPipeline:
    """All pipeline stages of one RunConfig, sharing a channel cache and an output directory."""

    def __init__(self, config: RunConfig, settings: Optional[Settings] = None):
        self.config = config
        self.settings = settings or get_settings()
        self.timings: Dict[str, float] = {}
        self.outputs: List[Path] = []
        self._coded: Dict[Split, CodedSplit] = {}

    @classmethod
    def from_manifest(cls, path: Path, settings: Optional[Settings] = None) -> "ExperimentPipeline":
        """Pipeline with the exact configuration recorded in a manifest."""
        manifest = load_manifest(path)
        return cls(RunConfig.model_validate(manifest.config), settings)

    # Locations

    @property
    def output_dir(self) -> Path:
        if self.config.output_dir is not None:
            return Path(self.config.output_dir)
        return self.settings.output_dir / self.config.run_name

    @property
    def cache_dir(self) -> Path:
        return self.settings.resolved_cache_dir

    def run_dir(self, run_index: int) -> Path:
        return self.output_dir / f"run-{run_index}"

    def dictionary_path(self, run_index: int) -> Path:
        return self.run_dir(run_index) / "dictionary.sfw"

    @property
    def seeds(self) -> List[int]:
        return [self.config.run_seed(i) for i in range(self.config.n_runs)]

    def dataset_path(self) -> Path:
        if self.config.data_dir is not None:
            return Path(self.config.data_dir)
        return self.settings.data_root / DATASET_DIRS[self.config.dataset]

    def cache_path(self, split: Split) -> Path:
        cfg = self.config
        parts = [cfg.dataset, split.value, cfg.color_mode.value]
        if cfg.color_mode.uses_dog:
            parts.append(f"dog{cfg.dog_size}-{cfg.dog_center:g}-{cfg.dog_surround:g}")
        if cfg.dataset == "synthetic":
            parts.append(f"s{cfg.seed}-n{cfg.synthetic_n_images}-side{cfg.synthetic_side}-c{cfg.synthetic_n_classes}")
        limit = cfg.n_train_images if split == Split.TRAIN else cfg.n_test_images
        parts.append(f"first{limit}" if limit else "all")
        return self.cache_dir / ("_".join(parts) + ".sfwc")

    # Data

    def load_images(self, split: Split) -> LabeledImageSet:
        cfg = self.config
        limit = cfg.n_train_images if split == Split.TRAIN else cfg.n_test_images
        if cfg.dataset == "synthetic":
            seed = cfg.seed if split == Split.TRAIN else cfg.seed + SYNTHETIC_TEST_SEED_OFFSET
            count = limit or cfg.synthetic_n_images
            return make_synthetic(count, cfg.synthetic_side, cfg.synthetic_n_classes, seed, split)
        image_set = LOADERS[cfg.dataset](self.dataset_path(), split)
        return image_set.subset(limit) if limit else image_set

    def _ensure_cache(self, split: Split) -> Path:
        path = self.cache_path(split)
        if is_valid_channel_cache(path, None, self.config.color_mode):
            logger.info("Channel cache hit", split=split.value, path=str(path))
            return path

        image_set = self.load_images(split)
        dog = self.config.dog_params()
        n, height, width, _ = image_set.pixels.shape
        channels = np.empty((n, height, width, self.config.color_mode.n_channels), dtype=np.float32)
        for start in range(0, n, ENCODE_CHUNK):
            channels[start:start + ENCODE_CHUNK] = encode_array(
                image_set.pixels[start:start + ENCODE_CHUNK], self.config.color_mode, dog
            )
        save_channel_cache(path, channels, image_set.labels, self.config.color_mode)
        # n_classes is not part of the cache header
        path.with_suffix(".json").write_text(json.dumps({"n_classes": image_set.n_classes}))
        logger.info("Channel cache written", split=split.value, images=n, path=str(path))
        return path

    def preprocess(self) -> Dict[str, Path]:
        """Code both splits once; later calls reuse valid caches."""
        paths = {}
        with track_stage("preprocess", self.timings):
            for split in (Split.TRAIN, Split.TEST):
                paths[split.value] = self._ensure_cache(split)
        return paths

    def coded(self, split: Split) -> CodedSplit:
        if split not in self._coded:
            path = self._ensure_cache(split)
            channels, labels, strategy = load_channel_cache(path)
            side_file = path.with_suffix(".json")
            n_classes = (
                json.loads(side_file.read_text())["n_classes"] if side_file.is_file() else int(labels.max()) + 1
            )
            self._coded[split] = CodedSplit(channels, labels, n_classes, strategy)
        return self._coded[split]

    # Training

    def _group_bounds(self) -> List[Tuple[int, int]]:
        bounds = np.cumsum((0,) + self.config.color_mode.channel_groups)
        return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]

    def train_run(self, coded: CodedSplit, seed: int) -> Tuple[List[Any], Dict[str, Any]]:
        """Train one dictionary per channel group on patches drawn with `seed`."""
        cfg = self.config
        n, height, width, _ = coded.channels.shape
        origins = sample_patch_origins(n, height, width, cfg.resolved_n_patches, cfg.w_p, seed)
        states: List[Any] = []
        groups_meta: List[Dict[str, Any]] = []

        for (a, b), n_f in zip(self._group_bounds(), cfg.features_per_group()):
            patches = cut_patches(coded.channels[..., a:b], origins, cfg.w_p).astype(np.float64)
            n_inputs = cfg.w_p * cfg.w_p * (b - a)
            if cfg.extractor == "snn":
                state = init_network(cfg.snn_config(n_inputs, n_f=n_f, seed=seed))
                state, log = train_snn(
                    state, patches, cfg.resolved_epochs, zero_latency_spikes=cfg.zero_latency_spikes, seed=seed
                )
                groups_meta.append({
                    "epochs": [e.to_dict() for e in log.epochs],
                    "dead_units": log.dead_units(),
                })
            else:
                ae_config = cfg.ae_config(n_inputs, n_f=n_f, seed=seed)
                state, curve = train_ae(ae_config, patches.reshape(len(patches), -1))
                groups_meta.append({
                    "loss_curve": curve,
                    "hyperparameters": {"rho": ae_config.rho, "gamma": ae_config.gamma, "lambda": ae_config.lambda_},
                })
            states.append(state)
        return states, {"seed": seed, "extractor": cfg.extractor, "groups": groups_meta}

    def train(self) -> List[Path]:
        """Train n_runs independent dictionaries, seeded seed + run_index."""
        if self.config.extractor == "raw_pixels":
            raise PipelineConfigError("The raw_pixels extractor has no dictionary to train")
        coded = self.coded(Split.TRAIN)
        paths = []
        for run_index, seed in enumerate(self.seeds):
            with track_stage("train", self.timings):
                states, meta = self.train_run(coded, seed)
            meta["run"] = run_index
            path = save_dictionary(self.dictionary_path(run_index), states, self.config.color_mode, meta)
            log_path = self.run_dir(run_index) / "training-log.json"
            log_path.write_text(json.dumps(meta, indent=2))
            paths.extend([path, log_path])
            logger.info("Dictionary trained", run=run_index, seed=seed, path=str(path))
        self.outputs.extend(paths)
        self.write_manifest("train")
        return paths

    def load_extractor(self, run_index: int) -> Tuple[FeatureExtractor, StoredDictionary]:
        path = self.dictionary_path(run_index)
        if not path.is_file():
            raise MissingInputError(f"No dictionary for run {run_index} at {path}; run `train` first")
        stored = load_dictionary(path)
        if stored.strategy != self.config.color_mode:
            raise PipelineConfigError(
                f"{path} was trained for {stored.strategy.value}, config uses {self.config.color_mode.value}"
            )
        if stored.kind != self.config.extractor:
            raise PipelineConfigError(f"{path} holds an {stored.kind} dictionary, config uses {self.config.extractor}")
        if stored.kind == "snn":
            extractor: FeatureExtractor = SnnFeatureExtractor(
                stored.states,
                stored.strategy,
                inhibition=self.config.extraction_inhibition,
                zero_latency_spikes=self.config.zero_latency_spikes,
            )
        else:
            extractor = AeFeatureExtractor(stored.states, stored.strategy)
        return extractor, stored

    # Evaluation

    def _descriptors(self, extractor: Optional[FeatureExtractor], coded: CodedSplit) -> DescriptorSet:
        if extractor is None:
            return raw_descriptors_from_channels(coded.channels, coded.labels, coded.n_classes)
        cfg = self.config
        return descriptors_from_channels(
            extractor, coded.channels, coded.labels, coded.n_classes,
            cfg.w_p, cfg.stride, cfg.pool_r, self.settings.n_jobs,
        )

    def evaluate(self) -> Dict[str, Any]:
        """Descriptors, linear classifier and test accuracy for every run."""
        cfg = self.config
        train_split, test_split = self.coded(Split.TRAIN), self.coded(Split.TEST)
        accuracies: List[float] = []
        rows = []
        for run_index, seed in enumerate(self.seeds):
            extractor = None if cfg.extractor == "raw_pixels" else self.load_extractor(run_index)[0]
            run_dir = self.run_dir(run_index)
            with track_stage("descriptors", self.timings):
                train_set = self._descriptors(extractor, train_split)
                test_set = self._descriptors(extractor, test_split)
            with track_stage("classify", self.timings):
                model = train_linear(
                    train_set, C=cfg.svm_c, solver=cfg.svm_solver,
                    max_iter=cfg.svm_max_iter, tol=cfg.svm_tol, seed=seed,
                )
                evaluation = evaluate(model, test_set)

            self.outputs.extend([
                save_descriptors(run_dir / "descriptors-train.sfds", train_set),
                save_descriptors(run_dir / "descriptors-test.sfds", test_set),
                save_linear_model(run_dir / "model.sflm", model),
                write_table(
                    run_dir / "confusion.csv",
                    f"Confusion matrix, run {run_index} (rows: true class, columns: predicted class)",
                    ["true"] + [str(c) for c in range(evaluation.confusion.shape[1])],
                    [[i] + row.tolist() for i, row in enumerate(evaluation.confusion)],
                ),
            ])
            accuracy = 100.0 * evaluation.accuracy
            accuracies.append(accuracy)
            rows.append([run_index, seed, round(accuracy, 4)])
            logger.info("Run evaluated", run=run_index, seed=seed, accuracy=accuracy)

        mean, std = float(np.mean(accuracies)), float(np.std(accuracies))
        rows.extend([["mean", "", round(mean, 4)], ["std", "", round(std, 4)]])
        table = write_table(
            self.output_dir / "accuracy.csv",
            f"Classification accuracy (%) of {cfg.run_name}",
            ["run", "seed", "accuracy"],
            rows,
        )
        self.outputs.append(table)
        self.write_manifest("evaluate", notes={"accuracy_mean": mean, "accuracy_std": std})
        return {"accuracies": accuracies, "mean": mean, "std": std, "table": table}

    # Analysis

    def analyze_run(self, run_index: int, channels: np.ndarray) -> RunAnalysis:
        """Sparseness, coherence, reconstruction, histograms and filter sheets of one dictionary."""
        cfg = self.config
        extractor, stored = self.load_extractor(run_index)
        out = self.output_dir / "analysis"

        with track_stage("sparseness", self.timings):
            sparseness = feature_sparseness(extractor, channels, cfg.w_p, cfg.stride, self.settings.n_jobs)

        coherence = []
        groups_meta = stored.meta.get("groups", [])
        for group, (dictionary, state) in enumerate(zip(extractor.dictionaries(), stored.states)):
            report = coherence_matrix(dictionary)
            never_won = groups_meta[group].get("dead_units", []) if group < len(groups_meta) else []
            coherence.append({"group": group, **report.summary(), "never_won": len(never_won)})
            histogram = weight_histogram(state, cfg.histogram_bins)
            self.outputs.append(write_table(
                out / f"histogram-run{run_index}-g{group}.csv",
                f"Weight distribution, run {run_index}, group {group}",
                ["bin_start", "count"],
                histogram.rows(),
            ))
        self.outputs.extend(export_filters(
            extractor.dictionaries(), cfg.color_mode, cfg.w_p, out / f"filters-run{run_index}.ppm"
        ))

        with track_stage("reconstruction", self.timings):
            errors = reconstruction_errors(extractor, channels, cfg.w_p, cfg.stride, self.settings.n_jobs)
        reconstruction = ReconstructionReport(errors=errors)
        for tag, index in (("best", reconstruction.best_index), ("worst", reconstruction.worst_index)):
            coded = np.asarray(channels[index], dtype=np.float64)
            averaged, _ = reconstruct_channels(extractor, coded, cfg.w_p, cfg.stride)
            panel = np.concatenate(
                [render_coded_image(coded, cfg.color_mode), render_coded_image(averaged, cfg.color_mode)], axis=1
            )
            self.outputs.append(write_pixmap(out / f"reconstruction-{tag}-run{run_index}.ppm", panel))

        return RunAnalysis(
            sparseness_mean=sparseness.mean,
            sparseness_std=sparseness.std,
            coherence=coherence,
            reconstruction=reconstruction,
        )

    def analyze(self) -> Dict[str, Any]:
        """Run every analysis on the first analysis_n_images test images, per run and aggregated."""
        cfg = self.config
        if cfg.extractor == "raw_pixels":
            raise PipelineConfigError("The raw_pixels extractor has no dictionary to analyze")
        channels = self.coded(Split.TEST).channels[:cfg.analysis_n_images]
        out = self.output_dir / "analysis"

        results = [self.analyze_run(i, channels) for i in range(cfg.n_runs)]
        sparseness_rows, coherence_rows, reconstruction_rows = [], [], []
        for run_index, (seed, result) in enumerate(zip(self.seeds, results)):
            sparseness_rows.append([run_index, seed, result.sparseness_mean, result.sparseness_std])
            for entry in result.coherence:
                coherence_rows.append([
                    run_index, entry["group"], entry["mean"], entry["std"], entry["max"],
                    entry["near_duplicates"], entry["dead_units"], entry["never_won"],
                ])
            summary = result.reconstruction.summary()
            reconstruction_rows.append([
                run_index, summary["mean"], summary["std"], summary["best_index"],
                summary["best_error"], summary["worst_index"], summary["worst_error"],
            ])

        per_run = {
            "sparseness": [r.sparseness_mean for r in results],
            "coherence": [r.coherence_mean for r in results],
            "reconstruction": [r.reconstruction.mean for r in results],
        }
        self.outputs.extend([
            write_table(out / "sparseness.csv", f"Feature sparseness of {cfg.run_name}",
                        ["run", "seed", "mean", "std"], sparseness_rows),
            write_table(out / "coherence.csv", f"Feature coherence of {cfg.run_name}",
                        ["run", "group", "mean", "std", "max", "near_duplicates", "dead_units", "never_won"],
                        coherence_rows),
            write_table(out / "reconstruction.csv", f"Reconstruction error of {cfg.run_name}",
                        ["run", "mean", "std", "best_index", "best_error", "worst_index", "worst_error"],
                        reconstruction_rows),
            write_table(out / "summary.csv", f"Analysis summary of {cfg.run_name} over {cfg.n_runs} run(s)",
                        ["metric", "mean", "std"],
                        [[name, float(np.mean(v)), float(np.std(v))] for name, v in per_run.items()]),
        ])
        self.write_manifest("analyze")
        return {"per_run": per_run, **{name: float(np.mean(v)) for name, v in per_run.items()}}

    def write_manifest(self, command: str, notes: Optional[Dict[str, Any]] = None) -> Path:
        notes = dict(notes or {})
        if self.config.extractor == "ae":
            rho, gamma, lam = self.config.ae_hyperparameters()
            notes["ae_hyperparameters"] = {"rho": rho, "gamma": gamma, "lambda": lam}
        manifest = RunManifest(
            config=self.config.model_dump(mode="json"),
            command=command,
            seeds=self.seeds,
            software_version=software_version(),
            timings=dict(self.timings),
            outputs=sorted({str(p) for p in self.outputs}),
            notes=notes,
        )
        return save_manifest(self.output_dir / f"manifest-{command}.json", manifest)


@dataclass(frozen=True)
class TableSpec:
    """A grid of configurations and the measurement reported for each cell."""

    title: str
    metric: str
    cells: List[Tuple[str, Dict[str, Any]]]


_EXTRACTOR_CELLS = [
    ("snn-color", {"extractor": "snn", "color_mode": ColorStrategy.GRAYSCALE_PLUS_COLOR}),
    ("snn-bw", {"extractor": "snn", "color_mode": ColorStrategy.GRAYSCALE}),
    ("ae-color", {"extractor": "ae", "color_mode": ColorStrategy.RAW_RGB}),
    ("ae-bw", {"extractor": "ae", "color_mode": ColorStrategy.RAW_GRAY}),
]

TABLES: Dict[str, TableSpec] = {
    "color-coding": TableSpec(
        "Classification accuracy (%) per color coding strategy (SNN)",
        "accuracy",
        [
            (mode.value, {"extractor": "snn", "color_mode": mode})
            for mode in (
                ColorStrategy.RGB_OPPONENT,
                ColorStrategy.BIO_COLOR,
                ColorStrategy.GRAYSCALE,
                ColorStrategy.GRAYSCALE_PLUS_COLOR,
            )
        ],
    ),
    "extractors": TableSpec("Classification accuracy (%) per feature extractor", "accuracy", _EXTRACTOR_CELLS),
    "stdp-beta": TableSpec(
        "SNN classification accuracy (%) per STDP beta",
        "accuracy",
        [
            (f"beta-{beta}", {"extractor": "snn", "beta_plus": float(beta), "beta_minus": float(beta)})
            for beta in (1, 2, 3, 4)
        ],
    ),
    "dog-ablation": TableSpec(
        "Classification accuracy (%) with and without DoG coding",
        "accuracy",
        [
            (f"{extractor}-{label}", {"extractor": extractor, "color_mode": mode,
                                      **({"n_runs": 1} if extractor == "raw_pixels" else {})})
            for extractor in ("raw_pixels", "ae")
            for label, mode in (
                ("color", ColorStrategy.RAW_RGB),
                ("color-dog", ColorStrategy.RGB_OPPONENT),
                ("bw", ColorStrategy.RAW_GRAY),
                ("bw-dog", ColorStrategy.GRAYSCALE),
            )
        ],
    ),
    "sparseness": TableSpec(
        "Mean feature sparseness on the test set",
        "sparseness",
        [
            ("snn", {"extractor": "snn", "color_mode": ColorStrategy.GRAYSCALE_PLUS_COLOR}),
            ("snn-no-inhibition", {"extractor": "snn", "color_mode": ColorStrategy.GRAYSCALE_PLUS_COLOR,
                                   "extraction_inhibition": False}),
            ("ae", {"extractor": "ae", "color_mode": ColorStrategy.RAW_RGB}),
        ],
    ),
    "reconstruction": TableSpec("Mean reconstruction error on the test set", "reconstruction", _EXTRACTOR_CELLS),
    "coherence": TableSpec("Mean feature coherence", "coherence", _EXTRACTOR_CELLS),
}


def reproduce_table(name: str, base: RunConfig, settings: Optional[Settings] = None) -> Dict[str, Any]:
    """
    Run every cell of a named table grid (preprocess, train, then evaluate or
    analyze) and write one CSV with the mean and std of each cell.
    """
    if name not in TABLES:
        raise PipelineConfigError(f"Unknown table {name!r}; choose from {sorted(TABLES)}")
    spec = TABLES[name]
    settings = settings or get_settings()
    root = Path(base.output_dir) if base.output_dir is not None else settings.output_dir / base.run_name
    root = root / name

    rows = []
    cells: Dict[str, Dict[str, float]] = {}
    for label, updates in spec.cells:
        config = base.with_updates(name=f"{name}-{label}", output_dir=root / label, **updates)
        pipeline = ExperimentPipeline(config, settings)
        logger.info("Table cell started", table=name, cell=label)
        pipeline.preprocess()
        if config.extractor != "raw_pixels":
            pipeline.train()
        if spec.metric == "accuracy":
            values = pipeline.evaluate()["accuracies"]
        else:
            values = pipeline.analyze()["per_run"][spec.metric]
        mean, std = float(np.mean(values)), float(np.std(values))
        cells[label] = {"mean": mean, "std": std}
        rows.append([
            label, config.dataset, config.color_mode.value, config.extractor,
            config.n_features, config.n_runs, round(mean, 6), round(std, 6),
        ])

    table = write_table(
        root / f"{name}.csv",
        spec.title,
        ["cell", "dataset", "color_mode", "extractor", "n_features", "n_runs", "mean", "std"],
        rows,
    )
    return {"table": table, "cells": cells}
