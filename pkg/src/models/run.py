"""
Run configuration and run manifest for the experiment pipeline.
"""
import tomllib
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.models.ae import AeConfig
from src.models.coding import ColorStrategy, DogParams
from src.models.snn import SnnConfig

DatasetName = Literal["cifar10", "cifar100", "stl10", "synthetic"]
ExtractorName = Literal["snn", "ae", "raw_pixels"]
SolverName = Literal["dual_cd", "liblinear"]

# (color data?, n_f row) -> (rho, gamma, lambda); rows of the AE parameter table
AE_TABLE_DEFAULTS: Dict[Tuple[bool, int], Tuple[float, float, float]] = {
    (True, 64): (0.005, 0.5, 1e-4),
    (True, 1024): (0.005, 0.1, 1e-5),
    (False, 64): (0.01, 0.05, 1e-5),
    (False, 1024): (0.005, 0.1, 1e-5),
}
# AE trained on DoG-coded input (ablation runs)
AE_DOG_DEFAULTS: Tuple[float, float, float] = (0.005, 1.0, 1e-4)


class RunConfig(BaseModel):
    """
    Every knob of one experiment. Absent keys take the published defaults;
    unknown keys are rejected by name.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    # Experiment
    name: Optional[str] = None
    dataset: DatasetName = "cifar10"
    color_mode: ColorStrategy = ColorStrategy.GRAYSCALE
    extractor: ExtractorName = "snn"
    n_runs: int = Field(3, ge=1)
    seed: int = 0
    data_dir: Optional[Path] = None
    output_dir: Optional[Path] = None
    n_train_images: Optional[int] = Field(None, ge=1)
    n_test_images: Optional[int] = Field(None, ge=1)

    # Protocol
    w_p: int = Field(5, ge=1)
    stride: int = Field(1, ge=1)
    pool_r: int = Field(2, ge=1)
    n_features: int = Field(64, ge=1)
    n_patches: Optional[int] = Field(None, ge=1)
    epochs: Optional[int] = Field(None, ge=0)

    # Pre-processing
    dog_size: int = 7
    dog_center: float = 1.0
    dog_surround: float = 2.0

    # SNN
    v_th0: float = 20.0
    v_rest: float = 0.0
    w_min: float = 0.0
    w_max: float = 1.0
    d_min: float = 0.0
    d_max: float = 0.01
    alpha_plus: float = 0.001
    alpha_minus: float = 0.001
    beta_plus: float = 1.0
    beta_minus: float = 1.0
    t_obj: float = 0.7
    eta: float = 0.001
    t_duration: float = 1.0
    zero_latency_spikes: bool = False
    extraction_inhibition: bool = True

    # AE
    ae_rho: Optional[float] = None
    ae_gamma: Optional[float] = None
    ae_lambda: Optional[float] = None
    ae_lr: float = 1.0
    ae_batch_size: int = Field(128, ge=1)
    ae_rho_ada: float = 0.95
    ae_eps: float = 1e-6

    # Classifier
    svm_c: float = Field(1.0, gt=0.0)
    svm_solver: SolverName = "dual_cd"
    svm_max_iter: int = Field(1000, ge=1)
    svm_tol: float = Field(1e-4, gt=0.0)

    # Synthetic data
    synthetic_n_images: int = Field(200, ge=1)
    synthetic_side: int = Field(16, ge=1)
    synthetic_n_classes: int = Field(2, ge=2)

    # Analysis
    histogram_bins: int = Field(20, ge=2)
    analysis_n_images: int = Field(1000, ge=1)

    @field_validator("dog_size")
    @classmethod
    def validate_dog_size(cls, v: int) -> int:
        if v % 2 == 0 or v < 3:
            raise ValueError(f"dog_size must be odd and >= 3, got {v}")
        return v

    @model_validator(mode="after")
    def validate_derived(self) -> "RunConfig":
        # Building the derived configs runs their own validators
        self.dog_params()
        if self.extractor == "snn":
            self.snn_config(n_inputs=1)
        elif self.extractor == "ae":
            self.ae_config(n_inputs=1)
        return self

    # Resolved defaults

    @property
    def run_name(self) -> str:
        if self.name:
            return self.name
        return f"{self.dataset}-{self.color_mode.value}-{self.extractor}-nf{self.n_features}"

    @property
    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 1000 if self.extractor == "ae" else 100

    @property
    def resolved_n_patches(self) -> int:
        if self.n_patches is not None:
            return self.n_patches
        return 200_000 if self.extractor == "ae" else 100_000

    def run_seed(self, run_index: int) -> int:
        """Seed of the run_index-th repetition."""
        return self.seed + run_index

    def dog_params(self) -> DogParams:
        return DogParams(
            size=self.dog_size,
            center_sigma=self.dog_center,
            surround_sigma=self.dog_surround,
        )

    def features_per_group(self) -> List[int]:
        """Dictionary size of each independently trained sub-dictionary."""
        groups = self.color_mode.channel_groups
        if len(groups) == 1:
            return [self.n_features]
        half = self.n_features // len(groups)
        sizes = [half] * len(groups)
        sizes[-1] += self.n_features - half * len(groups)
        return sizes

    def snn_config(self, n_inputs: int, n_f: Optional[int] = None, seed: int = 0) -> SnnConfig:
        return SnnConfig(
            n_f=n_f if n_f is not None else self.n_features,
            n_inputs=n_inputs,
            v_th0=self.v_th0,
            v_rest=self.v_rest,
            w_min=self.w_min,
            w_max=self.w_max,
            d_min=self.d_min,
            d_max=self.d_max,
            alpha_plus=self.alpha_plus,
            alpha_minus=self.alpha_minus,
            beta_plus=self.beta_plus,
            beta_minus=self.beta_minus,
            t_obj=self.t_obj,
            eta=self.eta,
            t_duration=self.t_duration,
            seed=seed,
        )

    def ae_hyperparameters(self) -> Tuple[float, float, float]:
        """(rho, gamma, lambda), explicit keys first, then the published table."""
        if self.color_mode.uses_dog:
            table = AE_DOG_DEFAULTS
        else:
            is_color = self.color_mode == ColorStrategy.RAW_RGB
            row = 1024 if self.n_features >= 1024 else 64
            table = AE_TABLE_DEFAULTS[(is_color, row)]
        rho = self.ae_rho if self.ae_rho is not None else table[0]
        gamma = self.ae_gamma if self.ae_gamma is not None else table[1]
        lam = self.ae_lambda if self.ae_lambda is not None else table[2]
        return rho, gamma, lam

    def ae_config(self, n_inputs: int, n_f: Optional[int] = None, seed: int = 0) -> AeConfig:
        rho, gamma, lam = self.ae_hyperparameters()
        return AeConfig(
            n_f=n_f if n_f is not None else self.n_features,
            n_inputs=n_inputs,
            rho=rho,
            gamma=gamma,
            lambda_=lam,
            lr=self.ae_lr,
            epochs=self.resolved_epochs,
            batch_size=self.ae_batch_size,
            rho_ada=self.ae_rho_ada,
            eps_ada=self.ae_eps,
            seed=seed,
        )

    # Loading

    @classmethod
    def from_mapping(cls, data: Dict[str, Any], overrides: Optional[List[str]] = None) -> "RunConfig":
        merged = dict(data)
        for item in overrides or []:
            key, value = parse_override(item)
            merged[key] = value
        return cls.model_validate(merged)

    @classmethod
    def from_file(cls, path: Optional[Path], overrides: Optional[List[str]] = None) -> "RunConfig":
        data: Dict[str, Any] = {}
        if path is not None:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        return cls.from_mapping(data, overrides)

    def with_updates(self, **changes: Any) -> "RunConfig":
        """Validated copy with some keys replaced."""
        data = self.model_dump()
        data.update(changes)
        return RunConfig.model_validate(data)

    def to_toml(self) -> str:
        """Flat key = value rendering of every non-null key."""
        lines = []
        for key, value in self.model_dump(mode="json").items():
            if value is None:
                continue
            lines.append(f"{key} = {_toml_value(value)}")
        return "\n".join(lines) + "\n"


def parse_override(item: str) -> Tuple[str, Any]:
    """Parse a `key=value` override, typing the value as a TOML scalar."""
    if "=" not in item:
        raise ValueError(f"Override must look like key=value, got {item!r}")
    key, raw = item.split("=", 1)
    key = key.strip()
    raw = raw.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    escaped = str(value).replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


class RunManifest(BaseModel):
    """Everything needed to reproduce a run."""

    config: Dict[str, Any]
    command: str
    seeds: List[int]
    software_version: str
    created_at: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    timings: Dict[str, float] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    notes: Dict[str, Any] = Field(default_factory=dict)
