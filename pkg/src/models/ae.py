"""
Sparse auto-encoder configuration and state.
"""
from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

PARAMETER_NAMES = ("w_enc", "b_enc", "w_dec", "b_dec")


class AeConfig(BaseModel):
    """Sigmoid encoder, linear decoder, L2 weight decay and KL sparsity."""

    # `lambda` is a keyword, so the field is populated by alias or by name
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    n_f: int = Field(64, ge=1)
    n_inputs: int = Field(..., ge=1)
    rho: float = Field(0.01, gt=0.0, lt=1.0, description="Target mean activation")
    gamma: float = Field(0.05, ge=0.0, description="Sparsity weight")
    lambda_: float = Field(1e-5, ge=0.0, alias="lambda", description="Weight decay")
    lr: float = Field(1.0, gt=0.0)
    epochs: int = Field(1000, ge=0)
    batch_size: int = Field(128, ge=1)
    rho_ada: float = Field(0.95, gt=0.0, lt=1.0)
    eps_ada: float = Field(1e-6, gt=0.0)
    kl_eps: float = Field(1e-7, gt=0.0)
    seed: int = 0


@dataclass
class AeState:
    """Encoder/decoder parameters and per-parameter Adadelta accumulators."""

    w_enc: np.ndarray
    b_enc: np.ndarray
    w_dec: np.ndarray
    b_dec: np.ndarray
    config: AeConfig
    sq_grad: Dict[str, np.ndarray] = field(default_factory=dict)
    sq_update: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in PARAMETER_NAMES:
            self.sq_grad.setdefault(name, np.zeros_like(getattr(self, name)))
            self.sq_update.setdefault(name, np.zeros_like(getattr(self, name)))

    @property
    def n_f(self) -> int:
        return int(self.w_enc.shape[0])

    @property
    def n_inputs(self) -> int:
        return int(self.w_enc.shape[1])

    def parameters(self) -> List[Tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in PARAMETER_NAMES]

    def copy(self) -> "AeState":
        return replace(
            self,
            w_enc=self.w_enc.copy(),
            b_enc=self.b_enc.copy(),
            w_dec=self.w_dec.copy(),
            b_dec=self.b_dec.copy(),
            sq_grad={k: v.copy() for k, v in self.sq_grad.items()},
            sq_update={k: v.copy() for k, v in self.sq_update.items()},
        )


@dataclass(frozen=True)
class AeGradients:
    w_enc: np.ndarray
    b_enc: np.ndarray
    w_dec: np.ndarray
    b_dec: np.ndarray

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAMETER_NAMES}


@dataclass(frozen=True)
class AeLoss:
    total: float
    mse: float
    l2: float
    kl: float
