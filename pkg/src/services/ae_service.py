"""
Sparse auto-encoder service: forward pass, loss, analytic gradients,
Adadelta updates and mini-batch training.
"""
from typing import List, Sequence, Tuple

import numpy as np
import structlog
from scipy.special import expit

from src.models.ae import PARAMETER_NAMES, AeConfig, AeGradients, AeLoss, AeState
from src.models.coding import ColorStrategy
from src.utils.observability import AE_BATCHES
from src.utils.rng import make_rng

logger = structlog.get_logger(__name__)


class AeShapeError(ValueError):
    """Raised when a batch does not match the auto-encoder input size."""
    pass


def init_ae(config: AeConfig) -> AeState:
    """Weights uniform in ±1/√n_inputs, biases zero."""
    rng = make_rng(config.seed)
    bound = 1.0 / np.sqrt(config.n_inputs)
    return AeState(
        w_enc=rng.uniform(-bound, bound, size=(config.n_f, config.n_inputs)),
        b_enc=np.zeros(config.n_f),
        w_dec=rng.uniform(-bound, bound, size=(config.n_inputs, config.n_f)),
        b_dec=np.zeros(config.n_inputs),
        config=config,
    )


def _check_batch(state: AeState, batch: np.ndarray) -> np.ndarray:
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[1] != state.n_inputs:
        raise AeShapeError(f"Batch has {batch.shape[1]} inputs, auto-encoder expects {state.n_inputs}")
    if batch.shape[0] == 0:
        raise AeShapeError("Batch is empty")
    return batch


def encode(state: AeState, batch: np.ndarray) -> np.ndarray:
    return expit(batch @ state.w_enc.T + state.b_enc)


def decode(state: AeState, z: np.ndarray) -> np.ndarray:
    return z @ state.w_dec.T + state.b_dec


def ae_forward(state: AeState, batch: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(z, x_recon) for a B×n_inputs batch; the decoder has no output activation."""
    batch = _check_batch(state, batch)
    z = encode(state, batch)
    return z, decode(state, z)


def _clamped_mean_activation(state: AeState, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    eps = state.config.kl_eps
    rho_hat = z.mean(axis=0)
    return np.clip(rho_hat, eps, 1.0 - eps), (rho_hat > eps) & (rho_hat < 1.0 - eps)


def ae_loss(state: AeState, batch: np.ndarray) -> AeLoss:
    """
    Batch-averaged half squared reconstruction error, L2 weight decay on both
    weight matrices and γ-weighted KL sparsity on the batch-mean activations.
    """
    cfg = state.config
    batch = _check_batch(state, batch)
    z, x_recon = ae_forward(state, batch)

    mse = 0.5 * float(np.sum((x_recon - batch) ** 2)) / len(batch)
    l2 = 0.5 * cfg.lambda_ * float(np.sum(state.w_enc ** 2) + np.sum(state.w_dec ** 2))
    rho_hat, _ = _clamped_mean_activation(state, z)
    rho = cfg.rho
    kl = cfg.gamma * float(np.sum(
        rho * np.log(rho / rho_hat) + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - rho_hat))
    ))
    return AeLoss(total=mse + l2 + kl, mse=mse, l2=l2, kl=kl)


def ae_gradient(state: AeState, batch: np.ndarray) -> AeGradients:
    """Exact gradients of ae_loss, with the KL term flowing through the batch mean."""
    cfg = state.config
    batch = _check_batch(state, batch)
    n = len(batch)
    z, x_recon = ae_forward(state, batch)

    d_recon = (x_recon - batch) / n
    g_w_dec = d_recon.T @ z + cfg.lambda_ * state.w_dec
    g_b_dec = d_recon.sum(axis=0)

    d_z = d_recon @ state.w_dec
    rho_hat, inside = _clamped_mean_activation(state, z)
    d_rho_hat = cfg.gamma * (-cfg.rho / rho_hat + (1.0 - cfg.rho) / (1.0 - rho_hat))
    # Clamped units have zero derivative
    d_z = d_z + np.where(inside, d_rho_hat, 0.0) / n

    d_pre = d_z * z * (1.0 - z)
    g_w_enc = d_pre.T @ batch + cfg.lambda_ * state.w_enc
    g_b_enc = d_pre.sum(axis=0)
    return AeGradients(w_enc=g_w_enc, b_enc=g_b_enc, w_dec=g_w_dec, b_dec=g_b_dec)


def adadelta_step(state: AeState, gradients: AeGradients, rho_ada: float, eps: float,
                  lr: float = 1.0) -> AeState:
    """
    One Adadelta update of every parameter, in place.

    E[g²] ← ρ·E[g²] + (1-ρ)·g²;  u = g·√(E[u²]+ε)/√(E[g²]+ε);
    E[u²] ← ρ·E[u²] + (1-ρ)·u²;  θ ← θ - lr·u
    """
    for name, grad in gradients.as_dict().items():
        sq_grad = state.sq_grad[name]
        sq_update = state.sq_update[name]
        sq_grad *= rho_ada
        sq_grad += (1.0 - rho_ada) * grad ** 2
        update = grad * np.sqrt(sq_update + eps) / np.sqrt(sq_grad + eps)
        sq_update *= rho_ada
        sq_update += (1.0 - rho_ada) * update ** 2
        getattr(state, name)[...] -= lr * update
    return state


def train_ae(config: AeConfig, patches: np.ndarray) -> Tuple[AeState, List[float]]:
    """
    Mini-batch Adadelta training on flattened [0,1] patches (n_p × n_inputs).

    Every epoch reshuffles the patches; the returned curve holds the mean
    batch loss of each epoch.
    """
    state = init_ae(config)
    curve: List[float] = []
    if config.epochs <= 0:
        return state, curve

    patches = np.asarray(patches, dtype=np.float64).reshape(len(patches), -1)
    if patches.shape[1] != config.n_inputs:
        raise AeShapeError(f"Patches have {patches.shape[1]} inputs, auto-encoder expects {config.n_inputs}")
    rng = make_rng(config.seed + 1)
    n_batches = int(np.ceil(len(patches) / config.batch_size))
    log_every = max(1, config.epochs // 10)

    logger.info(
        "AE training started",
        n_f=config.n_f,
        n_inputs=config.n_inputs,
        n_patches=len(patches),
        epochs=config.epochs,
        rho=config.rho,
        gamma=config.gamma,
        parameters=parameter_count(state),
    )
    for epoch in range(config.epochs):
        order = rng.permutation(len(patches))
        total = 0.0
        for b in range(n_batches):
            batch = patches[order[b * config.batch_size:(b + 1) * config.batch_size]]
            total += ae_loss(state, batch).total
            adadelta_step(state, ae_gradient(state, batch), config.rho_ada, config.eps_ada, config.lr)
        AE_BATCHES.inc(n_batches)
        curve.append(total / n_batches)
        if epoch % log_every == 0 or epoch == config.epochs - 1:
            logger.info("Epoch finished", epoch=epoch, loss=curve[-1])
    return state, curve


class AeFeatureExtractor:
    """Frozen encoders, one per channel group, evaluated side by side."""

    def __init__(self, states: Sequence[AeState], strategy: ColorStrategy):
        self.states = list(states)
        self.strategy = ColorStrategy(strategy)
        if len(self.states) != len(self.strategy.channel_groups):
            raise AeShapeError(
                f"Strategy {self.strategy.value} needs {len(self.strategy.channel_groups)} "
                f"auto-encoders, got {len(self.states)}"
            )

    @property
    def n_features(self) -> int:
        return sum(s.n_f for s in self.states)

    @property
    def channel_groups(self) -> Tuple[int, ...]:
        return self.strategy.channel_groups

    def transform(self, patches: np.ndarray) -> np.ndarray:
        bounds = np.cumsum((0,) + self.channel_groups)
        outputs = []
        for state, a, b in zip(self.states, bounds[:-1], bounds[1:]):
            group = _check_batch(state, patches[..., a:b].reshape(len(patches), -1))
            outputs.append(encode(state, group))
        return np.concatenate(outputs, axis=1)

    def reconstruct(self, patches: np.ndarray, features: np.ndarray) -> np.ndarray:
        """Decoder output for each group, reassembled into patch shape."""
        bounds = np.cumsum((0,) + self.channel_groups)
        f_bounds = np.cumsum([0] + [s.n_f for s in self.states])
        side = patches.shape[1]
        parts = []
        for i, state in enumerate(self.states):
            recon = decode(state, features[:, f_bounds[i]:f_bounds[i + 1]])
            parts.append(recon.reshape(len(patches), side, side, bounds[i + 1] - bounds[i]))
        return np.concatenate(parts, axis=-1)

    def dictionaries(self) -> List[np.ndarray]:
        return [s.w_enc for s in self.states]


def parameter_count(state: AeState) -> int:
    return int(sum(getattr(state, name).size for name in PARAMETER_NAMES))
