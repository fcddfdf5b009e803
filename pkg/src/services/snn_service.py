"""
SNN service: integrate-and-fire simulation with synaptic delays, winner-take-all
inhibition, multiplicative STDP and threshold homeostasis.

The simulation is event-driven in semantics but evaluated in closed form: with
no leak, a neuron's potential after its n-th arriving spike is v_rest plus the
running sum of the weights in arrival order, so its first firing time is the
arrival time of the first event where that sum reaches threshold. Arrivals at
equal times are integrated in ascending input order.
"""
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from src.models.coding import ColorStrategy, FeatureVector, SpikeTrain
from src.models.snn import EpochLog, SimResult, SnnConfig, SnnState, TrainingLog
from src.services.coding_service import decode_times, encode_latency, latency_times
from src.utils.observability import SNN_OUTPUT_SPIKES, SNN_PRESENTATIONS
from src.utils.rng import make_rng

logger = structlog.get_logger(__name__)

# Upper bound on batch × n_f × n_inputs elements held at once during extraction
MAX_BATCH_ELEMENTS = 4_000_000


class SimulationInputError(ValueError):
    """Raised when a spike train does not match the network's input size."""
    pass


def init_network(config: SnnConfig) -> SnnState:
    """Uniform weights and delays within their bounds; thresholds at v_th0."""
    rng = make_rng(config.seed)
    shape = (config.n_f, config.n_inputs)
    weights = rng.uniform(config.w_min, config.w_max, size=shape)
    delays = rng.uniform(config.d_min, config.d_max, size=shape)
    thresholds = np.full(config.n_f, config.v_th0, dtype=np.float64)
    return SnnState(weights=weights, delays=delays, thresholds=thresholds, config=config)


def first_fire_times(state: SnnState, input_times: np.ndarray) -> np.ndarray:
    """
    First firing time of every neuron for a batch of dense input times.

    input_times is B×n_inputs (+inf where an input did not spike); returns
    B×n_f with +inf for neurons that stay below threshold.
    """
    input_times = np.atleast_2d(np.asarray(input_times, dtype=np.float64))
    if input_times.shape[1] != state.n_inputs:
        raise SimulationInputError(
            f"Spike train has {input_times.shape[1]} inputs, network expects {state.n_inputs}"
        )
    batch = input_times.shape[0]
    chunk = max(1, MAX_BATCH_ELEMENTS // max(1, state.n_f * state.n_inputs))
    if batch > chunk:
        return np.concatenate(
            [first_fire_times(state, input_times[i:i + chunk]) for i in range(0, batch, chunk)]
        )

    arrivals = input_times[:, None, :] + state.delays[None, :, :]
    order = np.argsort(arrivals, axis=2, kind="stable")
    sorted_arrivals = np.take_along_axis(arrivals, order, axis=2)
    sorted_weights = state.weights[np.arange(state.n_f)[None, :, None], order]

    # Potential after each event, accumulated left to right from v_rest
    start = np.full(sorted_weights.shape[:2] + (1,), state.config.v_rest)
    potentials = np.cumsum(np.concatenate([start, sorted_weights], axis=2), axis=2)[:, :, 1:]
    crossed = (potentials >= state.thresholds[None, :, None]) & np.isfinite(sorted_arrivals)

    first = np.argmax(crossed, axis=2)
    times = np.take_along_axis(sorted_arrivals, first[:, :, None], axis=2)[:, :, 0]
    return np.where(crossed.any(axis=2), times, np.inf)


def _winner(fire_times: np.ndarray) -> Tuple[Optional[int], Optional[float]]:
    winner = int(np.argmin(fire_times))
    if not np.isfinite(fire_times[winner]):
        return None, None
    return winner, float(fire_times[winner])


def _end_potentials(state: SnnState, arrivals: np.ndarray, winner: Optional[int],
                    t_end: float) -> np.ndarray:
    """Membrane potentials once the sample stops; the winner has reset to v_rest."""
    reached = arrivals <= t_end
    trace = state.config.v_rest + np.where(reached, state.weights, 0.0).sum(axis=1)
    if winner is not None:
        trace[winner] = state.config.v_rest
    return trace


def simulate(state: SnnState, train: SpikeTrain, inhibition: bool = True,
             record_trace: bool = False) -> Union[SimResult, List[Optional[float]]]:
    """
    Present one spike train to the network.

    With inhibition the earliest neuron to fire wins (lowest index on ties) and
    the sample ends there; the result is a SimResult. Without inhibition each
    neuron integrates independently and its first firing time (or None) is
    returned per neuron.
    """
    if train.n_inputs != state.n_inputs:
        raise SimulationInputError(
            f"Spike train has {train.n_inputs} inputs, network expects {state.n_inputs}"
        )
    dense = train.dense_times()
    fire = first_fire_times(state, dense[None, :])[0]
    if not inhibition:
        return [float(t) if np.isfinite(t) else None for t in fire]

    winner, fire_time = _winner(fire)
    trace = None
    if record_trace:
        t_end = fire_time if fire_time is not None else np.inf
        trace = _end_potentials(state, dense[None, :] + state.delays, winner, t_end)
    return SimResult(winner=winner, fire_time=fire_time, potential_trace=trace)


def stdp_update(w, t_pre, t_post, cfg: SnnConfig):
    """
    Multiplicative STDP weight change.

    Potentiation when t_post >= t_pre, depression otherwise (t_pre = +inf for
    inputs that never reached the neuron). Works on scalars and arrays; the
    caller clamps w + Δw.
    """
    span = cfg.w_max - cfg.w_min
    potentiation = cfg.alpha_plus * np.exp(-cfg.beta_plus * (w - cfg.w_min) / span)
    depression = -cfg.alpha_minus * np.exp(-cfg.beta_minus * (cfg.w_max - w) / span)
    delta = np.where(np.asarray(t_post) >= np.asarray(t_pre), potentiation, depression)
    return float(delta) if delta.ndim == 0 else delta


def threshold_update(fired: Sequence[bool], fire_time: Optional[float], cfg: SnnConfig,
                     n_f: int) -> np.ndarray:
    """
    Homeostatic threshold changes for one sample.

    The winner moves by -η·(t_fire - t_obj) + η, every other neuron by
    -η/(n_f - 1). Nothing changes when no neuron fired.
    """
    fired = np.asarray(fired, dtype=bool)
    delta = np.zeros(n_f, dtype=np.float64)
    if not fired.any() or fire_time is None:
        return delta
    if n_f > 1:
        delta[:] = -cfg.eta / (n_f - 1)
    winner = int(np.flatnonzero(fired)[0])
    delta[winner] = -cfg.eta * (fire_time - cfg.t_obj) + cfg.eta
    return delta


def _learn(state: SnnState, dense: np.ndarray, winner: Optional[int],
           fire_time: Optional[float]) -> None:
    """Apply STDP to the winner's synapses and homeostasis to all thresholds."""
    if winner is None:
        return
    cfg = state.config
    arrivals = dense + state.delays[winner]
    t_pre = np.where(arrivals <= fire_time, arrivals, np.inf)
    row = state.weights[winner]
    state.weights[winner] = np.clip(row + stdp_update(row, t_pre, fire_time, cfg), cfg.w_min, cfg.w_max)

    fired = np.zeros(state.n_f, dtype=bool)
    fired[winner] = True
    state.thresholds += threshold_update(fired, fire_time, cfg, state.n_f)
    np.maximum(state.thresholds, cfg.threshold_floor, out=state.thresholds)


def present_training_sample(state: SnnState, train: SpikeTrain) -> Tuple[SnnState, SimResult]:
    """Simulate with inhibition, then learn from the winner. Updates `state` in place."""
    result = simulate(state, train, inhibition=True)
    _learn(state, train.dense_times(), result.winner, result.fire_time)
    return state, result


def train_snn(state: SnnState, patches: Union[np.ndarray, Sequence[np.ndarray]], epochs: int,
              zero_latency_spikes: bool = False, seed: Optional[int] = None,
              log: Optional[TrainingLog] = None) -> Tuple[SnnState, TrainingLog]:
    """
    Train on coded patches (n_p × w_p × w_p × C_in, values in [0,1]).

    Each epoch presents every patch once in a freshly shuffled order drawn from
    `seed` (the network seed when omitted). The state is updated in place.
    """
    log = log if log is not None else TrainingLog()
    if epochs <= 0:
        return state, log

    patches = np.asarray(patches, dtype=np.float64)
    flat = patches.reshape(len(patches), -1)
    if flat.shape[1] != state.n_inputs:
        raise SimulationInputError(
            f"Patches have {flat.shape[1]} inputs, network expects {state.n_inputs}"
        )
    cfg = state.config
    dense_all = latency_times(flat, cfg.t_duration, zero_latency_spikes)
    rng = make_rng(cfg.seed if seed is None else seed)

    logger.info(
        "SNN training started",
        n_f=state.n_f,
        n_inputs=state.n_inputs,
        n_patches=len(flat),
        epochs=epochs,
    )
    for epoch in range(epochs):
        order = rng.permutation(len(flat))
        wins = np.zeros(state.n_f, dtype=np.int64)
        silent = 0
        for index in order:
            dense = dense_all[index]
            fire = first_fire_times(state, dense[None, :])[0]
            winner, fire_time = _winner(fire)
            if winner is None:
                silent += 1
                continue
            wins[winner] += 1
            _learn(state, dense, winner, fire_time)

        spikes = int(wins.sum())
        SNN_PRESENTATIONS.labels(phase="train").inc(len(flat))
        SNN_OUTPUT_SPIKES.labels(phase="train").inc(spikes)
        entry = EpochLog(
            epoch=len(log.epochs),
            presentations=len(flat),
            output_spikes=spikes,
            silent_samples=silent,
            threshold_min=float(state.thresholds.min()),
            threshold_mean=float(state.thresholds.mean()),
            threshold_max=float(state.thresholds.max()),
            win_counts=wins.tolist(),
        )
        log.epochs.append(entry)
        logger.info(
            "Epoch finished",
            epoch=entry.epoch,
            spikes=spikes,
            silent=silent,
            threshold_mean=entry.threshold_mean,
        )
    return state, log


def extract_features(state: SnnState, patch: np.ndarray, inhibition: bool = True,
                     zero_latency_spikes: bool = False) -> FeatureVector:
    """Feature vector of one coded patch, decoded from output spike times."""
    train = encode_latency(patch, state.config.t_duration, zero_latency_spikes)
    return FeatureVector(values=features_from_times(state, train.dense_times()[None, :], inhibition)[0])


def features_from_times(state: SnnState, input_times: np.ndarray, inhibition: bool = True) -> np.ndarray:
    """Decoded B×n_f features for B dense input-time rows."""
    cfg = state.config
    fire = first_fire_times(state, input_times)
    if inhibition:
        winners = np.argmin(fire, axis=1)
        winner_times = fire[np.arange(len(fire)), winners]
        suppressed = np.full_like(fire, np.inf)
        suppressed[np.arange(len(fire)), winners] = winner_times
        fire = suppressed
    SNN_PRESENTATIONS.labels(phase="extract").inc(len(fire))
    SNN_OUTPUT_SPIKES.labels(phase="extract").inc(int(np.isfinite(fire).sum()))
    return decode_times(fire, cfg.t_out_min, cfg.t_out_max)


class SnnFeatureExtractor:
    """
    Frozen SNN dictionary, one network per channel group of the color strategy.

    Groups are evaluated independently and their features concatenated.
    """

    def __init__(self, states: Sequence[SnnState], strategy: ColorStrategy,
                 inhibition: bool = True, zero_latency_spikes: bool = False):
        self.states = list(states)
        self.strategy = ColorStrategy(strategy)
        self.inhibition = inhibition
        self.zero_latency_spikes = zero_latency_spikes
        if len(self.states) != len(self.strategy.channel_groups):
            raise SimulationInputError(
                f"Strategy {self.strategy.value} needs {len(self.strategy.channel_groups)} "
                f"networks, got {len(self.states)}"
            )

    @property
    def n_features(self) -> int:
        return sum(s.n_f for s in self.states)

    @property
    def channel_groups(self) -> Tuple[int, ...]:
        return self.strategy.channel_groups

    def transform(self, patches: np.ndarray) -> np.ndarray:
        """B × w_p × w_p × C_in coded patches → B × n_features."""
        bounds = np.cumsum((0,) + self.channel_groups)
        outputs = []
        for state, a, b in zip(self.states, bounds[:-1], bounds[1:]):
            group = patches[..., a:b].reshape(len(patches), -1)
            times = latency_times(group, state.config.t_duration, self.zero_latency_spikes)
            outputs.append(features_from_times(state, times, self.inhibition))
        return np.concatenate(outputs, axis=1)

    def reconstruct(self, patches: np.ndarray, features: np.ndarray) -> np.ndarray:
        """Activation-weighted sum of weight rows, in coded patch space."""
        bounds = np.cumsum((0,) + self.channel_groups)
        f_bounds = np.cumsum([0] + [s.n_f for s in self.states])
        parts = []
        for i, state in enumerate(self.states):
            side = patches.shape[1]
            group = features[:, f_bounds[i]:f_bounds[i + 1]] @ state.weights
            parts.append(group.reshape(len(patches), side, side, bounds[i + 1] - bounds[i]))
        return np.concatenate(parts, axis=-1)

    def dictionaries(self) -> List[np.ndarray]:
        return [s.weights for s in self.states]
