"""Quantification consumers that close the loop against ground truth.

Two estimators map signals back to tissue parameters:

* exhaustive dictionary matching over a simulated (t1, t2) grid, and
* a small fully-connected regressor trained per voxel on echo-magnitude
  vectors with plain mini-batch gradient descent (fixed learning rate,
  deterministic seeded initialization, hand-written backprop so gradients
  can be checked against finite differences).

Both are wrapped in scikit-learn style estimators (``fit``/``predict``,
``get_params``) so they compose with the wider ecosystem.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from . import datasets
from .bloch import Constants, run_sequence
from .errors import (
    DivergenceError,
    InsufficientPeaksError,
    InvalidArgumentError,
    ShapeError,
)
from .phantoms import PhantomMap
from .sequences import Adc, Delay, RfPulse, Sequence, DEFAULT_ADC_DWELL

#: (echo times, recovery delay) blocks of the default dictionary sequence; the
#: echo spread resolves T2 up to ~700 ms while the varied recovery times give
#: the normalized signal shape its T1 sensitivity
_DICT_ECHOES = (15.0, 45.0, 100.0, 180.0, 300.0, 460.0, 650.0)
DEFAULT_DICTIONARY_BLOCKS = (
    (_DICT_ECHOES, 120.0),
    (_DICT_ECHOES, 300.0),
    (_DICT_ECHOES, 650.0),
    (_DICT_ECHOES, 1300.0),
    (_DICT_ECHOES, 2500.0),
    (_DICT_ECHOES, 4500.0),
)


# ---------------------------------------------------------------------------
# dictionary matching

@dataclass
class Dictionary:
    """Unit-norm magnitude signal atoms over a (t1, t2) grid, row-major over (t1, t2)."""

    atoms: np.ndarray       # (n_entries, signal length), unit L2 rows
    t1_values: np.ndarray   # (n_entries,) ms
    t2_values: np.ndarray   # (n_entries,) ms
    t1_grid: np.ndarray
    t2_grid: np.ndarray
    sequence_id: str = ""

    @property
    def n_entries(self) -> int:
        return self.atoms.shape[0]


@dataclass(frozen=True)
class MatchResult:
    t1: float
    t2: float
    correlation: float
    index: int


def saturation_recovery_train(blocks=DEFAULT_DICTIONARY_BLOCKS,
                              adc_dwell: float = DEFAULT_ADC_DWELL) -> Sequence:
    """Multi-echo spin-echo train with per-block (echo times, recovery delay) pairs.

    Each block is a CPMG readout (excite, then one refocusing pulse per echo)
    followed by a recovery delay, so an echo at time tau carries
    e^(-tau/T2) weighted by the T1 regrowth accumulated since the previous
    excitation.  Mixing echo and recovery times makes the normalized signal
    shape jointly sensitive to T1 and T2.
    """
    events = []
    for echo_times, recovery in blocks:
        events.append(RfPulse(flip=90.0, phase=0.0))
        now, prev = 0.0, 0.0
        for tau in echo_times:
            midpoint = (prev + tau) / 2
            events.append(Delay(duration=midpoint - now))
            events.append(RfPulse(flip=180.0, phase=90.0, refocus=True))
            events.append(Delay(duration=tau - midpoint))
            events.append(Adc(n_samples=1, dwell=adc_dwell))
            now, prev = tau + adc_dwell, tau
        events.append(Delay(duration=recovery))
    return Sequence(events=tuple(events), name="sat_recovery_train",
                    metadata={"blocks": [[list(ets), rec] for ets, rec in blocks]})


def _check_grid(name: str, grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0:
        raise InvalidArgumentError(f"{name} must be a non-empty 1D list")
    if np.any(grid <= 0):
        raise InvalidArgumentError(f"{name} values must be > 0")
    if np.any(np.diff(grid) <= 0):
        raise InvalidArgumentError(f"{name} must be strictly increasing")
    return grid


def build_dictionary(t1_grid, t2_grid, seq: Sequence,
                     constants: Constants = Constants()) -> Dictionary:
    """Simulate one unit-pd voxel per (t1, t2) pair and store normalized magnitudes."""
    t1_grid = _check_grid("t1_grid", t1_grid)
    t2_grid = _check_grid("t2_grid", t2_grid)
    if not seq.has_adc:
        raise InvalidArgumentError("dictionary sequence must contain at least one ADC event")

    n1, n2 = len(t1_grid), len(t2_grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # grid voxels legitimately cross t2 > t1
        grid_phantom = PhantomMap(
            width=n2, height=n1,
            pd=np.ones((n1, n2)),
            t1=np.repeat(t1_grid[:, None], n2, axis=1),
            t2=np.repeat(t2_grid[None, :], n1, axis=0),
            region_label=np.ones((n1, n2), dtype=np.int32),
        )
    record = run_sequence(grid_phantom, seq, constants=constants, mode="voxelwise")
    atoms = np.abs(record.images).reshape(record.images.shape[0], n1 * n2).T
    norms = np.linalg.norm(atoms, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise InvalidArgumentError("sequence produced an all-zero dictionary atom")
    return Dictionary(
        atoms=atoms / norms,
        t1_values=np.repeat(t1_grid, n2),
        t2_values=np.tile(t2_grid, n1),
        t1_grid=t1_grid,
        t2_grid=t2_grid,
        sequence_id=seq.name,
    )


def dictionary_match(signal: np.ndarray, dictionary: Dictionary) -> MatchResult:
    """Return the grid entry maximizing the normalized magnitude inner product."""
    s = np.abs(np.asarray(signal)).astype(np.float64).ravel()
    if s.shape[0] != dictionary.atoms.shape[1]:
        raise ShapeError(f"signal length {s.shape[0]} != atom length {dictionary.atoms.shape[1]}")
    norm = np.linalg.norm(s)
    if norm == 0:
        raise InvalidArgumentError("cannot match an all-zero signal")
    scores = dictionary.atoms @ (s / norm)
    idx = int(np.argmax(scores))  # ties break to the lowest entry index
    return MatchResult(t1=float(dictionary.t1_values[idx]), t2=float(dictionary.t2_values[idx]),
                       correlation=float(scores[idx]), index=idx)


def dictionary_match_batch(signals: np.ndarray, dictionary: Dictionary):
    """Vectorized match of stacked signals, shape (n, signal length)."""
    s = np.abs(np.asarray(signals)).astype(np.float64)
    if s.ndim != 2 or s.shape[1] != dictionary.atoms.shape[1]:
        raise ShapeError(f"signals must be (n, {dictionary.atoms.shape[1]}), got {s.shape}")
    norms = np.linalg.norm(s, axis=1)
    if np.any(norms == 0):
        raise InvalidArgumentError("cannot match an all-zero signal")
    scores = (s / norms[:, None]) @ dictionary.atoms.T
    idx = np.argmax(scores, axis=1)
    return (dictionary.t1_values[idx], dictionary.t2_values[idx],
            scores[np.arange(len(idx)), idx])


# ---------------------------------------------------------------------------
# minimal trainable regressor

@dataclass
class MlpModel:
    """Fully-connected network: tanh hidden layers, identity output."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]  # per layer, (fan_out, fan_in)
    biases: list[np.ndarray]   # per layer, (fan_out,)
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise InvalidArgumentError("layer_sizes needs at least input and output")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[k + 1], self.layer_sizes[k])
            if w.shape != expect or b.shape != (expect[0],):
                raise ShapeError(f"layer {k}: weight shape {w.shape} / bias {b.shape}, expected {expect}")


def init_mlp(layer_sizes, seed: int = 0) -> MlpModel:
    """Seed-deterministic init, uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    return _init_mlp_from(rng, tuple(int(n) for n in layer_sizes))


def _init_mlp_from(rng: np.random.Generator, layer_sizes: tuple[int, ...]) -> MlpModel:
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
        limit = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-limit, limit, size=fan_out))
    return MlpModel(layer_sizes=layer_sizes, weights=weights, biases=biases)


def _forward_cached(model: MlpModel, x: np.ndarray):
    acts = [x]
    for k in range(len(model.weights) - 1):
        z = acts[-1] @ model.weights[k].T + model.biases[k]
        acts.append(np.tanh(z))
    out = acts[-1] @ model.weights[-1].T + model.biases[-1]
    return acts, out


def mlp_loss_and_grads(model: MlpModel, x: np.ndarray, y: np.ndarray):
    """Mean squared loss and its analytic gradients for every weight and bias."""
    acts, pred = _forward_cached(model, x)
    diff = pred - y
    loss = float(np.mean(diff ** 2))
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    delta = 2.0 * diff / diff.size
    for k in range(len(model.weights) - 1, -1, -1):
        grads_w[k] = delta.T @ acts[k]
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ model.weights[k]) * (1.0 - acts[k] ** 2)  # tanh'
    return loss, grads_w, grads_b


def mlp_train(x: np.ndarray, y: np.ndarray, layer_sizes, learning_rate: float,
              epochs: int, batch_size: int, seed: int = 0):
    """Mini-batch gradient descent; returns (model, per-epoch loss trace).

    Deterministic in (data, hyper-parameters, seed): initialization and the
    per-epoch shuffles come from one seeded stream.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if len(x) != len(y) or len(x) == 0:
        raise ShapeError(f"need matching non-empty inputs/targets, got {len(x)} vs {len(y)}")
    layer_sizes = tuple(int(n) for n in layer_sizes)
    if layer_sizes[0] != x.shape[1] or layer_sizes[-1] != y.shape[1]:
        raise ShapeError(
            f"layer_sizes {layer_sizes} incompatible with data shapes {x.shape} / {y.shape}")
    if epochs < 1 or batch_size < 1:
        raise InvalidArgumentError("epochs and batch_size must be >= 1")

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    model = _init_mlp_from(rng, layer_sizes)
    n = len(x)
    trace = np.zeros(epochs)
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
        for epoch in range(epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, batch_size):
                batch = order[start:start + batch_size]
                loss, grads_w, grads_b = mlp_loss_and_grads(model, x[batch], y[batch])
                if not np.isfinite(loss):
                    raise DivergenceError(f"non-finite training loss at epoch {epoch}")
                total += loss * len(batch)
                for k in range(len(model.weights)):
                    model.weights[k] -= learning_rate * grads_w[k]
                    model.biases[k] -= learning_rate * grads_b[k]
            trace[epoch] = total / n
    return model, trace


def mlp_infer(model: MlpModel, signals: np.ndarray) -> np.ndarray:
    """Deterministic forward pass; accepts one vector or a stack of them."""
    arr = np.asarray(signals, dtype=np.float64)
    single = arr.ndim == 1
    x = np.atleast_2d(arr)
    if x.shape[1] != model.layer_sizes[0]:
        raise ShapeError(f"signal length {x.shape[1]} != input layer {model.layer_sizes[0]}")
    _, out = _forward_cached(model, x)
    return out[0] if single else out


def save_model(model: MlpModel, directory) -> None:
    """Persist as a bundle: manifest with layer sizes plus raw weight arrays."""
    fields = {}
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        fields[f"layer{k}.weight"] = w
        fields[f"layer{k}.bias"] = b
    config = {"layer_sizes": list(model.layer_sizes), "activation": model.activation}
    bundle = datasets.bundle_from_samples("mlp_model", 0, config, [("model", fields, {})])
    datasets.write_bundle(bundle, directory)


def load_model(directory) -> MlpModel:
    bundle = datasets.read_bundle(directory)
    config = bundle.manifest.generator_config
    layer_sizes = tuple(config["layer_sizes"])
    arrays = bundle.arrays["model"]
    weights = [arrays[f"layer{k}.weight"].astype(np.float64) for k in range(len(layer_sizes) - 1)]
    biases = [arrays[f"layer{k}.bias"].astype(np.float64) for k in range(len(layer_sizes) - 1)]
    return MlpModel(layer_sizes=layer_sizes, weights=weights, biases=biases,
                    activation=config.get("activation", "tanh"))


# ---------------------------------------------------------------------------
# loss utilities and evaluation metrics

def model_consistency_loss(p_hat: np.ndarray, p: np.ndarray, forward, weight: float = 1.0) -> float:
    """Parameter loss plus weighted signal-domain loss through an analytic forward model."""
    if weight < 0:
        raise InvalidArgumentError(f"weight must be >= 0, got {weight}")
    p_hat = np.asarray(p_hat, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if p_hat.shape != p.shape:
        raise ShapeError(f"parameter shapes differ: {p_hat.shape} vs {p.shape}")
    loss = float(np.mean((p - p_hat) ** 2))
    if weight > 0:
        s, s_hat = np.asarray(forward(p)), np.asarray(forward(p_hat))
        loss += weight * float(np.mean(np.abs(s - s_hat) ** 2))
    return loss


def peak_correlation(reference, test, threshold: float = 0.05) -> float:
    """Pearson correlation of the two magnitude spectra at the reference's peak bins.

    Peaks are strict interior local maxima above ``threshold`` times the
    reference maximum; fewer than two detected peaks is an error.
    """
    ref = np.abs(getattr(reference, "values", reference))
    tst = np.abs(getattr(test, "values", test))
    if ref.shape != tst.shape:
        raise ShapeError(f"spectra lengths differ: {ref.shape} vs {tst.shape}")
    if not 0.0 < threshold < 1.0:
        raise InvalidArgumentError(f"threshold must lie in (0, 1), got {threshold}")
    inner = ref[1:-1]
    is_peak = (inner > ref[:-2]) & (inner > ref[2:]) & (inner > threshold * ref.max())
    idx = np.where(is_peak)[0] + 1
    if len(idx) < 2:
        raise InsufficientPeaksError(f"found {len(idx)} peak(s); need at least 2 for a correlation")
    return float(np.corrcoef(ref[idx], tst[idx])[0, 1])


# ---------------------------------------------------------------------------
# scikit-learn style facades

class DictionaryMatcher(BaseEstimator):
    """Estimator facade over dictionary matching: ``fit`` builds, ``predict`` matches.

    ``predict`` returns an (n, 2) array of [t1, t2] in ms.
    """

    def __init__(self, t1_grid=None, t2_grid=None, sequence=None, constants=None):
        self.t1_grid = t1_grid
        self.t2_grid = t2_grid
        self.sequence = sequence
        self.constants = constants

    def fit(self, X=None, y=None):
        seq = self.sequence if self.sequence is not None else saturation_recovery_train()
        constants = self.constants if self.constants is not None else Constants()
        self.dictionary_ = build_dictionary(self.t1_grid, self.t2_grid, seq, constants)
        return self

    def predict(self, X):
        if not hasattr(self, "dictionary_"):
            raise InvalidArgumentError("DictionaryMatcher must be fitted before predict")
        t1, t2, _ = dictionary_match_batch(np.atleast_2d(X), self.dictionary_)
        return np.column_stack([t1, t2])


class MlpRegressor(BaseEstimator, RegressorMixin):
    """Estimator facade over the minimal trainable regressor."""

    def __init__(self, hidden_layer_sizes=(32,), learning_rate=0.05, epochs=100,
                 batch_size=32, seed=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        self._squeeze_output = y.ndim == 1
        y2 = y[:, None] if self._squeeze_output else y
        layer_sizes = (X.shape[1], *self.hidden_layer_sizes, y2.shape[1])
        self.model_, self.loss_trace_ = mlp_train(
            X, y2, layer_sizes, self.learning_rate, self.epochs, self.batch_size, self.seed)
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise InvalidArgumentError("MlpRegressor must be fitted before predict")
        out = mlp_infer(self.model_, np.atleast_2d(np.asarray(X, dtype=np.float64)))
        return out[:, 0] if self._squeeze_output else out
