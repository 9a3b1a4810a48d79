"""Feed-forward rectifier classifier trained with momentum SGD.

Stand-in for the convolutional backbones: hidden widths are scaled by a
width multiplier, the last layer is the classification layer and the layer
before it provides the retrieval features.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ShapeError, TrainingError, UsageError


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_widths: tuple = (256, 128)
    num_classes: int = 2
    width_multiplier: float = 1.0
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1:
            raise ConfigurationError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if not 0.0 < self.width_multiplier <= 1.0:
            raise ConfigurationError("width_multiplier must lie in (0, 1]")
        if any(w < 1 for w in self.hidden_widths):
            raise ConfigurationError("hidden widths must be positive")
        if self.activation != "relu":
            raise ConfigurationError(f"unsupported activation {self.activation!r}")

    @property
    def effective_widths(self) -> tuple:
        # round() guards against products like 0.1 * 30 = 3.0000000000000004
        return tuple(max(1, math.ceil(round(w * self.width_multiplier, 9)))
                     for w in self.hidden_widths)

    @property
    def layer_shapes(self) -> list:
        dims = [self.input_dim, *self.effective_widths, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def feature_dim(self) -> int:
        if not self.hidden_widths:
            raise ConfigurationError("a network without hidden layers has no feature layer")
        return self.effective_widths[-1]

    @property
    def parameter_count(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_shapes)

    def to_dict(self):
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d


class MlpNetwork:
    """Weights are stored ``(fan_in, fan_out)`` so a layer computes ``x @ W + b``."""

    _versions = itertools.count()

    def __init__(self, spec: MlpSpec, weights, biases, seed=None, steps=0):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        shapes = [w.shape for w in self.weights]
        if shapes != spec.layer_shapes or [b.shape for b in self.biases] != [(s[1],) for s in shapes]:
            raise ShapeError(f"parameter shapes {shapes} do not match spec {spec.layer_shapes}")
        self.seed = seed
        self.steps = steps
        self.touch()

    def touch(self):
        """Mark parameters as modified; invalidates outstanding forward caches."""
        self.version = next(self._versions)

    @property
    def parameters(self) -> list:
        return [*self.weights, *self.biases]

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(self.spec, [w.copy() for w in self.weights],
                          [b.copy() for b in self.biases], self.seed, self.steps)

    def equals(self, other: "MlpNetwork") -> bool:
        return self.spec == other.spec and all(
            np.array_equal(a, b) for a, b in zip(self.parameters, other.parameters))

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "layers": [{"shape": list(w.shape), "weights": [float(v) for v in w.ravel()],
                        "bias": [float(v) for v in b]}
                       for w, b in zip(self.weights, self.biases)],
            "seed": self.seed,
            "steps": self.steps,
        }

    @classmethod
    def from_dict(cls, obj):
        spec_d = dict(obj["spec"])
        spec_d["hidden_widths"] = tuple(spec_d["hidden_widths"])
        spec = MlpSpec(**spec_d)
        weights = [np.array(layer["weights"], dtype=np.float64).reshape(layer["shape"])
                   for layer in obj["layers"]]
        biases = [np.array(layer["bias"], dtype=np.float64) for layer in obj["layers"]]
        return cls(spec, weights, biases, obj.get("seed"), obj.get("steps", 0))


def save_network(net: MlpNetwork, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net.to_dict(), fh)
        fh.write("\n")


def load_network(path) -> MlpNetwork:
    with open(path, encoding="utf-8") as fh:
        return MlpNetwork.from_dict(json.load(fh))


def init_network(spec: MlpSpec, seed: int) -> MlpNetwork:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in spec.layer_shapes:
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(spec, weights, biases, seed=seed)


@dataclass
class ForwardCache:
    network_id: int
    version: int
    inputs: list
    pre_activations: list


def _as_batch(x, expected_dim):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != expected_dim:
        raise ShapeError(f"expected inputs of dimensionality {expected_dim}, got shape {x.shape}")
    return batch, single


def forward(net: MlpNetwork, x):
    """Logits for a batch (or a single vector) plus the cache needed by :func:`backward`."""
    batch, single = _as_batch(x, net.spec.input_dim)
    inputs, pres = [], []
    h = batch
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w + b
        pres.append(z)
        h = z if k == last else np.maximum(z, 0.0)
    cache = ForwardCache(id(net), net.version, inputs, pres)
    return (h[0] if single else h), cache


@dataclass
class Gradients:
    weights: list
    biases: list

    @property
    def parameters(self) -> list:
        return [*self.weights, *self.biases]


def backward(net: MlpNetwork, cache: ForwardCache, grad_logits) -> Gradients:
    """Reverse-mode gradients of a scalar loss given its gradient wrt the logits.

    The batch reduction is whatever ``grad_logits`` encodes; losses in this
    package already divide by the batch size.
    """
    if cache.network_id != id(net) or cache.version != net.version:
        raise UsageError("forward cache does not belong to the current network parameters")
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != cache.pre_activations[-1].shape:
        raise ShapeError(f"gradient shape {g.shape} does not match logits "
                         f"{cache.pre_activations[-1].shape}")
    n_layers = len(net.weights)
    dws, dbs = [None] * n_layers, [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        dws[k] = cache.inputs[k].T @ g
        dbs[k] = g.sum(axis=0)
        if k > 0:
            g = (g @ net.weights[k].T) * (cache.pre_activations[k - 1] > 0.0)
    return Gradients(dws, dbs)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, labels):
    """Cross-entropy against integer labels and its gradient wrt the logits.

    For a single logit vector returns ``(loss, grad)``; for a batch the loss
    and gradient are averaged over the rows.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if len(labels) != len(z2) or np.any(labels < 0) or np.any(labels >= z2.shape[1]):
        raise ShapeError("labels must be valid class indices, one per row")
    rows = np.arange(len(z2))
    logp = log_softmax(z2)
    losses = -logp[rows, labels]
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    if single:
        return float(losses[0]), grad[0]
    return float(losses.mean()), grad / len(z2)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    decay_factor: float = 0.1
    decay_every_steps: int = 20000
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigurationError("decay_factor must lie in (0, 1]")
        if self.decay_every_steps < 1:
            raise ConfigurationError("decay_every_steps must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")

    def lr_at(self, step: int) -> float:
        return self.learning_rate * self.decay_factor ** (step // self.decay_every_steps)


@dataclass
class TrainLog:
    epoch_loss: list = field(default_factory=list)
    epoch_accuracy: list = field(default_factory=list)
    steps: int = 0
    lr_trace: list = field(default_factory=list)
    # Populated by distillation only: per-epoch means of the soft-target term
    # and of the lambda-weighted hard-label term.
    epoch_distill_term: list = field(default_factory=list)
    epoch_hard_term: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def init_velocity(net: MlpNetwork) -> list:
    return [np.zeros_like(p) for p in net.parameters]


def momentum_update(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
                    velocity: Sequence[np.ndarray], lr: float, momentum: float):
    """In place: ``v <- momentum * v - lr * g``; ``theta <- theta + v``."""
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v -= lr * g
        p += v


def sgd_momentum_step(net: MlpNetwork, grads: Gradients, velocity: list,
                      config: TrainConfig, step: int):
    params = net.parameters
    if len(velocity) != len(params) or any(v.shape != p.shape for v, p in zip(velocity, params)):
        raise ShapeError("velocity state does not match the network parameters")
    momentum_update(params, grads.parameters, velocity, config.lr_at(step), config.momentum)
    net.steps += 1
    net.touch()
    return net, velocity


def check_labels(labels, num_classes) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise TrainingError(f"labels must be densely indexed in [0, {num_classes})")
    return labels


BatchLoss = Callable[[np.ndarray, np.ndarray], tuple]


def fit_loop(net: MlpNetwork, X: np.ndarray, labels: np.ndarray, config: TrainConfig,
             batch_loss: BatchLoss, log: TrainLog, extra_terms: int = 0) -> TrainLog:
    """Shuffled mini-batch momentum SGD shared by plain and distilled training.

    ``batch_loss(indices, logits)`` returns ``(loss, grad_logits, *terms)``;
    the optional terms are averaged per epoch into ``log.epoch_distill_term``
    and ``log.epoch_hard_term``. The final partial batch is kept.
    """
    n = len(X)
    rng = np.random.default_rng([config.seed, 0x5EED])
    velocity = init_velocity(net)
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        loss_sum = 0.0
        correct = 0
        term_sums = [0.0] * extra_terms
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            logits, cache = forward(net, X[idx])
            loss, grad, *terms = batch_loss(idx, logits)
            grads = backward(net, cache, grad)
            log.lr_trace.append(config.lr_at(step))
            sgd_momentum_step(net, grads, velocity, config, step)
            step += 1
            loss_sum += loss * len(idx)
            correct += int(np.count_nonzero(logits.argmax(axis=1) == labels[idx]))
            for t, value in enumerate(terms):
                term_sums[t] += value * len(idx)
        log.epoch_loss.append(loss_sum / n)
        log.epoch_accuracy.append(correct / n)
        if extra_terms:
            log.epoch_distill_term.append(term_sums[0] / n)
            log.epoch_hard_term.append(term_sums[1] / n)
    log.steps = step
    return log


def train_classifier(spec: MlpSpec, X, labels, config: TrainConfig, init: MlpNetwork | None = None):
    """Train with softmax cross-entropy; identities are the classes.

    Returns ``(network, TrainLog)``. ``init`` overrides the He initialisation
    seeded by ``config.seed``; it is copied, never modified.
    """
    X, _ = _as_batch(X, spec.input_dim)
    if len(X) == 0:
        raise TrainingError("cannot train on an empty dataset")
    labels = check_labels(labels, spec.num_classes)
    if len(labels) != len(X):
        raise TrainingError("one label per training row is required")
    net = init.copy() if init is not None else init_network(spec, config.seed)

    def batch_loss(idx, logits):
        return softmax_cross_entropy(logits, labels[idx])

    log = fit_loop(net, X, labels, config, batch_loss, TrainLog())
    return net, log


def predict(net: MlpNetwork, X) -> np.ndarray:
    logits, _ = forward(net, X)
    return np.atleast_2d(logits).argmax(axis=1)


def accuracy(net: MlpNetwork, X, labels) -> float:
    return float(np.mean(predict(net, X) == np.asarray(labels)))


def extract_deep_features(net: MlpNetwork, x) -> np.ndarray:
    """Post-rectifier activations of the last hidden layer."""
    if not net.spec.hidden_widths:
        raise ConfigurationError("a network without hidden layers has no feature layer")
    batch, single = _as_batch(x, net.spec.input_dim)
    h = batch
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
    return h[0] if single else h
