"""Feed-forward tanh regressors, Integrated Gradients, and uncertainty-penalized training.

Weights are stored ``(fan_in, fan_out)`` and inputs are rows, so a layer is
``a @ W + b``. Every hidden layer is tanh; the output layer is linear with a
single unit.

The penalized objective for a batch is

    mean_i [ (f(x_i) - y_i)^2 + lam * || sigma * IG(x_i) ||^2 ]

where IG is the midpoint Riemann-sum Integrated Gradients of the same
network. Its parameter gradient is obtained by reverse-mode differentiation
of the input-gradient computation itself (double backprop), so it is exact
for the discretized attribution rather than for the continuous integral.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import StandardizedDataset, UncertaintySpec

log = logging.getLogger(__name__)

MODEL_FORMAT = "uncertain-attr-mlp/1"


class TrainingError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class MlpPredictor:
    layer_weights: tuple[np.ndarray, ...]
    layer_biases: tuple[np.ndarray, ...]
    activation: str = "tanh"
    regularization_lambda: float = 0.0

    def __post_init__(self):
        if self.activation != "tanh":
            raise ValueError("only tanh activations are supported")
        if len(self.layer_weights) != len(self.layer_biases) or not self.layer_weights:
            raise ValueError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.layer_weights, self.layer_biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match weights {w.shape}")
            if i and w.shape[0] != self.layer_weights[i - 1].shape[1]:
                raise ValueError(f"layer {i}: input width {w.shape[0]} does not compose")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")
        if self.layer_weights[-1].shape[1] != 1:
            raise ValueError("final layer must have a single output")

    @property
    def input_dim(self) -> int:
        return self.layer_weights[0].shape[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.layer_weights, self.layer_biases))

    def __call__(self, X) -> np.ndarray:
        """Batch prediction: rows of ``X`` in, one output per row."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(f"expected shape (n, {self.input_dim}), got {X.shape}")
        return _forward(self.layer_weights, self.layer_biases, X)[0]

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for wb in zip(self.layer_weights, self.layer_biases) for p in wb])

    def with_params(self, theta: np.ndarray) -> "MlpPredictor":
        weights, biases, pos = [], [], 0
        for w, b in zip(self.layer_weights, self.layer_biases):
            weights.append(theta[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(theta[pos:pos + b.size].copy())
            pos += b.size
        return MlpPredictor(tuple(weights), tuple(biases), self.activation, self.regularization_lambda)

    def to_dict(self, scaler_ref: str | None = None) -> dict:
        return {
            "format": MODEL_FORMAT,
            "activation": self.activation,
            "lambda": self.regularization_lambda,
            "layer_shapes": [list(w.shape) for w in self.layer_weights],
            "weights": [w.ravel().tolist() for w in self.layer_weights],
            "biases": [b.tolist() for b in self.layer_biases],
            "scaler": scaler_ref,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpPredictor":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"unrecognized model format {d.get('format')!r}")
        weights = tuple(np.asarray(w, float).reshape(s) for w, s in zip(d["weights"], d["layer_shapes"]))
        biases = tuple(np.asarray(b, float) for b in d["biases"])
        return cls(weights, biases, d["activation"], float(d["lambda"]))

    def to_json(self, scaler_ref: str | None = None) -> str:
        return json.dumps(self.to_dict(scaler_ref), indent=1)


@dataclass(frozen=True)
class TrainConfig:
    hidden_sizes: tuple[int, ...] = (32, 16)
    learning_rate: float = 1e-2
    epochs: int = 300
    batch_size: int = 64
    seed: int = 0
    ig_steps: int = 50
    lam: float = 0.0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.ig_steps <= 0:
            raise ValueError("epochs, batch_size and ig_steps must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if any(h <= 0 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))


@dataclass(frozen=True)
class IgAttribution:
    attributions: np.ndarray
    baseline_point: np.ndarray
    completeness_gap: float
    mean_gradient: np.ndarray = field(repr=False)


@dataclass
class TrainingLog:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_data_loss: list[float] = field(default_factory=list)


# ---------------------------------------------------------------------------
# forward / backward


def _forward(weights, biases, X):
    acts = [X]
    a = X
    for w, b in zip(weights[:-1], biases[:-1]):
        a = np.tanh(a @ w + b)
        acts.append(a)
    out = a @ weights[-1] + biases[-1]
    return out[:, 0], acts


def _param_grad(weights, acts, dout):
    """Backprop ``dout`` (d loss / d output, one per row) into parameter grads."""
    n_layers = len(weights)
    gw, gb = [None] * n_layers, [None] * n_layers
    delta = dout[:, None]
    for l in range(n_layers - 1, -1, -1):
        gw[l] = acts[l].T @ delta
        gb[l] = delta.sum(axis=0)
        if l:
            delta = (delta @ weights[l].T) * (1.0 - acts[l] ** 2)
    return gw, gb


def _input_grad(weights, acts):
    """d output / d input for every row, plus the intermediates double backprop needs."""
    n_layers = len(weights)
    n = acts[0].shape[0]
    d = {n_layers: np.ones((n, 1))}
    e = {}
    for l in range(n_layers, 1, -1):
        e[l - 1] = d[l] @ weights[l - 1].T
        d[l - 1] = e[l - 1] * (1.0 - acts[l - 1] ** 2)
    e[0] = d[1] @ weights[0].T
    return e[0], d, e


def _input_grad_vjp(weights, acts, d, e, v):
    """Parameter gradient of sum(v * input_grad), by reversing ``_input_grad``."""
    n_layers = len(weights)
    gw = [np.zeros_like(w) for w in weights]
    gb = [np.zeros(w.shape[1]) for w in weights]
    s_bar = {}
    e_bar = v
    gw[0] += e_bar.T @ d[1]
    d_bar = e_bar @ weights[0]
    for l in range(1, n_layers):
        # d_l = e_l * (1 - a_l^2);  e_l = d_{l+1} @ W_{l+1}^T
        s_bar[l] = d_bar * e[l]
        e_bar = d_bar * (1.0 - acts[l] ** 2)
        gw[l] += e_bar.T @ d[l + 1]
        d_bar = e_bar @ weights[l]
    # d_L is the constant 1: nothing further on the backward sweep.
    a_bar = None
    for l in range(n_layers - 1, 0, -1):
        a = acts[l]
        term = s_bar[l] * (-2.0 * a)
        a_bar = term if a_bar is None else a_bar + term
        h_bar = a_bar * (1.0 - a ** 2)
        gw[l - 1] += acts[l - 1].T @ h_bar
        gb[l - 1] += h_bar.sum(axis=0)
        if l > 1:
            a_bar = h_bar @ weights[l - 1].T
    return gw, gb


def _path_points(X, baseline, steps):
    alphas = (np.arange(steps) + 0.5) / steps
    diff = X - baseline
    return (baseline[None, None, :] + alphas[None, :, None] * diff[:, None, :]).reshape(-1, X.shape[1])


def _mean_path_gradient(weights, biases, X, baseline, steps):
    Z = _path_points(X, baseline, steps)
    _, acts = _forward(weights, biases, Z)
    g, d, e = _input_grad(weights, acts)
    return g.reshape(X.shape[0], steps, X.shape[1]).mean(axis=1), acts, d, e


# ---------------------------------------------------------------------------
# public operations


def init_mlp(input_dim: int, hidden_sizes: Sequence[int], seed: int, output_bias: float = 0.0) -> MlpPredictor:
    """Glorot-uniform initialization with zero hidden biases."""
    rng = np.random.default_rng(seed)
    sizes = [input_dim, *hidden_sizes, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    biases[-1] = np.array([float(output_bias)])
    return MlpPredictor(tuple(weights), tuple(biases))


def predict(model: MlpPredictor, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.input_dim,):
        raise ValueError(f"expected a vector of length {model.input_dim}, got shape {x.shape}")
    return float(model(x[None, :])[0])


def integrated_gradients_batch(model: MlpPredictor, X, baseline_point=None, steps: int = 200):
    """IG attributions for every row of ``X``.

    Returns ``(attributions, mean_gradient, completeness_gap)``, each with
    one row (or entry) per instance.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValueError(f"expected shape (n, {model.input_dim}), got {X.shape}")
    base = np.zeros(model.input_dim) if baseline_point is None else np.asarray(baseline_point, dtype=float)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(base))):
        raise ValueError("integrated gradients needs finite inputs")
    gbar, *_ = _mean_path_gradient(model.layer_weights, model.layer_biases, X, base, steps)
    attr = (X - base) * gbar
    gap = attr.sum(axis=1) - (model(X) - model(base[None, :])[0])
    return attr, gbar, gap


def integrated_gradients(model: MlpPredictor, x, baseline_point=None, steps: int = 200) -> IgAttribution:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.input_dim,):
        raise ValueError(f"expected a vector of length {model.input_dim}, got shape {x.shape}")
    base = np.zeros(model.input_dim) if baseline_point is None else np.asarray(baseline_point, dtype=float)
    attr, gbar, gap = integrated_gradients_batch(model, x[None, :], base, steps)
    return IgAttribution(attr[0], base.copy(), float(gap[0]), gbar[0])


def loss_and_grad(
    model: MlpPredictor,
    batch: tuple[np.ndarray, np.ndarray],
    spec: UncertaintySpec | None = None,
    lam: float = 0.0,
    ig_steps: int = 50,
    baseline_point=None,
) -> tuple[float, np.ndarray]:
    """Batch-mean squared error plus the IG attribution-uncertainty penalty.

    The gradient is flattened in ``MlpPredictor.flat_params`` order.
    """
    X, y = (np.asarray(a, dtype=float) for a in batch)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("batch must be a nonempty 2-D array")
    n = X.shape[0]
    weights, biases = model.layer_weights, model.layer_biases

    out, acts = _forward(weights, biases, X)
    resid = out - y
    loss = float(np.mean(resid ** 2))
    gw, gb = _param_grad(weights, acts, 2.0 * resid / n)

    if spec is not None and lam:
        if spec.dim != X.shape[1]:
            raise ValueError("uncertainty spec dimension does not match the batch")
        base = np.zeros(X.shape[1]) if baseline_point is None else np.asarray(baseline_point, dtype=float)
        s2 = spec.sigma ** 2
        diff = X - base
        gbar, pacts, d, e = _mean_path_gradient(weights, biases, X, base, ig_steps)
        attr = diff * gbar
        loss += float(lam * np.mean((s2 * attr ** 2).sum(axis=1)))
        # adjoint of the mean path gradient, spread evenly over path points
        gbar_adj = (2.0 * lam / n) * s2 * attr * diff
        v = np.repeat(gbar_adj / ig_steps, ig_steps, axis=0)
        pw, pb = _input_grad_vjp(weights, pacts, d, e, v)
        gw = [a + b for a, b in zip(gw, pw)]
        gb = [a + b for a, b in zip(gb, pb)]

    grad = np.concatenate([p.ravel() for wb in zip(gw, gb) for p in wb])
    return loss, grad


def _train(train: StandardizedDataset, config: TrainConfig, spec: UncertaintySpec | None):
    X, y = train.features, train.labels
    if len(train) == 0:
        raise ValueError("training set is empty")
    model = init_mlp(X.shape[1], config.hidden_sizes, config.seed, output_bias=float(np.mean(y)))
    model = MlpPredictor(model.layer_weights, model.layer_biases, regularization_lambda=config.lam)
    theta = model.flat_params()
    rng = np.random.default_rng([config.seed, 1])
    history = TrainingLog()
    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        total, n_batches = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grad = loss_and_grad(model, (X[idx], y[idx]), spec, config.lam, config.ig_steps)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            theta = theta - config.learning_rate * grad
            model = model.with_params(theta)
            total += loss
            n_batches += 1
        history.epoch_loss.append(total / n_batches)
        history.epoch_data_loss.append(float(np.mean((model(X) - y) ** 2)))
        if not np.isfinite(history.epoch_data_loss[-1]):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
    log.debug("trained lam=%g final loss %.4f", config.lam, history.epoch_loss[-1])
    return model, history


def train_mlp(train: StandardizedDataset, config: TrainConfig) -> tuple[MlpPredictor, TrainingLog]:
    """Plain mini-batch gradient descent on mean squared error."""
    if config.lam != 0:
        raise ValueError("train_mlp expects lambda = 0; use train_regularized_mlp")
    return _train(train, config, None)


def train_regularized_mlp(
    train: StandardizedDataset, spec: UncertaintySpec, config: TrainConfig
) -> tuple[MlpPredictor, TrainingLog]:
    """Train with the IG attribution-uncertainty penalty (``config.lam`` > 0)."""
    if not config.lam > 0:
        raise ValueError("train_regularized_mlp needs lambda > 0")
    if spec.dim != train.dim:
        raise ValueError("uncertainty spec dimension does not match the dataset")
    return _train(train, config, spec)
