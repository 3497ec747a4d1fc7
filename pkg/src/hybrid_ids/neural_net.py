"""From-scratch feedforward classifier: 41 inputs, two rectifier hidden
layers, 5 softmax outputs, trained with mini-batch gradient descent on
categorical cross-entropy.

All arithmetic is float64 numpy with a fixed evaluation order, so a fixed
seed reproduces weights bit-for-bit on the same platform.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import CoarseLabel, Dataset, N_FEATURES
from .evaluation import confusion, overall_accuracy
from .persist import atomic_write, check_version, fmt_floats, parse_floats, version_line

log = logging.getLogger(__name__)

N_CLASSES = len(CoarseLabel)


@dataclass(frozen=True)
class TrainConfig:
    hidden_dims: tuple[int, int] = (64, 32)
    learning_rate: float = 0.01
    epochs: int = 30
    batch_size: int = 128
    seed: int = 0

    def validate(self) -> None:
        if self.hidden_dims[0] < 1 or self.hidden_dims[1] < 1:
            raise ValueError("hidden_dims must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class MLPModel:
    dims: list[int]  # [n_in, h1, h2, n_out]
    weights: list[np.ndarray]  # W_l has shape (dims[l+1], dims[l])
    biases: list[np.ndarray]
    activations: list[str] = field(default_factory=lambda: ["relu", "relu", "softmax"])
    stats_fingerprint: str = ""

    def check_shapes(self) -> None:
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.dims[l + 1], self.dims[l]):
                raise ValueError(f"weight {l} has shape {w.shape}, expected "
                                 f"({self.dims[l + 1]}, {self.dims[l]})")
            if b.shape != (self.dims[l + 1],):
                raise ValueError(f"bias {l} has shape {b.shape}")


def init_model(
    config: TrainConfig,
    n_inputs: int = N_FEATURES,
    n_outputs: int = N_CLASSES,
    rng: np.random.Generator | None = None,
) -> MLPModel:
    """Seeded Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    dims = [n_inputs, config.hidden_dims[0], config.hidden_dims[1], n_outputs]
    weights, biases = [], []
    for l in range(3):
        fan_in, fan_out = dims[l], dims[l + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPModel(dims=dims, weights=weights, biases=biases)


def _forward_pass(model: MLPModel, X: np.ndarray):
    """Returns (pre-activations, activations, log-probabilities)."""
    zs, activations = [], [X]
    a = X
    for l in range(3):
        z = a @ model.weights[l].T + model.biases[l]
        zs.append(z)
        if l < 2:
            a = np.maximum(z, 0.0)
            activations.append(a)
    logits = zs[-1]
    shift = logits - logits.max(axis=1, keepdims=True)
    log_probs = shift - np.log(np.exp(shift).sum(axis=1, keepdims=True))
    return zs, activations, log_probs


def forward(model: MLPModel, x: np.ndarray) -> np.ndarray:
    """Class probability vector(s); softmax output sums to 1."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != model.dims[0]:
        raise ValueError(f"input has dimension {X.shape[1]}, model expects {model.dims[0]}")
    _, _, log_probs = _forward_pass(model, X)
    probs = np.exp(log_probs)
    return probs[0] if single else probs


def loss_and_gradient(model: MLPModel, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch and exact gradients.

    ``y`` holds integer class indices. Gradients are returned as parallel
    (weight, bias) lists matching the model layout.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("empty batch")
    n = len(X)
    zs, activations, log_probs = _forward_pass(model, X)
    loss = -float(log_probs[np.arange(n), y].mean())

    delta = np.exp(log_probs)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grad_w: list[np.ndarray] = [None] * 3  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * 3  # type: ignore[list-item]
    for l in (2, 1, 0):
        grad_w[l] = delta.T @ activations[l]
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l]) * (zs[l - 1] > 0.0)
    return loss, (grad_w, grad_b)


def train(ds: Dataset, config: TrainConfig) -> MLPModel:
    """Mini-batch gradient descent for ``config.epochs`` passes with seeded
    shuffling; expects a standardized dataset."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    model = init_model(config, n_inputs=ds.X.shape[1], rng=rng)
    X, y = ds.X, ds.coarse
    n = len(X)
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            batch = perm[start : start + config.batch_size]
            loss, (gw, gb) = loss_and_gradient(model, X[batch], y[batch])
            if not np.isfinite(loss):
                raise ValueError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"batch starting {start}; lower the learning rate"
                )
            for l in range(3):
                model.weights[l] -= config.learning_rate * gw[l]
                model.biases[l] -= config.learning_rate * gb[l]
            epoch_loss += loss
            n_batches += 1
        log.info("epoch %d: mean batch loss %.6f", epoch, epoch_loss / max(n_batches, 1))
    return model


def predict(model: MLPModel, x: np.ndarray) -> CoarseLabel:
    """Argmax class; exact ties resolve to the lowest class index."""
    probs = forward(model, x)
    return CoarseLabel(int(np.argmax(probs)))


def predict_batch(model: MLPModel, X: np.ndarray) -> np.ndarray:
    probs = forward(model, np.asarray(X, dtype=np.float64))
    return np.argmax(probs, axis=1)


@dataclass
class CrossValidation:
    fold_accuracies: list[float]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))


def cross_validate(ds: Dataset, k: int, config: TrainConfig, fold_seed: int | None = None) -> CrossValidation:
    """Train k models on stratified folds; overall accuracy per held-out fold."""
    from .dataset import stratified_kfold

    if fold_seed is None:
        fold_seed = config.seed
    accs = []
    for fold_no, (train_ds, val_ds) in enumerate(stratified_kfold(ds, k, fold_seed)):
        model = train(train_ds, config)
        preds = predict_batch(model, val_ds.X)
        acc = overall_accuracy(confusion(preds, val_ds.coarse))
        log.info("fold %d accuracy: %.3f", fold_no, acc)
        accs.append(acc)
    return CrossValidation(fold_accuracies=accs)


def save_mlp(path: str | Path, model: MLPModel) -> None:
    lines = [
        version_line("mlp"),
        f"stats_id={model.stats_fingerprint}",
        "dims=" + ",".join(str(d) for d in model.dims),
        "activations=" + ",".join(model.activations),
    ]
    for l in range(3):
        lines.append(f"W{l} " + fmt_floats(model.weights[l].ravel()))
        lines.append(f"b{l} " + fmt_floats(model.biases[l]))
    atomic_write(path, "\n".join(lines) + "\n")


def load_mlp(path: str | Path) -> MLPModel:
    with open(path) as fh:
        check_version(fh.readline(), "mlp")
        stats_id = fh.readline().strip().split("=", 1)[1]
        dims = [int(v) for v in fh.readline().strip().split("=", 1)[1].split(",")]
        activations = fh.readline().strip().split("=", 1)[1].split(",")
        weights, biases = [], []
        for l in range(3):
            _, w_text = fh.readline().split(" ", 1)
            weights.append(
                parse_floats(w_text, dims[l + 1] * dims[l]).reshape(dims[l + 1], dims[l])
            )
            _, b_text = fh.readline().split(" ", 1)
            biases.append(parse_floats(b_text, dims[l + 1]))
    model = MLPModel(
        dims=dims, weights=weights, biases=biases,
        activations=activations, stats_fingerprint=stats_id,
    )
    model.check_shapes()
    return model
