"""Shallow classifier with hand-written backpropagation.

Hidden layers use ReLU, the output is a 2-way softmax in the order
(hotspot, non_hotspot). Parameters are plain numpy arrays, so a model can
be copied, checkpointed and handed between threads freely.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import TrainConfig, logger
from .errors import ConfigError, DomainError, TrainingError
from .models import Label

HOTSPOT_CLASS = 0
CLASS_ORDER = (Label.HOTSPOT, Label.NON_HOTSPOT)


@dataclass
class MlpModel:
    layer_dims: List[int]
    weights: List[np.ndarray]  # layer l: (layer_dims[l], layer_dims[l + 1])
    biases: List[np.ndarray]
    step_counter: int = 0
    bias_steps: Optional[int] = None  # T of the label-bias schedule once resolved

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @classmethod
    def zeros(cls, layer_dims: Sequence[int]) -> "MlpModel":
        dims = list(layer_dims)
        return cls(
            layer_dims=dims,
            weights=[np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
            biases=[np.zeros(b) for b in dims[1:]],
        )

    def copy(self) -> "MlpModel":
        return MlpModel(
            layer_dims=list(self.layer_dims),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            step_counter=self.step_counter,
            bias_steps=self.bias_steps,
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.weights + self.biases)


def init_model(cfg: TrainConfig, input_dim: int) -> MlpModel:
    """Weights i.i.d. N(0, sigma) from a PRNG seeded by cfg.seed, biases zero."""
    if cfg.sigma <= 0:
        raise ConfigError(f"sigma must be > 0, got {cfg.sigma}", "learner", "init_model")
    if input_dim <= 0:
        raise ConfigError(f"input_dim must be positive, got {input_dim}", "learner", "init_model")
    dims = [input_dim, *cfg.hidden_dims, 2]
    rng = np.random.default_rng(cfg.seed)
    model = MlpModel.zeros(dims)
    model.weights = [rng.normal(0.0, cfg.sigma, size=(a, b)) for a, b in zip(dims[:-1], dims[1:])]
    logger.debug(f"Initialized MLP {dims} (sigma={cfg.sigma}, seed={cfg.seed})")
    return model


def _as_batch(m: MlpModel, x: np.ndarray, operation: str) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != m.input_dim:
        raise DomainError(
            f"input of shape {x.shape} does not match input_dim {m.input_dim}", "learner", operation)
    return X, single


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(m: MlpModel, X: np.ndarray) -> List[np.ndarray]:
    """Activations of every layer, input first and softmax output last."""
    acts = [X]
    h = X
    last = len(m.weights) - 1
    for i, (W, b) in enumerate(zip(m.weights, m.biases)):
        z = h @ W + b
        h = _softmax(z) if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def predict_proba(m: MlpModel, x: np.ndarray):
    """p(hotspot | x): a float for one input, an array for a batch."""
    X, single = _as_batch(m, x, "predict_proba")
    p = forward(m, X)[-1][:, HOTSPOT_CLASS]
    return float(p[0]) if single else p


def embed(m: MlpModel, x: np.ndarray) -> np.ndarray:
    """Last hidden layer activation, L2-normalized row by row (zero rows stay zero)."""
    X, single = _as_batch(m, x, "embed")
    h = forward(m, X)[-2]
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    out = np.divide(h, norms, out=np.zeros_like(h), where=norms > 0)
    return out[0] if single else out


def bias_epsilon(t: int, cfg: TrainConfig, total_steps: Optional[int] = None) -> float:
    """eps(t) = eps0 * max(0, 1 - t/T); no schedule length means no bias."""
    T = cfg.total_bias_steps if cfg.total_bias_steps is not None else total_steps
    if not T or T <= 0:
        return 0.0
    return cfg.eps0 * max(0.0, 1.0 - t / T)


def bias_target(label: Label, t: int, cfg: TrainConfig, total_steps: Optional[int] = None) -> np.ndarray:
    """Soft target (p_hotspot, p_non_hotspot) at training step t."""
    if t < 0:
        raise DomainError(f"training step must be >= 0, got {t}", "learner", "bias_target")
    if Label(label) is Label.HOTSPOT:
        return np.array([1.0, 0.0])
    eps = bias_epsilon(t, cfg, total_steps)
    return np.array([eps, 1.0 - eps])


def target_matrix(labels: Sequence[Label], t: int, cfg: TrainConfig, total_steps: Optional[int] = None) -> np.ndarray:
    if not len(labels):
        return np.zeros((0, 2))
    return np.stack([bias_target(l, t, cfg, total_steps) for l in labels])


def loss(m: MlpModel, X: np.ndarray, targets: np.ndarray) -> float:
    """Average cross-entropy between softmax outputs and soft targets."""
    X, _ = _as_batch(m, X, "loss")
    p = forward(m, X)[-1]
    return float(-np.sum(targets * np.log(np.clip(p, 1e-300, None))) / X.shape[0])


def gradients(m: MlpModel, X: np.ndarray, targets: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Analytic d(loss)/dW and d(loss)/db for every layer."""
    X, _ = _as_batch(m, X, "gradients")
    acts = forward(m, X)
    n = X.shape[0]
    delta = (acts[-1] - targets) / n
    dWs: List[np.ndarray] = [None] * len(m.weights)
    dbs: List[np.ndarray] = [None] * len(m.biases)
    for i in range(len(m.weights) - 1, -1, -1):
        dWs[i] = acts[i].T @ delta
        dbs[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ m.weights[i].T) * (acts[i] > 0)
    return dWs, dbs


def apply_gradient_step(m: MlpModel, X: np.ndarray, targets: np.ndarray, alpha: float) -> MlpModel:
    """One descent step w <- w - alpha * grad; raises TrainingError on non-finite gradients."""
    dWs, dbs = gradients(m, X, targets)
    if not all(np.all(np.isfinite(g)) for g in dWs + dbs):
        raise TrainingError(
            f"non-finite gradient at step {m.step_counter} (batch of {len(X)})", "learner", "train_step")
    for W, b, dW, db in zip(m.weights, m.biases, dWs, dbs):
        W -= alpha * dW
        b -= alpha * db
    return m


def train_step(m: MlpModel, X: np.ndarray, labels: Sequence[Label], cfg: TrainConfig) -> MlpModel:
    if len(labels) == 0:
        raise TrainingError("train_step needs a non-empty batch", "learner", "train_step")
    targets = target_matrix(labels, m.step_counter, cfg, m.bias_steps)
    apply_gradient_step(m, X, targets, cfg.alpha)
    if not m.is_finite():
        raise TrainingError(f"parameters diverged at step {m.step_counter}", "learner", "train_step")
    m.step_counter += 1
    return m


def steps_per_epoch(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


def train(
    m: MlpModel,
    X: np.ndarray,
    labels: Sequence[Label],
    epochs: int,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> MlpModel:
    """Shuffled mini-batch passes of train_step."""
    X = np.asarray(X, dtype=np.float64)
    labels = list(labels)
    n = len(labels)
    if n == 0 or epochs == 0:
        return m
    if m.bias_steps is None:
        # The first training phase fixes T for the rest of the model's life.
        m.bias_steps = cfg.total_bias_steps if cfg.total_bias_steps is not None else (
            epochs * steps_per_epoch(n, cfg.batch_size))
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            train_step(m, X[idx], [labels[i] for i in idx], cfg)
    logger.debug(f"Trained {epochs} epochs on {n} examples, step_counter={m.step_counter}")
    return m


def replay_sample(n_old: int, n_new: int, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Indices of old examples replayed next to a new batch: min(|L|, factor * |new|)."""
    size = min(n_old, cfg.replay_factor * n_new)
    if size <= 0:
        return np.zeros(0, dtype=np.intp)
    return np.sort(rng.choice(n_old, size=size, replace=False))


def incremental_update(
    m: MlpModel,
    new_X: np.ndarray,
    new_labels: Sequence[Label],
    old_X: np.ndarray,
    old_labels: Sequence[Label],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> MlpModel:
    """Fine-tune on the new batch plus a replay sample of earlier labels; never reinitializes."""
    if len(new_labels) == 0:
        return m
    old_labels = list(old_labels)
    idx = replay_sample(len(old_labels), len(new_labels), cfg, rng)
    new_X = np.asarray(new_X, dtype=np.float64)
    if len(idx):
        X = np.vstack([np.asarray(old_X, dtype=np.float64)[idx], new_X])
        labels = [old_labels[i] for i in idx] + list(new_labels)
    else:
        X, labels = new_X, list(new_labels)
    return train(m, X, labels, cfg.epochs_update, cfg, rng)
