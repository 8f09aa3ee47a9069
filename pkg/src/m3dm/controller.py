"""Conditional attribute controller: a small residual MLP over (p, s).

The network maps the concatenation [p; s_trg] through two ReLU hidden layers
to a parameter-space edit.  In residual mode the edit is added to the input
(p_tilde = p + f(p, s)); the ablation emits f(p, s) directly.  The output
layer is zero-initialized so a fresh residual controller is exactly the
identity map.  Training pairs a source parameter with a target parameter of
the same identity and minimizes the Euclidean norm of the prediction error.

Everything is plain numpy with manual backpropagation; training is bit-
deterministic given the seed, and the per-epoch source/target coins attach
to sample identities rather than array positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core_model import FloatArray
from .latent_world import PairedDataset


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-6
    seed: int = 0
    hidden: int = 64
    swap_probability: float = 0.5
    squared_loss: bool = False  # default is the plain Euclidean norm
    cosine_lr: bool = False  # anneal the step size to zero over the epochs

    def __post_init__(self) -> None:
        positives = {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "weight_decay": self.weight_decay,
            "hidden": self.hidden,
        }
        for name, value in positives.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not 0.0 <= self.swap_probability <= 1.0:
            raise ValueError("swap_probability must be in [0, 1]")


@dataclass
class Controller:
    """MLP weights plus the residual flag; input is [p; s], output length k."""

    attribute: str
    residual: bool
    weights: list[FloatArray]  # (out, in) matrices
    biases: list[FloatArray]

    def __post_init__(self) -> None:
        dims = self.layer_dims
        if dims[0] != dims[-1] + 1:
            raise ValueError(
                f"input dim must be output dim + 1 (parameter plus score), got {dims}"
            )
        for w, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("controller weights must be finite")

    @property
    def k(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]


def init_controller(k: int, hidden: int, seed: int, residual: bool = True, attribute: str = "") -> Controller:
    """He-initialized hidden layers, zero output layer (identity map at init)."""
    rng = np.random.default_rng(seed)
    dims = [k + 1, hidden, hidden, k]
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    weights[-1][:] = 0.0
    return Controller(attribute=attribute, residual=residual, weights=weights, biases=biases)


def _mlp_forward(ctrl: Controller, X: FloatArray) -> tuple[FloatArray, list[FloatArray]]:
    """Batch forward through the raw MLP; returns output and hidden activations."""
    h = X
    hiddens = [X]
    for w, b in zip(ctrl.weights[:-1], ctrl.biases[:-1]):
        h = np.maximum(h @ w.T + b, 0.0)
        hiddens.append(h)
    out = h @ ctrl.weights[-1].T + ctrl.biases[-1]
    return out, hiddens


def forward(ctrl: Controller, p: np.ndarray, s_trg: float | np.ndarray) -> FloatArray:
    """p_tilde for one parameter (k,) or a batch (m, k) with per-row scores."""
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    P = p[None, :] if single else p
    if P.shape[1] != ctrl.k:
        raise ValueError(f"parameter dimension {P.shape[1]} does not match controller {ctrl.k}")
    s = np.full(len(P), s_trg, dtype=np.float64) if np.ndim(s_trg) == 0 else np.asarray(s_trg, dtype=np.float64)
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(s))):
        raise ValueError("non-finite controller input")
    X = np.concatenate([P, s[:, None]], axis=1)
    out, _ = _mlp_forward(ctrl, X)
    result = P + out if ctrl.residual else out
    return result[0] if single else result


def loss(
    ctrl: Controller,
    p_src: np.ndarray,
    s_trg: np.ndarray,
    p_trg: np.ndarray,
) -> float:
    """Mean Euclidean-norm error of the batch (squared norm behind the config flag
    is applied at train time; this reports the plain norm)."""
    p_src = np.atleast_2d(np.asarray(p_src, dtype=np.float64))
    p_trg = np.atleast_2d(np.asarray(p_trg, dtype=np.float64))
    if len(p_src) == 0:
        raise ValueError("empty batch")
    pred = forward(ctrl, p_src, s_trg)
    return float(np.mean(np.linalg.norm(pred - p_trg, axis=1)))


def _loss_and_grads(
    ctrl: Controller,
    X: FloatArray,
    p_trg: FloatArray,
    squared: bool,
) -> tuple[float, list[FloatArray], list[FloatArray]]:
    """Training loss plus gradients for every weight matrix and bias."""
    out, hiddens = _mlp_forward(ctrl, X)
    pred = X[:, :-1] + out if ctrl.residual else out
    err = pred - p_trg
    m = len(X)
    norms = np.linalg.norm(err, axis=1)
    if squared:
        value = float(np.mean(norms**2))
        d_out = 2.0 * err / m
    else:
        value = float(np.mean(norms))
        safe = np.maximum(norms, 1e-300)
        d_out = err / (m * safe[:, None])
        d_out[norms == 0.0] = 0.0

    grads_w: list[FloatArray] = [np.empty(0)] * len(ctrl.weights)
    grads_b: list[FloatArray] = [np.empty(0)] * len(ctrl.biases)
    delta = d_out
    for layer in range(len(ctrl.weights) - 1, -1, -1):
        grads_w[layer] = delta.T @ hiddens[layer]
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ ctrl.weights[layer]) * (hiddens[layer] > 0.0)
    return value, grads_w, grads_b


def train(
    ctrl: Controller,
    dataset: PairedDataset,
    cfg: TrainConfig,
) -> tuple[Controller, list[float]]:
    """Adam training over seeded epochs; returns the controller and loss history.

    Per epoch, a per-identity coin (probability ``swap_probability``) decides
    which pair member is the source; the batch order is a seeded permutation
    of the id-sorted rows.  Both depend only on sample ids, so permuting the
    dataset rows leaves the final weights unchanged.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    order = np.argsort(dataset.ids, kind="stable")
    ids = dataset.ids[order]
    if len(np.unique(ids)) != len(ids):
        raise ValueError("duplicate sample ids in training data")
    p_pos, p_neg = dataset.p_pos[order], dataset.p_neg[order]
    s_pos, s_neg = dataset.s_pos[order], dataset.s_neg[order]
    n = len(ids)
    max_id = int(ids.max())

    ctrl = Controller(
        attribute=ctrl.attribute,
        residual=ctrl.residual,
        weights=[w.copy() for w in ctrl.weights],
        biases=[b.copy() for b in ctrl.biases],
    )
    m_w = [np.zeros_like(w) for w in ctrl.weights]
    v_w = [np.zeros_like(w) for w in ctrl.weights]
    m_b = [np.zeros_like(b) for b in ctrl.biases]
    v_b = [np.zeros_like(b) for b in ctrl.biases]
    step = 0
    history: list[float] = []

    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(epoch,)))
        coins_by_id = rng.random(max_id + 1) < cfg.swap_probability
        perm = rng.permutation(n)
        if cfg.cosine_lr and cfg.epochs > 1:
            lr = cfg.learning_rate * 0.5 * (1.0 + np.cos(np.pi * (epoch - 1) / (cfg.epochs - 1)))
        else:
            lr = cfg.learning_rate
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            rows = perm[start : start + cfg.batch_size]
            swapped = coins_by_id[ids[rows]]
            p_src = np.where(swapped[:, None], p_neg[rows], p_pos[rows])
            p_trg = np.where(swapped[:, None], p_pos[rows], p_neg[rows])
            s_trg = np.where(swapped, s_pos[rows], s_neg[rows])
            X = np.concatenate([p_src, s_trg[:, None]], axis=1)
            value, grads_w, grads_b = _loss_and_grads(ctrl, X, p_trg, cfg.squared_loss)
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            epoch_loss += value * len(rows)
            step += 1
            bc1 = 1.0 - cfg.beta1**step
            bc2 = 1.0 - cfg.beta2**step
            for i in range(len(ctrl.weights)):
                m_w[i] = cfg.beta1 * m_w[i] + (1 - cfg.beta1) * grads_w[i]
                v_w[i] = cfg.beta2 * v_w[i] + (1 - cfg.beta2) * grads_w[i] ** 2
                ctrl.weights[i] -= lr * (
                    (m_w[i] / bc1) / (np.sqrt(v_w[i] / bc2) + cfg.epsilon)
                    + cfg.weight_decay * ctrl.weights[i]
                )
                m_b[i] = cfg.beta1 * m_b[i] + (1 - cfg.beta1) * grads_b[i]
                v_b[i] = cfg.beta2 * v_b[i] + (1 - cfg.beta2) * grads_b[i] ** 2
                ctrl.biases[i] -= lr * (m_b[i] / bc1) / (
                    np.sqrt(v_b[i] / bc2) + cfg.epsilon
                )
        history.append(epoch_loss / n)
    return ctrl, history
