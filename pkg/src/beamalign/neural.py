"""A small hand-differentiated neural stack.

Covers exactly what the probing pipeline needs: rectifier MLPs with a
softmax head, the scaled cross-entropy loss, the power and log-standardize
layers between a probing codebook and an MLP, an Adam optimizer and a
central-difference gradient checker.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .codebook import pc_layer, pc_layer_grad
from .errors import DimensionError, DomainError, UsageError
from .numerics import RngStream

LOG_PROB_FLOOR = 1e-12
POWER_EPS = 1e-30
_LN10 = math.log(10.0)


# ---------------------------------------------------------------------------
# MLP


@dataclass
class MlpCache:
    inputs: list       # input to each affine layer
    pre: list          # pre-activations of hidden layers
    probs: np.ndarray


@dataclass
class Mlp:
    """Affine/ReLU stack with a softmax output.

    Weights are stored as ``(fan_in, fan_out)`` so a batch ``x`` of shape
    ``(B, fan_in)`` maps through ``x @ W + b``.
    """

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionError(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise DimensionError(f"layer {i} input does not match previous output")

    @classmethod
    def init(cls, sizes, rng: RngStream) -> "Mlp":
        """He-normal weights, zero biases."""
        if len(sizes) < 2 or min(sizes) < 1:
            raise DimensionError(f"invalid layer sizes {sizes}")
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def sizes(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def params(self, prefix: str) -> dict:
        """Parameter arrays keyed by name; the arrays are the live storage."""
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.W{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out

    def logits(self, x: np.ndarray) -> tuple:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.weights[0].shape[0]:
            raise DimensionError(f"input width {x.shape[-1]} != {self.weights[0].shape[0]}")
        inputs, pre = [], []
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            s = a @ w + b
            if i < last:
                pre.append(s)
                a = np.maximum(s, 0.0)
            else:
                a = s
        return a, inputs, pre

    def forward(self, x: np.ndarray):
        """Return ``(probabilities, cache)`` for one input vector or a batch."""
        logits, inputs, pre = self.logits(x)
        probs = softmax(logits)
        return probs, MlpCache(inputs, pre, probs)

    def backward(self, cache: Optional[MlpCache], dlogits: np.ndarray, prefix: str = "mlp"):
        """Back-propagate a logit gradient; returns ``(grads, d_input)``."""
        if cache is None:
            raise UsageError("backward called without a forward cache")
        grads = {}
        delta = np.asarray(dlogits, dtype=float)
        batched = delta.ndim == 2
        for i in range(len(self.weights) - 1, -1, -1):
            a = cache.inputs[i]
            if batched:
                grads[f"{prefix}.W{i}"] = a.T @ delta
                grads[f"{prefix}.b{i}"] = delta.sum(axis=0)
            else:
                grads[f"{prefix}.W{i}"] = np.outer(a, delta)
                grads[f"{prefix}.b{i}"] = delta.copy()
            delta = delta @ self.weights[i].T
            if i > 0:
                delta = delta * (cache.pre[i - 1] > 0)
        return grads, delta


def mlp_forward(m: Mlp, x):
    return m.forward(x)


def softmax(logits: np.ndarray) -> np.ndarray:
    s = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    s = logits - logits.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# loss


def cross_entropy(p, onehot, scale: Optional[float] = None) -> float:
    """``-scale * sum_k onehot_k log p_k`` with the log floored at 1e-12.

    ``scale`` defaults to ``1 / len(p)``.
    """
    p = np.asarray(p, dtype=float)
    onehot = np.asarray(onehot, dtype=float)
    if p.shape != onehot.shape:
        raise DimensionError(f"probabilities {p.shape} vs labels {onehot.shape}")
    if scale is None:
        scale = 1.0 / p.shape[-1]
    logp = np.log(np.maximum(p, LOG_PROB_FLOOR))
    return float(-scale * np.sum(onehot * logp))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray,
                          reduction: str = "mean"):
    """Batched loss from logits and integer labels; returns ``(loss, dlogits)``.

    Per-sample loss is ``-(1/C) log p_label`` (C = number of classes),
    consistent with :func:`cross_entropy`. Samples whose log-probability is
    below the floor contribute a constant loss and no gradient.
    """
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    logp = log_softmax(logits)
    picked = logp[np.arange(n), labels]
    floor = math.log(LOG_PROB_FLOOR)
    active = picked > floor
    per_sample = -np.maximum(picked, floor) / c
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits *= (active / c)[:, None]
    if reduction == "mean":
        return float(per_sample.mean()), dlogits / n
    if reduction == "sum":
        return float(per_sample.sum()), dlogits
    raise DomainError(f"unknown reduction {reduction!r}")


# ---------------------------------------------------------------------------
# measurement -> MLP input


@dataclass
class TransformStats:
    """Per-coordinate mean/std of ``log10(z + eps)`` on the training set."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, z: np.ndarray) -> "TransformStats":
        t = np.log10(np.asarray(z, dtype=float) + POWER_EPS)
        std = t.std(axis=0)
        return cls(mean=t.mean(axis=0), std=np.where(std > 0, std, 1.0))

    @classmethod
    def concat(cls, *parts: "TransformStats") -> "TransformStats":
        return cls(np.concatenate([p.mean for p in parts]),
                   np.concatenate([p.std for p in parts]))


def input_transform(z, stats: TransformStats) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise DomainError("powers must be non-negative")
    return (np.log10(z + POWER_EPS) - stats.mean) / stats.std


def input_transform_grad(z: np.ndarray, stats: TransformStats, dt: np.ndarray) -> np.ndarray:
    return dt / (stats.std * (z + POWER_EPS) * _LN10)


# ---------------------------------------------------------------------------
# probing block: phases -> noisy powers


@dataclass
class ProbeCache:
    theta: np.ndarray
    channels: np.ndarray
    sqrt_rho: float
    re: np.ndarray
    im: np.ndarray
    z: np.ndarray


def probe_forward(theta: np.ndarray, channels: np.ndarray, sqrt_rho: float,
                  noise: Optional[np.ndarray] = None):
    """Noisy received powers for a batch of channels; returns ``(z, cache)``."""
    re, im = pc_layer(theta, channels, sqrt_rho)
    if noise is not None:
        re = re + noise.real
        im = im + noise.imag
    z = re * re + im * im
    return z, ProbeCache(theta, channels, sqrt_rho, re, im, z)


def probe_backward(cache: Optional[ProbeCache], dz: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the phase matrix given ``dL/dz``."""
    if cache is None:
        raise UsageError("backward called without a forward cache")
    return pc_layer_grad(cache.theta, cache.channels, cache.sqrt_rho,
                         2.0 * cache.re * dz, 2.0 * cache.im * dz)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)


def optimizer_step(params: dict, grads: dict, state: OptimizerState) -> None:
    """Adam update with bias correction, applied in place to ``params``.

    Parameters without an entry in ``grads`` are left untouched and their
    moments are not advanced; bias correction uses each parameter's own
    update count.
    """
    for k, g in grads.items():
        if k not in params:
            raise DimensionError(f"gradient for unknown parameter {k!r}")
        if g.shape != params[k].shape:
            raise DimensionError(f"{k}: gradient {g.shape} vs parameter {params[k].shape}")
    state.step_count += 1
    for k, g in grads.items():
        if k not in state.first:
            state.first[k] = np.zeros_like(params[k])
            state.second[k] = np.zeros_like(params[k])
            state.steps[k] = 0
        state.steps[k] += 1
        bc1 = 1.0 - state.beta1 ** state.steps[k]
        bc2 = 1.0 - state.beta2 ** state.steps[k]
        m, v = state.first[k], state.second[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[k] -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# verification


def finite_difference_check(loss_fn: Callable[[dict], tuple], params: dict,
                            step: float = 1e-6, n_coords: int = 200,
                            rng: Optional[RngStream] = None,
                            abs_floor: Optional[float] = None) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` must return ``(loss, grads)``. Coordinates are
    perturbed in place and restored. At least ``n_coords`` coordinates are
    checked (all of them when there are fewer). The relative error of a
    coordinate is ``|a - n| / max(|a|, |n|, abs_floor)``. ``abs_floor``
    defaults to ``1e-4 * |loss|``: central differences carry round-off of
    order ``eps * |loss| / step``, which would otherwise swamp coordinates
    whose true gradient is near zero.
    """
    if step <= 0:
        raise DomainError("finite-difference step must be positive")
    loss0, grads = loss_fn(params)
    if abs_floor is None:
        abs_floor = max(1e-4 * abs(loss0), 1e-300)
    coords = [(k, i) for k in sorted(params) for i in range(params[k].size)]
    if rng is not None and len(coords) > n_coords:
        pick = rng.generator.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[j] for j in sorted(pick)]
    worst = 0.0
    for k, i in coords:
        flat = params[k].reshape(-1)
        orig = flat[i]
        flat[i] = orig + step
        lp, _ = loss_fn(params)
        flat[i] = orig - step
        lm, _ = loss_fn(params)
        flat[i] = orig
        numeric = (lp - lm) / (2 * step)
        analytic = float(grads[k].reshape(-1)[i]) if k in grads else 0.0
        denom = max(abs(analytic), abs(numeric), abs_floor)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
