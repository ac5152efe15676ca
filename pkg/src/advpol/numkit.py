"""Small dense numerical core: affine/tanh MLPs with hand-written reverse mode,
softmax and Gaussian distribution math, and a pure Adam step.

Everything is float64.  Batched inputs put the batch on the leading axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
HALF_LOG_2PI_E = 0.5 * math.log(2.0 * math.pi * math.e)

ACTIVATIONS = ("tanh", "linear")


def affine_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``W x + b`` for a vector ``x`` or ``x W^T + b`` for a row batch."""
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError(f"weight matrix must be 2-D, got shape {W.shape}")
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"input width {x.shape[-1]} does not match W.cols={W.shape[1]}")
    if b.shape != (W.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match W.rows={W.shape[0]}")
    if x.ndim == 1:
        return W @ x + b
    return x @ W.T + b


@dataclass
class MlpParams:
    """Weights are stored (out, in) so that a layer computes ``W x + b``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self) -> None:
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have equal length")
        for i, (W, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {act!r}")
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: bad shapes W={W.shape} b={b.shape}")
            if i > 0 and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i}: input width {W.shape[1]} does not chain with "
                    f"previous output {self.weights[i - 1].shape[0]}"
                )

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [W.shape[0] for W in self.weights]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        if len(arrays) != 2 * len(self.weights):
            raise ValueError("parameter count changed")
        return MlpParams(list(arrays[0::2]), list(arrays[1::2]), list(self.activations))

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


def orthogonal(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    activations: Sequence[str] | None = None,
    gain: float = math.sqrt(2.0),
) -> MlpParams:
    n = len(sizes) - 1
    if activations is None:
        activations = ["tanh"] * n
    weights = [orthogonal((sizes[i + 1], sizes[i]), gain, rng) for i in range(n)]
    biases = [np.zeros(sizes[i + 1]) for i in range(n)]
    return MlpParams(weights, biases, list(activations))


@dataclass
class MlpCache:
    inputs: list[np.ndarray]   # input to each layer
    outputs: list[np.ndarray]  # post-activation output of each layer


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    h = np.asarray(x, dtype=np.float64)
    if h.shape[-1] != params.in_dim:
        raise ValueError(f"input width {h.shape[-1]} != MLP input width {params.in_dim}")
    inputs, outputs = [], []
    for i, (W, b, act) in enumerate(zip(params.weights, params.biases, params.activations)):
        inputs.append(h)
        z = h @ W.T + b
        h = np.tanh(z) if act == "tanh" else z
        if not np.all(np.isfinite(h)):
            raise FloatingPointError(f"non-finite activation in MLP layer {i}")
        outputs.append(h)
    return h, MlpCache(inputs, outputs)


def mlp_backward(
    params: MlpParams, cache: MlpCache, upstream: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Backpropagate ``upstream`` (d/d output).  Returns (grads in ``arrays()``
    order, gradient with respect to the input)."""
    g = np.asarray(upstream, dtype=np.float64)
    n = len(params.weights)
    grads: list[np.ndarray] = [None] * (2 * n)  # type: ignore[list-item]
    for i in reversed(range(n)):
        if params.activations[i] == "tanh":
            g = g * (1.0 - cache.outputs[i] ** 2)
        h_in = cache.inputs[i]
        if g.ndim == 1:
            grads[2 * i] = np.outer(g, h_in)
            grads[2 * i + 1] = g.copy()
        else:
            grads[2 * i] = g.T @ h_in
            grads[2 * i + 1] = g.sum(axis=0)
        g = g @ params.weights[i]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in MLP layer {i}")
    return grads, g


def mlp_forward_backward(
    params: MlpParams, x: np.ndarray, upstream_grad: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
    """Forward pass plus exact gradients of ``<upstream_grad, output>``."""
    out, cache = mlp_forward(params, x)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.shape != out.shape:
        raise ValueError(f"upstream shape {upstream_grad.shape} != output shape {out.shape}")
    grads, input_grad = mlp_backward(params, cache, upstream_grad)
    return out, grads, input_grad


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def categorical_entropy(probs: np.ndarray, logp: np.ndarray | None = None) -> np.ndarray:
    if logp is None:
        logp = np.log(np.clip(probs, 1e-300, None))
    return -(probs * logp).sum(axis=-1)


def gaussian_logprob_entropy(
    mean: np.ndarray, log_std: np.ndarray, action: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal Gaussian log-density of ``action`` and analytic entropy.

    Sums over the last axis; leading axes broadcast.
    """
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if mean.shape[-1] != action.shape[-1] or log_std.shape[-1] != mean.shape[-1]:
        raise ValueError("mean, log_std and action must share the last dimension")
    z = (action - mean) * np.exp(-log_std)
    logp = (-0.5 * z * z - log_std - HALF_LOG_2PI).sum(axis=-1)
    entropy = np.broadcast_to(log_std + HALF_LOG_2PI_E, np.broadcast(mean, log_std).shape).sum(axis=-1)
    return logp, entropy


@dataclass(frozen=True)
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: tuple[np.ndarray, ...] = field(default=())
    v: tuple[np.ndarray, ...] = field(default=())

    @classmethod
    def fresh(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        zeros = tuple(np.zeros_like(p) for p in params)
        return cls(m=zeros, v=tuple(np.zeros_like(p) for p in params), **hyper)


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update.  Pure: inputs are never modified."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params, grads and Adam accumulators differ in length")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for i, (p, g, m, v) in enumerate(zip(params, grads, state.m, state.v)):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch at parameter {i}: {p.shape} vs grad {g.shape}")
        m2 = b1 * m + (1.0 - b1) * g
        v2 = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - state.lr * (m2 / c1) / (np.sqrt(v2 / c2) + state.eps))
        new_m.append(m2)
        new_v.append(v2)
    return new_p, replace(state, step=t, m=tuple(new_m), v=tuple(new_v))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float | None) -> tuple[list[np.ndarray], float]:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return list(grads), norm
    scale = max_norm / norm
    return [g * scale for g in grads], norm
