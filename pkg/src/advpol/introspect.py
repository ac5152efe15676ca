"""White-box feature vectors read from a frozen target, and composition of
adversary observations from them."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .policy import CATEGORICAL, ForwardRecord, PolicyNet, PolicyOutput


class IntrospectionMode(str, Enum):
    BLACKBOX = "blackbox"
    ACTION_VALUE = "action_value"
    LATENT = "latent"
    FULL = "full"
    # action distribution and latents without the value; used by white-box RARL
    ACTION_LATENT = "action_latent"

    @classmethod
    def parse(cls, text: "str | IntrospectionMode") -> "IntrospectionMode":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            raise ValueError(f"unknown adversary mode {text!r}; choose from {[m.value for m in cls]}") from None

    @property
    def segments(self) -> tuple[str, ...]:
        return {
            IntrospectionMode.BLACKBOX: (),
            IntrospectionMode.ACTION_VALUE: ("value", "action"),
            IntrospectionMode.LATENT: ("latent",),
            IntrospectionMode.FULL: ("value", "action", "latent"),
            IntrospectionMode.ACTION_LATENT: ("action", "latent"),
        }[self]


ATTACK_MODES = (
    IntrospectionMode.BLACKBOX,
    IntrospectionMode.ACTION_VALUE,
    IntrospectionMode.LATENT,
    IntrospectionMode.FULL,
)


def segment_layout(mode: IntrospectionMode, n_action: int, hidden: int) -> tuple[tuple[str, int, int], ...]:
    """``(name, start, end)`` for each segment, in value, action, latent order."""
    sizes = {"value": 1, "action": n_action, "latent": hidden}
    layout, pos = [], 0
    for name in mode.segments:
        layout.append((name, pos, pos + sizes[name]))
        pos += sizes[name]
    return tuple(layout)


def m_dim(mode: IntrospectionMode, n_action: int, hidden: int) -> int:
    layout = segment_layout(mode, n_action, hidden)
    return layout[-1][2] if layout else 0


@dataclass(frozen=True)
class IntrospectionVector:
    mode: IntrospectionMode
    payload: np.ndarray
    layout: tuple[tuple[str, int, int], ...]

    def __len__(self) -> int:
        return len(self.payload)

    @property
    def boundaries(self) -> tuple[int, ...]:
        return tuple(end for _, _, end in self.layout)

    def segment(self, name: str) -> np.ndarray:
        for seg, start, end in self.layout:
            if seg == name:
                return self.payload[start:end]
        raise KeyError(name)


def _action_features(target: PolicyNet, out: PolicyOutput) -> np.ndarray:
    # categorical: the full probability vector; Gaussian: the mean
    return out.probs if target.kind == CATEGORICAL else out.head


def extract_m_batch(target: PolicyNet, out: PolicyOutput, mode: IntrospectionMode) -> np.ndarray:
    """Feature rows for a batch from an existing target forward pass."""
    mode = IntrospectionMode.parse(mode)
    n = out.value.shape[0]
    parts = []
    for name in mode.segments:
        if name == "value":
            parts.append(out.value[:, None])
        elif name == "action":
            parts.append(_action_features(target, out))
        else:
            parts.append(out.latents)
    if not parts:
        return np.zeros((n, 0))
    return np.concatenate(parts, axis=1)


def record_to_m(record: ForwardRecord, mode: IntrospectionMode) -> IntrospectionVector:
    mode = IntrospectionMode.parse(mode)
    dist = record.action_dist
    action = np.asarray(dist if not isinstance(dist, tuple) else dist[0], dtype=np.float64)
    pieces = {"value": np.array([record.value]), "action": action, "latent": np.asarray(record.latents)}
    layout = segment_layout(mode, len(action), len(record.latents))
    payload = np.concatenate([pieces[n] for n in mode.segments]) if mode.segments else np.zeros(0)
    return IntrospectionVector(mode, payload, layout)


def extract_m(
    target: PolicyNet,
    s_obs: np.ndarray,
    mode: IntrospectionMode,
    rng: np.random.Generator,
    expected_hidden: int | None = None,
) -> tuple[IntrospectionVector, ForwardRecord]:
    """Run the target once on its own observation; return the feature vector
    together with the forward record whose sampled action the target executes."""
    from .policy import policy_forward

    mode = IntrospectionMode.parse(mode)
    if expected_hidden is not None and "latent" in mode.segments and expected_hidden != target.hidden:
        raise ValueError(f"{mode.value} mode expects latent width {expected_hidden}, target has {target.hidden}")
    record = policy_forward(target, s_obs, rng)
    return record_to_m(record, mode), record


class RunningMoments:
    """Per-coordinate running mean/variance (parallel-merge form)."""

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim)
        self.var = np.zeros(dim)
        self.frozen = False

    def update(self, x: np.ndarray) -> None:
        if self.frozen:
            return
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim or len(x) == 0:
            if x.shape[1] != self.dim:
                raise ValueError(f"moment update width {x.shape[1]} != {self.dim}")
            return
        n_b = len(x)
        mean_b = x.mean(axis=0)
        var_b = x.var(axis=0)
        total = self.count + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n_b / total)
        self.var = (self.var * self.count + var_b * n_b + delta * delta * (self.count * n_b / total)) / total
        self.count = total

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)

    def state_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean.tolist(), "var": self.var.tolist()}

    @classmethod
    def from_state(cls, d: dict) -> "RunningMoments":
        rm = cls(len(d["mean"]))
        rm.count, rm.mean, rm.var = int(d["count"]), np.array(d["mean"]), np.array(d["var"])
        return rm


def normalize_m(m: np.ndarray, stats: RunningMoments, clip: float = 10.0) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if stats.count == 0:
        return m
    return np.clip((m - stats.mean) / np.maximum(stats.std, 1e-6), -clip, clip)


def compose_obs(
    base_obs: np.ndarray,
    m: "IntrospectionVector | np.ndarray",
    stats: RunningMoments | None = None,
    normalize: bool = True,
) -> np.ndarray:
    """``base_obs`` followed by the (optionally normalized) feature vector."""
    payload = m.payload if isinstance(m, IntrospectionVector) else np.asarray(m, dtype=np.float64)
    if payload.shape[-1] == 0:
        return base_obs
    if normalize and stats is not None:
        payload = normalize_m(payload, stats)
    return np.concatenate([np.asarray(base_obs, dtype=np.float64), payload], axis=-1)
