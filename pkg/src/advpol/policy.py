"""Policy/value networks whose every forward pass exposes the action
distribution, the value estimate and the last hidden layer's activations."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .numkit import (
    MlpCache,
    MlpParams,
    categorical_entropy,
    gaussian_logprob_entropy,
    init_mlp,
    log_softmax,
    mlp_backward,
    mlp_forward,
    orthogonal,
)

CATEGORICAL = "categorical"
GAUSSIAN = "gaussian"

CHECKPOINT_MAGIC = b"ADVPOLNET"
CHECKPOINT_VERSION = 1


@dataclass
class PolicyNet:
    """Tanh MLP trunk with an action head and a value head.

    Both heads read the trunk's last hidden layer, which is also the exported
    latent vector.  ``head_w`` is (n_out, H); for a Gaussian policy ``log_std``
    holds one free parameter per action dimension.
    """

    trunk: MlpParams
    head_w: np.ndarray
    head_b: np.ndarray
    value_w: np.ndarray
    value_b: np.ndarray
    kind: str = CATEGORICAL
    log_std: np.ndarray | None = None
    latent_layer_index: int = -1

    def __post_init__(self) -> None:
        if self.kind not in (CATEGORICAL, GAUSSIAN):
            raise ValueError(f"unknown action head kind {self.kind!r}")
        n_hidden = len(self.trunk.weights)
        if self.latent_layer_index < 0:
            self.latent_layer_index += n_hidden
        if self.latent_layer_index != n_hidden - 1:
            # heads must read the exported layer, so only the last hidden layer qualifies
            raise ValueError("latent layer must be the last hidden layer of the trunk")
        H = self.trunk.out_dim
        if self.head_w.shape[1] != H or self.value_w.shape != (1, H):
            raise ValueError("heads must read the latent layer of width H")
        if self.kind == GAUSSIAN:
            if self.log_std is None or self.log_std.shape != (self.head_w.shape[0],):
                raise ValueError("Gaussian head needs a log_std per action dimension")
        elif self.log_std is not None:
            raise ValueError("categorical head has no log_std")

    @property
    def obs_dim(self) -> int:
        return self.trunk.in_dim

    @property
    def hidden(self) -> int:
        return self.trunk.out_dim

    @property
    def n_out(self) -> int:
        """Number of logits (categorical) or action dimensions (Gaussian)."""
        return self.head_w.shape[0]

    def parameters(self) -> list[np.ndarray]:
        ps = self.trunk.arrays() + [self.head_w, self.head_b, self.value_w, self.value_b]
        if self.log_std is not None:
            ps.append(self.log_std)
        return ps

    def with_parameters(self, params: Sequence[np.ndarray]) -> "PolicyNet":
        n_trunk = 2 * len(self.trunk.weights)
        expected = n_trunk + 4 + (self.log_std is not None)
        if len(params) != expected:
            raise ValueError(f"expected {expected} parameter arrays, got {len(params)}")
        return PolicyNet(
            trunk=self.trunk.with_arrays(params[:n_trunk]),
            head_w=params[n_trunk],
            head_b=params[n_trunk + 1],
            value_w=params[n_trunk + 2],
            value_b=params[n_trunk + 3],
            kind=self.kind,
            log_std=params[n_trunk + 4] if self.log_std is not None else None,
            latent_layer_index=self.latent_layer_index,
        )

    def copy(self) -> "PolicyNet":
        return self.with_parameters([p.copy() for p in self.parameters()])

    def forward(self, obs: np.ndarray) -> "PolicyOutput":
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"observation width {obs.shape[-1]} != network input width {self.obs_dim}")
        latents, cache = mlp_forward(self.trunk, obs)
        head = latents @ self.head_w.T + self.head_b
        value = (latents @ self.value_w.T)[..., 0] + self.value_b[0]
        logp_all = log_softmax(head) if self.kind == CATEGORICAL else None
        return PolicyOutput(head=head, value=value, latents=latents, cache=cache, logp_all=logp_all)

    def dist_logp_entropy(self, out: "PolicyOutput", actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == CATEGORICAL:
            a = np.asarray(actions, dtype=np.int64)
            logp = np.take_along_axis(out.logp_all, a[..., None], axis=-1)[..., 0]
            return logp, categorical_entropy(out.probs, out.logp_all)
        return gaussian_logprob_entropy(out.head, self.log_std, actions)

    def sample(self, out: "PolicyOutput", rng: np.random.Generator) -> np.ndarray:
        if self.kind == CATEGORICAL:
            probs = out.probs
            u = rng.random(probs.shape[:-1])
            cdf = np.cumsum(probs, axis=-1)
            a = (cdf < u[..., None]).sum(axis=-1)
            return np.minimum(a, probs.shape[-1] - 1)
        noise = rng.standard_normal(out.head.shape)
        return out.head + np.exp(self.log_std) * noise

    def mode(self, out: "PolicyOutput") -> np.ndarray:
        if self.kind == CATEGORICAL:
            return np.argmax(out.head, axis=-1)  # first maximum wins ties
        return out.head.copy()

    def backward(
        self,
        out: "PolicyOutput",
        d_head: np.ndarray,
        d_value: np.ndarray,
        d_log_std: np.ndarray | None = None,
    ) -> list[np.ndarray]:
        """Gradients of a scalar loss given its partials with respect to the
        head outputs, value outputs and (Gaussian) log_std.  Batched only."""
        lat = out.latents
        d_value = np.asarray(d_value, dtype=np.float64)[:, None]
        g_head_w = d_head.T @ lat
        g_head_b = d_head.sum(axis=0)
        g_value_w = d_value.T @ lat
        g_value_b = d_value.sum(axis=0)
        d_lat = d_head @ self.head_w + d_value @ self.value_w
        trunk_grads, _ = mlp_backward(self.trunk, out.cache, d_lat)
        grads = trunk_grads + [g_head_w, g_head_b, g_value_w, g_value_b]
        if self.log_std is not None:
            grads.append(np.zeros_like(self.log_std) if d_log_std is None else np.asarray(d_log_std, dtype=np.float64))
        return grads


@dataclass
class PolicyOutput:
    head: np.ndarray
    value: np.ndarray
    latents: np.ndarray
    cache: MlpCache
    logp_all: np.ndarray | None = None

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logp_all)


@dataclass
class ForwardRecord:
    action_dist: np.ndarray | tuple[np.ndarray, np.ndarray]
    value: float
    latents: np.ndarray
    sampled_action: int | np.ndarray
    logp: float
    entropy: float


def make_policy(
    obs_dim: int,
    n_out: int,
    rng: np.random.Generator,
    hidden: int = 64,
    n_hidden_layers: int = 2,
    kind: str = CATEGORICAL,
    head_gain: float = 0.01,
    value_gain: float = 1.0,
    init_log_std: float = 0.0,
) -> PolicyNet:
    trunk = init_mlp([obs_dim] + [hidden] * n_hidden_layers, rng)
    return PolicyNet(
        trunk=trunk,
        head_w=orthogonal((n_out, hidden), head_gain, rng),
        head_b=np.zeros(n_out),
        value_w=orthogonal((1, hidden), value_gain, rng),
        value_b=np.zeros(1),
        kind=kind,
        log_std=np.full(n_out, float(init_log_std)) if kind == GAUSSIAN else None,
    )


def policy_forward(net: PolicyNet, obs: np.ndarray, rng: np.random.Generator) -> ForwardRecord:
    """Single-observation forward pass with one sampled action."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1:
        raise ValueError("policy_forward takes a single observation vector")
    out = net.forward(obs[None, :])
    action = net.sample(out, rng)
    logp, ent = net.dist_logp_entropy(out, action)
    if net.kind == CATEGORICAL:
        dist: np.ndarray | tuple = out.probs[0]
        sampled: int | np.ndarray = int(action[0])
    else:
        dist = (out.head[0].copy(), net.log_std.copy())
        sampled = action[0]
    return ForwardRecord(
        action_dist=dist,
        value=float(out.value[0]),
        latents=out.latents[0],
        sampled_action=sampled,
        logp=float(logp[0]),
        entropy=float(ent[0]),
    )


def deterministic_action(net: PolicyNet, obs: np.ndarray) -> int | np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    a = net.mode(net.forward(obs[None, :]))[0]
    return int(a) if net.kind == CATEGORICAL else a


# -- checkpoints ------------------------------------------------------------

def _named_arrays(net: PolicyNet) -> list[tuple[str, np.ndarray]]:
    named = []
    for i, (W, b) in enumerate(zip(net.trunk.weights, net.trunk.biases)):
        named += [(f"trunk.{i}.W", W), (f"trunk.{i}.b", b)]
    named += [("head.W", net.head_w), ("head.b", net.head_b), ("value.W", net.value_w), ("value.b", net.value_b)]
    if net.log_std is not None:
        named.append(("log_std", net.log_std))
    return named


def checkpoint_bytes(net: PolicyNet) -> bytes:
    named = _named_arrays(net)
    header = {
        "kind": net.kind,
        "activations": net.trunk.activations,
        "latent_layer_index": net.latent_layer_index,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in named],
        "dtype": "<f8",
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in named)
    return CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)) + hbytes + payload


def net_from_bytes(blob: bytes) -> PolicyNet:
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not a policy checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", blob, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off += 8
    header = json.loads(blob[off:off + hlen])
    off += hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arrays[entry["name"]] = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    if off != len(blob):
        raise ValueError("checkpoint payload length mismatch")
    n_layers = len(header["activations"])
    trunk = MlpParams(
        [arrays[f"trunk.{i}.W"] for i in range(n_layers)],
        [arrays[f"trunk.{i}.b"] for i in range(n_layers)],
        list(header["activations"]),
    )
    return PolicyNet(
        trunk=trunk,
        head_w=arrays["head.W"],
        head_b=arrays["head.b"],
        value_w=arrays["value.W"],
        value_b=arrays["value.b"],
        kind=header["kind"],
        log_std=arrays.get("log_std"),
        latent_layer_index=header["latent_layer_index"],
    )


def save_checkpoint(net: PolicyNet, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(net))


def load_checkpoint(path: str | Path) -> PolicyNet:
    return net_from_bytes(Path(path).read_bytes())


def param_hash(net: PolicyNet) -> str:
    return hashlib.sha256(checkpoint_bytes(net)).hexdigest()
