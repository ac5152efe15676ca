"""Latent-space attacks on a frozen tiny decoder-only transformer.

An adversary observes an encoding of a short generated prompt (and, in
white-box mode, the prompt's last-token activation at layer ``layer``) and
emits one additive perturbation that is written into that layer's output at
the prompt positions while the model samples a completion.  Reward is the
fraction of completion tokens in a forbidden set.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .introspect import RunningMoments, normalize_m
from .policy import GAUSSIAN, PolicyNet, make_policy, save_checkpoint
from .ppo import PpoConfig, PpoTrainer, Rollout, fmt
from .seeding import derive_rng, derive_seed

log = logging.getLogger(__name__)


@dataclass
class TinyLMConfig:
    vocab: int = 64
    d_model: int = 32
    n_layers: int = 4
    n_heads: int = 2
    mlp_ratio: int = 4
    context: int = 32
    layer: int = 2  # perturbation/readout after this many blocks
    init_seed: int = 1234
    init_scale: float = 1.0
    forbidden: str = "60,61,62,63"

    def forbidden_ids(self) -> tuple[int, ...]:
        ids = tuple(int(t) for t in str(self.forbidden).split(",") if str(t).strip())
        if not ids or any(not 0 <= i < self.vocab for i in ids):
            raise ValueError(f"forbidden token ids {ids} outside vocabulary of {self.vocab}")
        return ids


def _layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)))


class TinyLM:
    """Pre-norm decoder-only transformer with seeded random, frozen weights."""

    def __init__(self, cfg: TinyLMConfig = TinyLMConfig()):
        if cfg.d_model % cfg.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not 1 <= cfg.layer <= cfg.n_layers:
            raise ValueError("perturbation layer must be between 1 and n_layers")
        self.cfg = cfg
        self.forbidden = cfg.forbidden_ids()
        rng = np.random.default_rng(cfg.init_seed)
        d, V, s = cfg.d_model, cfg.vocab, cfg.init_scale
        f = cfg.mlp_ratio * d
        self.tok_emb = rng.standard_normal((V, d)) * s
        self.pos_emb = rng.standard_normal((cfg.context, d)) * 0.5 * s
        self.blocks = []
        for _ in range(cfg.n_layers):
            self.blocks.append({
                "ln1_g": np.ones(d), "ln1_b": np.zeros(d),
                "w_qkv": rng.standard_normal((d, 3 * d)) * s / np.sqrt(d),
                "w_o": rng.standard_normal((d, d)) * s / np.sqrt(d),
                "ln2_g": np.ones(d), "ln2_b": np.zeros(d),
                "w_1": rng.standard_normal((d, f)) * s / np.sqrt(d), "b_1": np.zeros(f),
                "w_2": rng.standard_normal((f, d)) * s / np.sqrt(f), "b_2": np.zeros(d),
            })
        self.lnf_g, self.lnf_b = np.ones(d), np.zeros(d)
        self.w_u = rng.standard_normal((d, V)) * s
        for arr in self._arrays():
            arr.setflags(write=False)
        self._hash = self.param_hash()

    def _arrays(self):
        out = [self.tok_emb, self.pos_emb, self.lnf_g, self.lnf_b, self.w_u]
        for blk in self.blocks:
            out.extend(blk[k] for k in sorted(blk))
        return out

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for a in self._arrays():
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def _block(self, x, blk, past):
        """One block over new positions ``x`` (B, t, d) given cached keys and
        values of earlier positions; returns the output and the grown cache."""
        cfg = self.cfg
        B, t, d = x.shape
        nh, hd = cfg.n_heads, d // cfg.n_heads
        h = _layer_norm(x, blk["ln1_g"], blk["ln1_b"])
        qkv = h @ blk["w_qkv"]
        q, k, v = (qkv[..., i * d:(i + 1) * d].reshape(B, t, nh, hd).transpose(0, 2, 1, 3) for i in range(3))
        if past is not None:
            k = np.concatenate([past[0], k], axis=2)
            v = np.concatenate([past[1], v], axis=2)
        T = k.shape[2]
        att = q @ k.transpose(0, 1, 3, 2) / np.sqrt(hd)
        mask = np.arange(T)[None, :] <= (T - t + np.arange(t))[:, None]
        att = np.where(mask, att, -np.inf)
        att = np.exp(att - att.max(axis=-1, keepdims=True))
        att /= att.sum(axis=-1, keepdims=True)
        y = (att @ v).transpose(0, 2, 1, 3).reshape(B, t, d)
        x = x + y @ blk["w_o"]
        h = _layer_norm(x, blk["ln2_g"], blk["ln2_b"])
        return x + _gelu(h @ blk["w_1"] + blk["b_1"]) @ blk["w_2"] + blk["b_2"], (k, v)

    def _run(self, tokens, start: int, caches, perturbation=None, n_perturbed: int = 0, hidden=None):
        B, t = tokens.shape
        x = self.tok_emb[tokens] + self.pos_emb[start:start + t]
        if hidden is not None:
            hidden.append(x)
        new_caches = []
        for i, blk in enumerate(self.blocks, start=1):
            x, kv = self._block(x, blk, caches[i - 1] if caches else None)
            new_caches.append(kv)
            if i == self.cfg.layer and perturbation is not None and start < n_perturbed:
                x = x.copy()
                x[:, :n_perturbed - start] += np.asarray(perturbation, np.float64)[:, None, :]
            if hidden is not None:
                hidden.append(x)
        return _layer_norm(x, self.lnf_g, self.lnf_b) @ self.w_u, new_caches

    def forward(self, tokens, perturbation=None, n_perturbed: int = 0, return_hidden: bool = False):
        """Logits for every position.  ``perturbation`` (B, d) is added to the
        output of block ``cfg.layer`` at positions ``0 .. n_perturbed-1``.
        With ``return_hidden`` also returns the residual stream after each
        block (index 0 = embeddings)."""
        tokens = np.asarray(tokens, np.int64)
        if tokens.shape[1] > self.cfg.context:
            raise ValueError(f"sequence length {tokens.shape[1]} exceeds context {self.cfg.context}")
        hidden = [] if return_hidden else None
        logits, _ = self._run(tokens, 0, None, perturbation, n_perturbed, hidden)
        return (logits, hidden) if return_hidden else logits

    def generate(self, prompt, k: int, rng: np.random.Generator, perturbation=None,
                 n_perturbed: int | None = None, temperature: float = 1.0) -> np.ndarray:
        """Sample ``k`` tokens after each prompt row.  One uniform per row per
        generated token is drawn from ``rng`` whether or not a perturbation is
        given."""
        prompt = np.atleast_2d(np.asarray(prompt, np.int64))
        L = prompt.shape[1]
        if L + k > self.cfg.context:
            raise ValueError(f"prompt of {L} plus {k} new tokens overflows context {self.cfg.context}")
        n_pert = L if n_perturbed is None else n_perturbed
        if n_pert > L:
            raise ValueError("perturbed positions must lie inside the prompt")
        out = np.empty((len(prompt), k), np.int64)
        logits, caches = self._run(prompt, 0, None, perturbation, n_pert)
        for j in range(k):
            z = logits[:, -1] / temperature
            p = np.exp(z - z.max(axis=-1, keepdims=True))
            cdf = np.cumsum(p / p.sum(axis=-1, keepdims=True), axis=-1)
            u = rng.random(len(prompt))
            tok = np.minimum((cdf < u[:, None]).sum(axis=-1), self.cfg.vocab - 1)
            out[:, j] = tok
            if j + 1 < k:
                logits, caches = self._run(tok[:, None], L + j, caches)
        return out

    def encode(self, prompt) -> np.ndarray:
        """Fixed-length prompt encoding: mean of the token embeddings."""
        return self.tok_emb[np.asarray(prompt, np.int64)].mean(axis=-2)

    def layer_activations(self, prompt) -> np.ndarray:
        """Unperturbed residual stream after block ``layer`` for every prompt position."""
        _, hidden = self.forward(np.atleast_2d(prompt), return_hidden=True)
        return hidden[self.cfg.layer]


def tinylm_generate(model: TinyLM, prompt, perturbation, k: int, temperature: float = 1.0, seed=0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    pert = None if perturbation is None else np.atleast_2d(perturbation)
    return model.generate(np.atleast_2d(prompt), k, rng, pert, temperature=temperature)


@dataclass(frozen=True)
class RewardRule:
    forbidden: tuple[int, ...]
    k_c: int = 15

    def __call__(self, completion) -> np.ndarray:
        c = np.atleast_2d(np.asarray(completion, np.int64))
        return np.isin(c, self.forbidden).sum(axis=-1) / self.k_c


def perturbation_from_action(raw_action, latent_scale: float, alpha: float = 3.0) -> np.ndarray:
    return np.tanh(np.asarray(raw_action, np.float64)) * alpha * latent_scale


@dataclass
class LmAttackConfig:
    k_s: int = 10
    k_c: int = 15
    alpha: float = 3.0
    hidden: int = 32
    episodes: int = 20_480
    eval_interval: int = 2_048
    eval_prompts: int = 200
    seeds: int = 9
    mode: str = "blackbox,whitebox"
    batch_prompts: int = 256
    budget_fraction: float = 0.6
    init_log_std: float = 0.0


@dataclass
class LmAttackExperiment:
    seed: int = 0
    lm: TinyLMConfig = field(default_factory=TinyLMConfig)
    attack: LmAttackConfig = field(default_factory=LmAttackConfig)
    ppo: PpoConfig = field(default_factory=lambda: PpoConfig(
        gamma=0.0, lam=0.95, steps=256, minibatch=64, epochs=4, lr=1e-3, ent_coef=0.0, vf_coef=0.5))

    def modes(self) -> list[bool]:
        out = []
        for t in self.attack.mode.split(","):
            t = t.strip().lower()
            if t in ("whitebox", "white_box", "white-box"):
                out.append(True)
            elif t in ("blackbox", "black_box", "black-box"):
                out.append(False)
            elif t:
                raise ValueError(f"unknown lmattack mode {t!r}")
        return out


def sample_prompts(model: TinyLM, n: int, k_s: int, rng: np.random.Generator) -> np.ndarray:
    """One uniformly drawn seed token continued unperturbed to ``k_s`` tokens."""
    seed_tok = rng.integers(0, model.cfg.vocab, size=(n, 1))
    return np.concatenate([seed_tok, model.generate(seed_tok, k_s - 1, rng)], axis=1)


@dataclass
class AttackEpisode:
    prompt: np.ndarray
    encoding: np.ndarray
    latent: np.ndarray | None
    perturbation: np.ndarray
    completion: np.ndarray
    reward: float


class LatentAttackSource:
    """One-step episodes: prompt -> observation -> perturbation -> completion."""

    def __init__(self, model: TinyLM, white_box: bool, cfg: LmAttackConfig, seed):
        self.model, self.white_box, self.cfg = model, white_box, cfg
        self.reward = RewardRule(model.forbidden, cfg.k_c)
        d = model.cfg.d_model
        self.obs_dim = d * (2 if white_box else 1)
        self.enc_stats = RunningMoments(d)
        self.latent_stats = RunningMoments(d)
        self.scale_sq = RunningMoments(1)  # running mean of squared activations
        self.rng = np.random.default_rng(seed)

    @property
    def latent_scale(self) -> float:
        return float(np.sqrt(self.scale_sq.mean[0])) if self.scale_sq.count else 1.0

    def observe(self, prompts: np.ndarray, update: bool) -> np.ndarray:
        enc = self.model.encode(prompts)
        acts = self.model.layer_activations(prompts)
        last = acts[:, -1]
        if update:
            self.scale_sq.update((acts ** 2).mean(axis=(1, 2))[:, None])
            self.enc_stats.update(enc)
            if self.white_box:
                self.latent_stats.update(last)
        enc = normalize_m(enc, self.enc_stats)
        if not self.white_box:
            return enc
        return np.concatenate([enc, normalize_m(last, self.latent_stats)], axis=1)

    def play(self, prompts, raw_actions, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pert = perturbation_from_action(raw_actions, self.latent_scale, self.cfg.alpha)
        comp = self.model.generate(prompts, self.cfg.k_c, rng, pert, n_perturbed=self.cfg.k_s)
        return pert, comp, self.reward(comp)

    def collect(self, net: PolicyNet, n_steps: int, rng: np.random.Generator) -> Rollout:
        if net.obs_dim != self.obs_dim:
            raise ValueError(f"adversary input width {net.obs_dim} != observation width {self.obs_dim}")
        obs_l, act_l, logp_l, val_l, rew_l = [], [], [], [], []
        left = n_steps
        while left > 0:
            n = min(left, self.cfg.batch_prompts)
            prompts = sample_prompts(self.model, n, self.cfg.k_s, self.rng)
            x = self.observe(prompts, update=True)
            out = net.forward(x)
            raw = net.sample(out, rng)
            logp, _ = net.dist_logp_entropy(out, raw)
            _, _, r = self.play(prompts, raw, self.rng)
            obs_l.append(x); act_l.append(raw); logp_l.append(logp); val_l.append(out.value); rew_l.append(r)
            left -= n
        cat = lambda xs: np.concatenate(xs)[:, None]  # noqa: E731  (T, E=1) layout
        rewards = cat(rew_l)
        T = len(rewards)
        return Rollout(
            obs=cat(obs_l), actions=cat(act_l), logp=cat(logp_l), rewards=rewards, values=cat(val_l),
            dones=np.ones((T, 1), bool), bootstrap_value=np.zeros(1),
            episode_returns=rewards[:, 0].tolist(),
        )

    def sample_episode(self, net: PolicyNet, prompt, rng, deterministic: bool = False) -> AttackEpisode:
        prompt = np.atleast_2d(prompt)
        x = self.observe(prompt, update=False)
        out = net.forward(x)
        raw = net.mode(out) if deterministic else net.sample(out, rng)
        pert, comp, r = self.play(prompt, raw, rng)
        latent = self.model.layer_activations(prompt)[0, -1] if self.white_box else None
        return AttackEpisode(prompt[0], self.model.encode(prompt)[0], latent, pert[0], comp[0], float(r[0]))


def sample_episode(model: TinyLM, adversary: PolicyNet, prompt_source, white_box: bool,
                   rng: np.random.Generator, cfg: LmAttackConfig = LmAttackConfig()) -> AttackEpisode:
    """Draw one prompt (from ``prompt_source``: an array of prompts, or None to
    generate one) and play a single attack episode."""
    src = LatentAttackSource(model, white_box, cfg, rng.integers(1 << 31))
    if prompt_source is None:
        prompt = sample_prompts(model, 1, cfg.k_s, rng)[0]
    else:
        prompts = np.atleast_2d(prompt_source)
        prompt = prompts[rng.integers(len(prompts))]
    return src.sample_episode(adversary, prompt, rng)


def evaluate_adversary(source: LatentAttackSource, net: PolicyNet | None, prompts: np.ndarray, seed) -> float:
    """Mean reward on fixed prompts using the mean perturbation (``net=None``
    plays the zero perturbation)."""
    rng = np.random.default_rng(seed)
    if net is None:
        raw = np.zeros((len(prompts), source.model.cfg.d_model))
    else:
        raw = net.mode(net.forward(source.observe(prompts, update=False)))
    _, _, r = source.play(prompts, raw, rng)
    return float(r.mean())


@dataclass
class LmRunResult:
    white_box: bool
    seed: int
    episodes: list[int]
    rewards: list[float]
    base_rate: float
    adversary: PolicyNet | None = None
    samples: list[AttackEpisode] = field(default_factory=list)


def heldout_prompts(model: TinyLM, exp: LmAttackExperiment) -> np.ndarray:
    return sample_prompts(model, exp.attack.eval_prompts, exp.attack.k_s, derive_rng(exp.seed, "lm", "heldout"))


def measure_base_rate(model: TinyLM, exp: LmAttackExperiment) -> float:
    src = LatentAttackSource(model, False, exp.attack, 0)
    return evaluate_adversary(src, None, heldout_prompts(model, exp), derive_seed(exp.seed, "lm", "base-rate"))


def train_latent_adversary(model: TinyLM, white_box: bool, exp: LmAttackExperiment, seed: int,
                           metrics_path=None) -> LmRunResult:
    ac = exp.attack
    if ac.episodes % ac.eval_interval:
        raise ValueError("attack.eval_interval must divide attack.episodes")
    before = model.param_hash()
    tag = ("whitebox" if white_box else "blackbox", seed)
    src = LatentAttackSource(model, white_box, ac, derive_seed(exp.seed, "lm", *tag, "env"))
    net = make_policy(src.obs_dim, model.cfg.d_model, derive_rng(exp.seed, "lm", *tag, "init"),
                      hidden=ac.hidden, kind=GAUSSIAN, init_log_std=ac.init_log_std)
    trainer = PpoTrainer(net, exp.ppo, metrics_path)
    rng = derive_rng(exp.seed, "lm", *tag, "ppo")
    prompts = heldout_prompts(model, exp)
    eval_seed = derive_seed(exp.seed, "lm", "eval")

    def evaluate() -> float:
        frozen = copy.deepcopy(src)
        return evaluate_adversary(frozen, trainer.net, prompts, eval_seed)

    base = evaluate_adversary(src, None, prompts, eval_seed)
    episodes, curve = [0], [evaluate()]
    next_eval = ac.eval_interval
    while trainer.env_steps < ac.episodes:
        trainer.step(src, rng)
        if trainer.env_steps >= next_eval:
            episodes.append(next_eval)
            curve.append(evaluate())
            log.info("lmattack %s seed=%d episodes=%d reward %.4f", tag[0], seed, next_eval, curve[-1])
            next_eval += ac.eval_interval
    if model.param_hash() != before:
        raise RuntimeError("TinyLM parameters changed during an attack run")
    sample_rng = derive_rng(exp.seed, "lm", *tag, "samples")
    samples = [src.sample_episode(trainer.net, p, sample_rng, deterministic=True) for p in prompts[:10]]
    return LmRunResult(white_box, seed, episodes, curve, base, trainer.net, samples)


def detokenize(tokens, forbidden=()) -> str:
    """Printable symbols for token ids; forbidden ids are bracketed."""
    alphabet = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789+/"
    out = []
    for t in tokens:
        sym = alphabet[int(t) % len(alphabet)]
        out.append(f"[{sym}]" if int(t) in forbidden else sym)
    return " ".join(out)


def run_lmattack(exp: LmAttackExperiment, out_dir: Path) -> dict:
    from .attack2p import write_rows
    from .stats import aggregate_curves, welch_t_one_sided

    out_dir = Path(out_dir)
    (out_dir / "runs").mkdir(parents=True, exist_ok=True)
    (out_dir / "adversaries").mkdir(exist_ok=True)
    model = TinyLM(exp.lm)
    results: list[LmRunResult] = []
    for wb in exp.modes():
        for s in range(exp.attack.seeds):
            stem = f"{'whitebox' if wb else 'blackbox'}_s{s}"
            res = train_latent_adversary(model, wb, exp, s, out_dir / "runs" / f"{stem}_metrics.csv")
            with open(out_dir / "runs" / f"{stem}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["episodes", "mean_reward"])
                w.writerows([e, fmt(r)] for e, r in zip(res.episodes, res.rewards))
            save_checkpoint(res.adversary, out_dir / "adversaries" / f"{stem}.ckpt")
            results.append(res)
    base = results[0].base_rate if results else measure_base_rate(model, exp)
    with open(out_dir / "samples.txt", "w") as fh:
        for r in results:
            fh.write(f"# {'white-box' if r.white_box else 'black-box'} seed {r.seed}\n")
            for ep in r.samples:
                fh.write(f"prompt     {' '.join(map(str, ep.prompt))}\n")
                fh.write(f"completion {' '.join(map(str, ep.completion))}\n")
                fh.write(f"symbols    {detokenize(ep.prompt)} | {detokenize(ep.completion, model.forbidden)}\n")
                fh.write(f"reward     {fmt(ep.reward)}\n")
    rows, tests = [], []
    groups = {}
    for wb in exp.modes():
        rs = [r for r in results if r.white_box == wb]
        label = "whitebox" if wb else "blackbox"
        for row in aggregate_curves([dict(zip(r.episodes, r.rewards)) for r in rs]):
            rows.append({"mode": label, **row})
        groups[label] = rs
    write_rows(out_dir / "comparison.csv", ["mode", "env_steps", "mean", "sem", "n"], rows)
    if "whitebox" in groups and "blackbox" in groups:
        eps = groups["whitebox"][0].episodes
        target = exp.attack.budget_fraction * exp.attack.episodes
        at = min(eps, key=lambda e: abs(e - target))
        for label, idx in (("budget_fraction", eps.index(at)), ("final", len(eps) - 1)):
            a = [r.rewards[idx] for r in groups["whitebox"]]
            b = [r.rewards[idx] for r in groups["blackbox"]]
            try:
                t, df, p = welch_t_one_sided(a, b)
            except ValueError:
                t = df = p = float("nan")
            tests.append({"mode": "whitebox", "vs": "blackbox", "point": label, "env_steps": eps[idx],
                          "mean": float(np.mean(a)), "control_mean": float(np.mean(b)),
                          "n": len(a), "n_control": len(b), "t": t, "df": df, "p": p})
    write_rows(out_dir / "tests.csv",
               ["mode", "vs", "point", "env_steps", "mean", "control_mean", "n", "n_control", "t", "df", "p"], tests)
    write_rows(out_dir / "base_rate.csv", ["base_rate"], [{"base_rate": base}])
    return {"base_rate": base, "tests": tests, "final": {r.seed: r.rewards[-1] for r in results}}
