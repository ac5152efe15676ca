"""Desk-scale environments.

MiniSoccer: two avatars on a 15x9 grid, zero-sum, with goal and ball-advance
shaping rewards.  Actions are egocentric: every player acts (and observes) as
if attacking toward +x, and player B's left/right are mirrored into world
coordinates by the environment.

ParamRunner: one-dimensional force-driven runner whose mass and friction
coefficients can be shifted for robustness evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

UP, DOWN, LEFT, RIGHT, STAY = range(5)
N_ACTIONS = 5
ACTION_NAMES = ("up", "down", "left", "right", "stay")
_DX = np.array([0, 0, -1, 1, 0])
_DY = np.array([1, -1, 0, 0, 0])
_MIRROR = np.array([UP, DOWN, RIGHT, LEFT, STAY])

NONE, POSS_A, POSS_B = 0, 1, 2
OBS_DIM = 12
N_TENTHS = 10


@dataclass(frozen=True)
class SoccerConfig:
    width: int = 15
    height: int = 9
    max_steps: int = 200
    steal_prob: float = 0.5

    def __post_init__(self) -> None:
        if self.width < 5 or self.height < 1 or self.max_steps < 1:
            raise ValueError("soccer grid too small or episode length non-positive")

    def start_positions(self) -> tuple[tuple[int, int], tuple[int, int], tuple[int, int]]:
        mid_x, mid_y = (self.width - 1) // 2, self.height // 2
        off = max(1, self.width // 4)
        return (mid_x - off, mid_y), (self.width - 1 - (mid_x - off), mid_y), (mid_x, mid_y)


@dataclass(frozen=True)
class MiniSoccerState:
    cfg: SoccerConfig
    pos_a: tuple[int, int]
    pos_b: tuple[int, int]
    ball: tuple[int, int]
    possession: int = NONE
    facing_a: int = RIGHT  # world-frame action index of the last move attempt
    facing_b: int = LEFT
    step: int = 0
    rewarded_a: frozenset = frozenset()
    rewarded_b: frozenset = frozenset()
    goals_a: int = 0
    goals_b: int = 0

    @property
    def done(self) -> bool:
        return self.step >= self.cfg.max_steps


def minisoccer_reset(cfg: SoccerConfig = SoccerConfig()) -> MiniSoccerState:
    a, b, ball = cfg.start_positions()
    return MiniSoccerState(cfg=cfg, pos_a=a, pos_b=b, ball=ball)


def tenth_index(x: int, possessor: int, width: int) -> int:
    """Field tenth reached by the ball, measured toward the possessor's target goal."""
    own = x if possessor == POSS_A else width - 1 - x
    return (N_TENTHS * own) // (width - 1)


def _clamp_move(pos, world_action, cfg):
    x = min(max(pos[0] + int(_DX[world_action]), 0), cfg.width - 1)
    y = min(max(pos[1] + int(_DY[world_action]), 0), cfg.height - 1)
    return (x, y)


def minisoccer_step_with_draw(state: MiniSoccerState, action_a: int, action_b: int, u: float):
    """Reference step with an explicit uniform draw ``u`` for tackles."""
    if state.done:
        raise RuntimeError("cannot step a finished MiniSoccer episode")
    if not (0 <= action_a < N_ACTIONS and 0 <= action_b < N_ACTIONS):
        raise ValueError(f"invalid actions {action_a}, {action_b}")
    cfg = state.cfg
    wa, wb = int(action_a), int(_MIRROR[action_b])
    pa, pb = state.pos_a, state.pos_b
    ta, tb = _clamp_move(pa, wa, cfg), _clamp_move(pb, wb, cfg)

    new_a, new_b = ta, tb
    tackler = NONE
    a_into_b, b_into_a = ta == pb, tb == pa
    if a_into_b and (tb == pb or b_into_a):
        new_a = pa
        if state.possession == POSS_B:
            tackler = POSS_A
    if b_into_a and (ta == pa or a_into_b):
        new_b = pb
        if state.possession == POSS_A:
            tackler = POSS_B
    if new_a == new_b:
        new_a, new_b = pa, pb

    possession = state.possession
    if tackler != NONE and u < cfg.steal_prob:
        possession = tackler

    ball = state.ball
    if possession == POSS_A:
        ball = new_a
    elif possession == POSS_B:
        ball = new_b
    else:
        if new_a == ball:
            possession = POSS_A
        elif new_b == ball:
            possession = POSS_B

    rewarded_a, rewarded_b = state.rewarded_a, state.rewarded_b
    shaped_a = shaped_b = 0
    if possession != NONE and possession == state.possession and ball != state.ball:
        k0 = tenth_index(state.ball[0], possession, cfg.width)
        k1 = tenth_index(ball[0], possession, cfg.width)
        fresh = {j for j in range(k0 + 1, k1 + 1)}
        if possession == POSS_A:
            fresh -= rewarded_a
            rewarded_a = rewarded_a | fresh
            shaped_a = len(fresh)
        else:
            fresh -= rewarded_b
            rewarded_b = rewarded_b | fresh
            shaped_b = len(fresh)

    goal_a = int(possession == POSS_A and new_a[0] == cfg.width - 1)
    goal_b = int(possession == POSS_B and new_b[0] == 0)
    facing_a = wa if wa != STAY else state.facing_a
    facing_b = wb if wb != STAY else state.facing_b
    if goal_a or goal_b:
        new_a, new_b, ball = cfg.start_positions()
        possession = NONE
        facing_a, facing_b = RIGHT, LEFT

    r_a = float(goal_a - goal_b) + 0.1 * float(shaped_a - shaped_b)
    r_b = -r_a
    nxt = replace(
        state, pos_a=new_a, pos_b=new_b, ball=ball, possession=possession,
        facing_a=facing_a, facing_b=facing_b, step=state.step + 1,
        rewarded_a=rewarded_a, rewarded_b=rewarded_b,
        goals_a=state.goals_a + goal_a, goals_b=state.goals_b + goal_b,
    )
    return nxt, r_a, r_b, nxt.done


def minisoccer_step(state: MiniSoccerState, action_a: int, action_b: int, rng: np.random.Generator):
    """Simultaneous step; one uniform is drawn from ``rng`` every step."""
    return minisoccer_step_with_draw(state, action_a, action_b, float(rng.random()))


def minisoccer_obs(state: MiniSoccerState, player: int) -> np.ndarray:
    """Egocentric observation of length 12 for ``player`` (POSS_A or POSS_B)."""
    cfg = state.cfg
    sx, sy = 2.0 / (cfg.width - 1), 2.0 / max(cfg.height - 1, 1)
    if player == POSS_A:
        own, opp, facing, side = state.pos_a, state.pos_b, state.facing_a, 1.0
        ex = lambda x: x  # noqa: E731
        fx = int(_DX[facing])
    else:
        own, opp, facing, side = state.pos_b, state.pos_a, state.facing_b, -1.0
        ex = lambda x: cfg.width - 1 - x  # noqa: E731
        fx = -int(_DX[facing])
    opp_player = POSS_B if player == POSS_A else POSS_A
    return np.array([
        ex(own[0]) * sx - 1.0, own[1] * sy - 1.0,
        ex(opp[0]) * sx - 1.0, opp[1] * sy - 1.0,
        ex(state.ball[0]) * sx - 1.0, state.ball[1] * sy - 1.0,
        float(state.possession == player), float(state.possession == opp_player),
        float(state.possession == NONE),
        side,
        1.0 - state.step / cfg.max_steps,
        float(fx),
    ])


def mirror_state(state: MiniSoccerState) -> MiniSoccerState:
    """Reflect left-right and swap the two players' roles."""
    w = state.cfg.width
    mx = lambda p: (w - 1 - p[0], p[1])  # noqa: E731
    swap = {NONE: NONE, POSS_A: POSS_B, POSS_B: POSS_A}
    return replace(
        state, pos_a=mx(state.pos_b), pos_b=mx(state.pos_a), ball=mx(state.ball),
        possession=swap[state.possession],
        facing_a=int(_MIRROR[state.facing_b]), facing_b=int(_MIRROR[state.facing_a]),
        rewarded_a=state.rewarded_b, rewarded_b=state.rewarded_a,
        goals_a=state.goals_b, goals_b=state.goals_a,
    )


class VecMiniSoccer:
    """``n`` independent MiniSoccer games stepped together with numpy.

    Finished games reset automatically; ``step`` reports the per-game goal
    events and which games just ended.
    """

    def __init__(self, n: int, cfg: SoccerConfig = SoccerConfig(), seed: int | np.random.SeedSequence = 0):
        self.n, self.cfg = n, cfg
        self.rng = np.random.default_rng(seed)
        self._ar = np.arange(n)
        self._j = np.arange(N_TENTHS + 1)
        self.reset_all()

    def reset_all(self) -> None:
        n = self.n
        self.ax = np.zeros(n, np.int64); self.ay = np.zeros(n, np.int64)
        self.bx = np.zeros(n, np.int64); self.by = np.zeros(n, np.int64)
        self.ballx = np.zeros(n, np.int64); self.bally = np.zeros(n, np.int64)
        self.poss = np.zeros(n, np.int64)
        self.facing_a = np.zeros(n, np.int64); self.facing_b = np.zeros(n, np.int64)
        self.t = np.zeros(n, np.int64)
        self.rew_a = np.zeros((n, N_TENTHS + 1), bool)
        self.rew_b = np.zeros((n, N_TENTHS + 1), bool)
        self.goals_a = np.zeros(n, np.int64); self.goals_b = np.zeros(n, np.int64)
        self._reset(np.ones(n, bool))

    def _reset(self, mask: np.ndarray) -> None:
        self._place(mask)
        self.t[mask] = 0
        self.rew_a[mask] = False
        self.rew_b[mask] = False
        self.goals_a[mask] = 0
        self.goals_b[mask] = 0

    def _place(self, mask: np.ndarray) -> None:
        (axs, ays), (bxs, bys), (cx, cy) = self.cfg.start_positions()
        self.ax[mask], self.ay[mask], self.bx[mask], self.by[mask] = axs, ays, bxs, bys
        self.ballx[mask], self.bally[mask] = cx, cy
        self.poss[mask] = NONE
        self.facing_a[mask], self.facing_b[mask] = RIGHT, LEFT

    def state(self, i: int) -> MiniSoccerState:
        return MiniSoccerState(
            cfg=self.cfg, pos_a=(int(self.ax[i]), int(self.ay[i])), pos_b=(int(self.bx[i]), int(self.by[i])),
            ball=(int(self.ballx[i]), int(self.bally[i])), possession=int(self.poss[i]),
            facing_a=int(self.facing_a[i]), facing_b=int(self.facing_b[i]), step=int(self.t[i]),
            rewarded_a=frozenset(np.flatnonzero(self.rew_a[i]).tolist()),
            rewarded_b=frozenset(np.flatnonzero(self.rew_b[i]).tolist()),
            goals_a=int(self.goals_a[i]), goals_b=int(self.goals_b[i]),
        )

    def set_state(self, i: int, s: MiniSoccerState) -> None:
        self.ax[i], self.ay[i] = s.pos_a
        self.bx[i], self.by[i] = s.pos_b
        self.ballx[i], self.bally[i] = s.ball
        self.poss[i], self.facing_a[i], self.facing_b[i], self.t[i] = s.possession, s.facing_a, s.facing_b, s.step
        self.rew_a[i] = False; self.rew_b[i] = False
        self.rew_a[i, list(s.rewarded_a)] = True
        self.rew_b[i, list(s.rewarded_b)] = True
        self.goals_a[i], self.goals_b[i] = s.goals_a, s.goals_b

    def observe(self) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.cfg
        sx, sy = 2.0 / (cfg.width - 1), 2.0 / max(cfg.height - 1, 1)
        w1 = cfg.width - 1
        time_left = 1.0 - self.t / cfg.max_steps
        obs_a = np.empty((self.n, OBS_DIM))
        obs_b = np.empty((self.n, OBS_DIM))
        ya, yb, yball = self.ay * sy - 1.0, self.by * sy - 1.0, self.bally * sy - 1.0
        pa, pb, pn = (self.poss == POSS_A) * 1.0, (self.poss == POSS_B) * 1.0, (self.poss == NONE) * 1.0
        obs_a[:, 0] = self.ax * sx - 1.0; obs_a[:, 1] = ya
        obs_a[:, 2] = self.bx * sx - 1.0; obs_a[:, 3] = yb
        obs_a[:, 4] = self.ballx * sx - 1.0; obs_a[:, 5] = yball
        obs_a[:, 6], obs_a[:, 7], obs_a[:, 8] = pa, pb, pn
        obs_a[:, 9] = 1.0
        obs_a[:, 10] = time_left
        obs_a[:, 11] = _DX[self.facing_a] * 1.0
        obs_b[:, 0] = (w1 - self.bx) * sx - 1.0; obs_b[:, 1] = yb
        obs_b[:, 2] = (w1 - self.ax) * sx - 1.0; obs_b[:, 3] = ya
        obs_b[:, 4] = (w1 - self.ballx) * sx - 1.0; obs_b[:, 5] = yball
        obs_b[:, 6], obs_b[:, 7], obs_b[:, 8] = pb, pa, pn
        obs_b[:, 9] = -1.0
        obs_b[:, 10] = time_left
        obs_b[:, 11] = -_DX[self.facing_b] * 1.0
        return obs_a, obs_b

    def step(self, actions_a, actions_b, u: np.ndarray | None = None):
        """Returns ``(r_a, r_b, done, goals_a, goals_b)`` for this step; games
        that finished are reset before returning (their episode goal tallies
        are in ``self.last_goals_a/b``)."""
        cfg = self.cfg
        wa = np.asarray(actions_a, np.int64)
        wb = _MIRROR[np.asarray(actions_b, np.int64)]
        if u is None:
            u = self.rng.random(self.n)
        W1, H1 = cfg.width - 1, cfg.height - 1
        tax = np.clip(self.ax + _DX[wa], 0, W1); tay = np.clip(self.ay + _DY[wa], 0, H1)
        tbx = np.clip(self.bx + _DX[wb], 0, W1); tby = np.clip(self.by + _DY[wb], 0, H1)
        a_into_b = (tax == self.bx) & (tay == self.by)
        b_into_a = (tbx == self.ax) & (tby == self.ay)
        b_stays = (tbx == self.bx) & (tby == self.by)
        a_stays = (tax == self.ax) & (tay == self.ay)
        a_blocked = a_into_b & (b_stays | b_into_a)
        b_blocked = b_into_a & (a_stays | a_into_b)
        nax = np.where(a_blocked, self.ax, tax); nay = np.where(a_blocked, self.ay, tay)
        nbx = np.where(b_blocked, self.bx, tbx); nby = np.where(b_blocked, self.by, tby)
        bump = (nax == nbx) & (nay == nby)
        nax = np.where(bump, self.ax, nax); nay = np.where(bump, self.ay, nay)
        nbx = np.where(bump, self.bx, nbx); nby = np.where(bump, self.by, nby)

        old_poss = self.poss
        tackler = np.where(a_blocked & (old_poss == POSS_B), POSS_A,
                           np.where(b_blocked & (old_poss == POSS_A), POSS_B, NONE))
        poss = np.where((tackler != NONE) & (u < cfg.steal_prob), tackler, old_poss)

        bx0, by0 = self.ballx, self.bally
        ballx = np.where(poss == POSS_A, nax, np.where(poss == POSS_B, nbx, bx0))
        bally = np.where(poss == POSS_A, nay, np.where(poss == POSS_B, nby, by0))
        free = poss == NONE
        grab_a = free & (nax == bx0) & (nay == by0)
        grab_b = free & ~grab_a & (nbx == bx0) & (nby == by0)
        poss = np.where(grab_a, POSS_A, np.where(grab_b, POSS_B, poss))

        moved = (poss != NONE) & (poss == old_poss) & ((ballx != bx0) | (bally != by0))
        own0 = np.where(poss == POSS_A, bx0, W1 - bx0)
        own1 = np.where(poss == POSS_A, ballx, W1 - ballx)
        k0 = (N_TENTHS * own0) // W1
        k1 = (N_TENTHS * own1) // W1
        window = moved[:, None] & (self._j[None, :] > k0[:, None]) & (self._j[None, :] <= k1[:, None])
        fresh_a = window & (poss == POSS_A)[:, None] & ~self.rew_a
        fresh_b = window & (poss == POSS_B)[:, None] & ~self.rew_b
        self.rew_a |= fresh_a
        self.rew_b |= fresh_b
        shaped_a = fresh_a.sum(axis=1)
        shaped_b = fresh_b.sum(axis=1)

        goal_a = ((poss == POSS_A) & (nax == W1)).astype(np.int64)
        goal_b = ((poss == POSS_B) & (nbx == 0)).astype(np.int64)
        self.facing_a = np.where(wa != STAY, wa, self.facing_a)
        self.facing_b = np.where(wb != STAY, wb, self.facing_b)
        self.ax, self.ay, self.bx, self.by = nax, nay, nbx, nby
        self.ballx, self.bally, self.poss = ballx, bally, poss
        scored = (goal_a + goal_b) > 0
        if scored.any():
            self._place(scored)
        self.goals_a = self.goals_a + goal_a
        self.goals_b = self.goals_b + goal_b
        self.t = self.t + 1

        r_a = (goal_a - goal_b).astype(np.float64) + 0.1 * (shaped_a - shaped_b).astype(np.float64)
        r_b = -r_a
        done = self.t >= cfg.max_steps
        self.last_goals_a = self.goals_a.copy()
        self.last_goals_b = self.goals_b.copy()
        if done.any():
            self._reset(done)
        return r_a, r_b, done, goal_a, goal_b


def scripted_bot_batch(obs: np.ndarray, rng: np.random.Generator, cfg: SoccerConfig = SoccerConfig(),
                       epsilon: float = 0.1) -> np.ndarray:
    """Greedy bot on egocentric observations: chase the ball, or carry it
    toward +x when in possession; uniform-random action with prob ``epsilon``."""
    obs = np.atleast_2d(obs)
    hx, hy = (cfg.width - 1) / 2.0, max(cfg.height - 1, 1) / 2.0
    dx = np.rint((obs[:, 4] - obs[:, 0]) * hx)
    dy = np.rint((obs[:, 5] - obs[:, 1]) * hy)
    horiz = np.where(dx > 0, RIGHT, LEFT)
    vert = np.where(dy > 0, UP, DOWN)
    chase = np.where((np.abs(dx) >= np.abs(dy)) & (dx != 0), horiz, np.where(dy != 0, vert, STAY))
    greedy = np.where(obs[:, 6] > 0.5, RIGHT, chase)
    u = rng.random(len(obs))
    rand = rng.integers(0, N_ACTIONS, len(obs))
    return np.where(u < epsilon, rand, greedy)


def scripted_bot(obs: np.ndarray, rng: np.random.Generator, cfg: SoccerConfig = SoccerConfig()) -> int:
    return int(scripted_bot_batch(np.asarray(obs)[None, :], rng, cfg)[0])


# -- ParamRunner --------------------------------------------------------------

@dataclass(frozen=True)
class RunnerConfig:
    max_steps: int = 200
    force: float = 2.0
    friction: float = 0.15
    dt: float = 0.05
    action_cost: float = 0.01
    init_v_noise: float = 0.5


@dataclass(frozen=True)
class ParamRunnerState:
    x: float = 0.0
    v: float = 0.0
    step: int = 0
    mass_coef: float = 1.0
    friction_coef: float = 1.0
    cfg: RunnerConfig = field(default_factory=RunnerConfig)

    @property
    def done(self) -> bool:
        return self.step >= self.cfg.max_steps


def paramrunner_step(state: ParamRunnerState, a: float):
    if state.done:
        raise RuntimeError("cannot step a finished ParamRunner episode")
    c = state.cfg
    a = min(max(float(a), -1.0), 1.0)
    v = state.v + c.force * a / state.mass_coef - c.friction * state.friction_coef * state.v
    x = state.x + c.dt * v
    r = c.dt * v - c.action_cost * a * a
    nxt = replace(state, x=x, v=v, step=state.step + 1)
    return nxt, r, nxt.done


def runner_obs(v, t, cfg: RunnerConfig) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    return np.stack([v / 10.0, 1.0 - t / cfg.max_steps], axis=-1)


RUNNER_OBS_DIM = 2


class ParamRunner:
    """Single ParamRunner with a gym-like reset/step surface."""

    def __init__(self, cfg: RunnerConfig = RunnerConfig(), friction_mult: float = 1.0, mass_mult: float = 1.0,
                 seed: int | np.random.SeedSequence = 0):
        if friction_mult <= 0 or mass_mult <= 0:
            raise ValueError("friction and mass multipliers must be positive")
        self.cfg, self.friction_mult, self.mass_mult = cfg, friction_mult, mass_mult
        self.rng = np.random.default_rng(seed)
        self.state = ParamRunnerState(cfg=cfg, mass_coef=mass_mult, friction_coef=friction_mult)

    def reset(self) -> np.ndarray:
        v0 = self.cfg.init_v_noise * (2.0 * self.rng.random() - 1.0)
        self.state = ParamRunnerState(v=v0, cfg=self.cfg, mass_coef=self.mass_mult, friction_coef=self.friction_mult)
        return runner_obs(self.state.v, self.state.step, self.cfg)

    def step(self, a: float):
        self.state, r, done = paramrunner_step(self.state, a)
        return runner_obs(self.state.v, self.state.step, self.cfg), r, done


def make_shifted_env(friction_mult: float, mass_mult: float, cfg: RunnerConfig = RunnerConfig(),
                     seed: int | np.random.SeedSequence = 0) -> ParamRunner:
    return ParamRunner(cfg, friction_mult=friction_mult, mass_mult=mass_mult, seed=seed)


def multiplier_grid(lo: float = 0.6, hi: float = 1.6, n: int = 8) -> np.ndarray:
    return np.linspace(lo, hi, n)


class VecParamRunner:
    """``n`` runners with per-runner coefficients; finished runners reset."""

    def __init__(self, n: int, cfg: RunnerConfig = RunnerConfig(), friction_mult=1.0, mass_mult=1.0,
                 seed: int | np.random.SeedSequence = 0):
        fm = np.broadcast_to(np.asarray(friction_mult, np.float64), (n,)).copy()
        mm = np.broadcast_to(np.asarray(mass_mult, np.float64), (n,)).copy()
        if np.any(fm <= 0) or np.any(mm <= 0):
            raise ValueError("friction and mass multipliers must be positive")
        self.n, self.cfg, self.friction_mult, self.mass_mult = n, cfg, fm, mm
        self.rng = np.random.default_rng(seed)
        self.x = np.zeros(n); self.v = np.zeros(n); self.t = np.zeros(n, np.int64)
        self._reset(np.ones(n, bool))

    def _reset(self, mask: np.ndarray) -> None:
        draws = self.rng.random(self.n)
        self.x[mask] = 0.0
        self.v[mask] = self.cfg.init_v_noise * (2.0 * draws[mask] - 1.0)
        self.t[mask] = 0

    def observe(self) -> np.ndarray:
        return runner_obs(self.v, self.t, self.cfg)

    def step(self, a: np.ndarray):
        c = self.cfg
        a = np.clip(np.asarray(a, np.float64).reshape(self.n), -1.0, 1.0)
        self.v = self.v + c.force * a / self.mass_mult - c.friction * self.friction_mult * self.v
        self.x = self.x + c.dt * self.v
        r = c.dt * self.v - c.action_cost * a * a
        self.t = self.t + 1
        done = self.t >= c.max_steps
        if done.any():
            self._reset(done)
        return r, done


# -- two-armed bandit -----------------------------------------------------------

class TwoArmedBandit:
    """One-step Bernoulli bandit as a PPO rollout source; the observation is
    the constant vector [1.0]."""

    obs_dim = 1
    n_actions = 2

    def __init__(self, p_arms=(0.3, 0.7), seed: int | np.random.SeedSequence = 0):
        self.p = np.asarray(p_arms, np.float64)
        self.rng = np.random.default_rng(seed)

    @property
    def best_arm(self) -> int:
        return int(np.argmax(self.p))

    def collect(self, net, n_steps: int, rng: np.random.Generator):
        from .ppo import Rollout

        obs = np.ones((n_steps, 1, 1))
        out = net.forward(obs[:, 0])
        a = net.sample(out, rng)
        logp, _ = net.dist_logp_entropy(out, a)
        r = (self.rng.random(n_steps) < self.p[a]).astype(np.float64)
        return Rollout(obs, a[:, None], logp[:, None], r[:, None], out.value[:, None],
                       np.ones((n_steps, 1), bool), np.zeros(1), r.tolist())
