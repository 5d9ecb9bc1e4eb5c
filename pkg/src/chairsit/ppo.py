"""Proximal policy optimization with generalized advantage estimation.

Collection fans out over independent environment instances (stepped in a
fixed round-robin order so runs are reproducible), advantages come from the
standard recursive GAE, and updates run several epochs of shuffled
minibatches through the clipped surrogate with Adam.
"""

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .policy import Adam, PolicyNet


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class PpoConfig:
    nsteps: int = 8192
    nminibatches: int = 32
    noptepochs: int = 4
    lr: float = 1e-4
    clip: float = 0.2
    gamma: float = 0.95
    lam: float = 0.95
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if self.nsteps % self.nminibatches != 0:
            raise ValueError("nsteps must divide evenly into minibatches")


def subtask_ppo_config(**over) -> PpoConfig:
    return replace(PpoConfig(), **over)


def meta_ppo_config(workers: int = 1, **over) -> PpoConfig:
    """Meta updates run on 2 Hz decisions: 64 of them per worker per
    iteration, in 8 minibatches for 2 epochs."""
    cfg = PpoConfig(nsteps=64 * workers, nminibatches=8, noptepochs=2, lr=1e-4)
    return replace(cfg, **over)


class RolloutBuffer:
    """Fixed-capacity per-iteration storage, filled before each update."""

    def __init__(self, nsteps: int, obs_dim: int, act_dim: int):
        self.nsteps = nsteps
        self.states = np.zeros((nsteps, obs_dim), dtype=np.float32)
        self.actions = np.zeros((nsteps, act_dim), dtype=np.float32)
        self.log_probs = np.zeros(nsteps, dtype=np.float64)
        self.rewards = np.zeros(nsteps, dtype=np.float64)
        self.values = np.zeros(nsteps, dtype=np.float64)
        self.dones = np.zeros(nsteps, dtype=bool)
        self.pos = 0

    def add(self, state, action, log_prob, reward, value, done):
        i = self.pos
        if i >= self.nsteps:
            raise IndexError("rollout buffer full")
        self.states[i] = state
        self.actions[i] = action
        self.log_probs[i] = log_prob
        self.rewards[i] = reward
        self.values[i] = value
        self.dones[i] = done
        self.pos += 1

    @property
    def full(self) -> bool:
        return self.pos == self.nsteps


def compute_gae(rewards, values, dones, bootstrap, gamma, lam,
                standardize=True):
    """Recursive GAE. Returns (advantages, returns = raw advantages + values).

    With `standardize` the advantages are shifted/scaled to mean 0, std 1
    (eps 1e-8); the returns always use the raw advantages.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    T = len(rewards)
    if len(values) != T or len(dones) != T:
        raise ValueError("rewards, values and dones must have equal length")
    adv = np.zeros(T)
    last = 0.0
    next_value = float(bootstrap)
    for t in range(T - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
        next_value = values[t]
    returns = adv + values
    if standardize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


def ppo_loss(net: PolicyNet, batch: dict, cfg: PpoConfig):
    """Clipped-surrogate policy loss, value MSE, diagnostics and parameter
    gradients for one minibatch."""
    states = batch["states"]
    actions = batch["actions"]
    old_lp = batch["log_probs"]
    adv = batch["advantages"]
    returns = batch["returns"]
    B = len(states)

    cache = net.forward_cached(states)
    lp, dlp_dout = net._lp_from_out(cache["out"], actions.astype(net.dtype))
    lp = lp.astype(np.float64)
    ratio = np.exp(lp - old_lp)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
    v = cache["v"].astype(np.float64)
    verr = v - returns
    value_loss = float(np.mean(verr * verr))
    if not (math.isfinite(policy_loss) and math.isfinite(value_loss)):
        raise TrainingDiverged("non-finite PPO loss")

    # gradient flows through the unclipped branch wherever min() selects it
    active = surr1 <= surr2
    dl_dlp = np.where(active, -adv * ratio, 0.0) / B
    d_out = dlp_dout * dl_dlp[:, None].astype(net.dtype)
    d_value = (cfg.vf_coef * 2.0 * verr / B).astype(net.dtype)
    grads = net.backward(cache, d_out, d_value)

    diagnostics = {
        "approx_kl": 0.5 * float(np.mean((lp - old_lp) ** 2)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > cfg.clip)),
    }
    return policy_loss, value_loss, diagnostics, grads


class VecRunner:
    """Round-robin collection over independent environment instances."""

    def __init__(self, envs, rng: np.random.Generator):
        self.envs = list(envs)
        self.rng = rng
        self.obs = [None] * len(self.envs)
        self.ep_reward = np.zeros(len(self.envs))
        self.ep_len = np.zeros(len(self.envs), dtype=int)
        self.started = False

    def _ensure_started(self):
        if not self.started:
            for i, env in enumerate(self.envs):
                self.obs[i] = env.reset()
            self.started = True

    def collect(self, net: PolicyNet, buf: RolloutBuffer):
        """Fill the buffer with nsteps transitions; returns episode stats and
        per-env segment bounds for GAE."""
        self._ensure_started()
        W = len(self.envs)
        per_env = buf.nsteps // W
        if per_env * W != buf.nsteps:
            raise ValueError("nsteps must be divisible by the worker count")
        finished = []
        seg_rewards = [[] for _ in range(W)]
        segs = []
        idx = 0
        for i, env in enumerate(self.envs):
            start = idx
            for _ in range(per_env):
                samp, value = net.sample_and_value(self.obs[i], self.rng)
                obs2, reward, done, info = env.step(samp.action)
                buf.add(self.obs[i], samp.action, samp.log_prob, reward, value, done)
                idx += 1
                self.ep_reward[i] += reward
                self.ep_len[i] += 1
                if done:
                    finished.append({"r": self.ep_reward[i], "l": int(self.ep_len[i]),
                                     **{k: v for k, v in (info or {}).items()}})
                    self.ep_reward[i] = 0.0
                    self.ep_len[i] = 0
                    obs2 = env.reset()
                self.obs[i] = obs2
            bootstrap = 0.0 if buf.dones[idx - 1] else net.value(self.obs[i])
            segs.append((start, idx, bootstrap))
        return finished, segs


def train_iteration(runner: VecRunner, net: PolicyNet, opt: Adam,
                    cfg: PpoConfig, rng: np.random.Generator) -> dict:
    """One PPO iteration: collect nsteps transitions, estimate advantages,
    then run noptepochs of shuffled minibatch updates."""
    obs_dim = net.obs_dim
    buf = RolloutBuffer(cfg.nsteps, obs_dim, net.head.action_dim)
    finished, segs = runner.collect(net, buf)
    assert buf.full

    advantages = np.zeros(cfg.nsteps)
    returns = np.zeros(cfg.nsteps)
    for start, end, bootstrap in segs:
        a, r = compute_gae(buf.rewards[start:end], buf.values[start:end],
                           buf.dones[start:end], bootstrap, cfg.gamma, cfg.lam,
                           standardize=False)
        advantages[start:end] = a
        returns[start:end] = r
    advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    mb_size = cfg.nsteps // cfg.nminibatches
    pol_losses, val_losses, kls, clipfracs = [], [], [], []
    for _ in range(cfg.noptepochs):
        perm = rng.permutation(cfg.nsteps)
        for m in range(cfg.nminibatches):
            sel = perm[m * mb_size:(m + 1) * mb_size]
            batch = {
                "states": buf.states[sel],
                "actions": buf.actions[sel],
                "log_probs": buf.log_probs[sel],
                "advantages": advantages[sel],
                "returns": returns[sel],
            }
            pl, vl, diag, grads = ppo_loss(net, batch, cfg)
            opt.step(grads, max_grad_norm=cfg.max_grad_norm)
            pol_losses.append(pl)
            val_losses.append(vl)
            kls.append(diag["approx_kl"])
            clipfracs.append(diag["clip_frac"])

    if finished:
        mean_r = float(np.mean([e["r"] for e in finished]))
        mean_l = float(np.mean([e["l"] for e in finished]))
    else:
        mean_r = float(buf.rewards.sum() / max(1, len(runner.envs)))
        mean_l = float(cfg.nsteps // max(1, len(runner.envs)))
    return {
        "mean_reward": mean_r,
        "mean_length": mean_l,
        "episodes": len(finished),
        "episode_infos": finished,
        "policy_loss": float(np.mean(pol_losses)),
        "value_loss": float(np.mean(val_losses)),
        "approx_kl": float(np.mean(kls)),
        "clip_frac": float(np.mean(clipfracs)),
    }


class MetricsLogger:
    """JSON-lines metrics file. Only deterministic fields go in, so reruns of
    the same manifest produce identical bytes; wall-clock timing belongs in
    the run log instead."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "a", encoding="utf-8")

    def log(self, iteration: int, stage: str, metrics: dict):
        rec = {
            "iteration": iteration,
            "stage": stage,
            "mean_reward": round(metrics["mean_reward"], 10),
            "mean_length": round(metrics["mean_length"], 4),
            "episodes": metrics.get("episodes", 0),
            "approx_kl": round(metrics["approx_kl"], 12),
            "clip_frac": round(metrics["clip_frac"], 8),
        }
        extra = metrics.get("extra")
        if extra:
            rec.update(extra)
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# learning smoke task: a kinematic point reaching a 2D goal, observed through
# the walk-state layout and rewarded with the approach sigmoid

from .features import WALK_DIM  # noqa: E402
from .geometry import Pose2D, azimuth_goal_feature, wrap_angle  # noqa: E402


class PointGoalEnv:
    """Point agent (x, y, yaw) with velocity/turn-rate actions at 60 Hz.

    Observations use the 52-d walk-state layout (proprioception is mostly
    static placeholders); the reward is the target-approach sigmoid. Like
    target-directed walking, a reached goal (within 0.3 m) is immediately
    resampled; an episode succeeds when at least one goal was reached within
    the fixed horizon.
    """

    DT = 1.0 / 60.0
    MAX_SPEED = 2.0
    MAX_TURN = 3.0
    HORIZON = 480
    REACH = 0.3

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.pose = Pose2D()
        self.goal = np.zeros(2)
        self.t = 0
        self.speed = 0.0
        self.reached = 0

    def _obs(self):
        out = np.zeros(WALK_DIM)
        out[42] = 0.91
        out[43] = self.speed * 0.1
        out[48:50] = 1.0
        out[50:52] = azimuth_goal_feature(self.goal, self.pose)
        return out

    def _new_goal(self):
        # forward cone, matching how walk targets are drawn
        ang = self.pose.yaw + float(self.rng.uniform(-math.pi / 3, math.pi / 3))
        r = float(self.rng.uniform(1.5, 3.0))
        self.goal = np.array([self.pose.x + r * math.cos(ang),
                              self.pose.y + r * math.sin(ang)])

    def reset(self):
        self.pose = Pose2D(0.0, 0.0, float(self.rng.uniform(-math.pi, math.pi)))
        self.t = 0
        self.speed = 0.0
        self.reached = 0
        self._new_goal()
        return self._obs()

    def _dist(self):
        return float(math.hypot(self.goal[0] - self.pose.x, self.goal[1] - self.pose.y))

    def step(self, action):
        from .rewards import walk_goal_stage2
        self.speed = float(np.clip(action[0], 0.0, self.MAX_SPEED))
        turn = float(np.clip(action[1], -self.MAX_TURN, self.MAX_TURN))
        d_prev = self._dist()
        self.pose = Pose2D(
            self.pose.x + self.speed * math.cos(self.pose.yaw) * self.DT,
            self.pose.y + self.speed * math.sin(self.pose.yaw) * self.DT,
            wrap_angle(self.pose.yaw + turn * self.DT))
        self.t += 1
        d = self._dist()
        reward = walk_goal_stage2(d, d_prev, self.DT)
        if d < self.REACH:
            self.reached += 1
            self._new_goal()
        done = self.t >= self.HORIZON
        return self._obs(), reward, done, {"success": self.reached > 0,
                                           "goals_reached": self.reached}
