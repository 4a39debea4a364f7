"""Soft actor-critic with twin critics, squashed-Gaussian policy and optional
automatic temperature, built on the hand-rolled MLPs.

The hybrid-action variant (PASAC) reuses this machinery unchanged: the actor's
continuous output carries one weight per discrete action and the environment
applies an argmax at action time, so the learner never sees a discrete head.

All reparameterization noise is drawn explicitly and passed into the loss
functions, which keeps the losses deterministic functions of (params, batch,
noise) - that is what the finite-difference gradient tests differentiate.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .mlp import Adam, Mlp, grads_as_list
from .rng import STREAM_INIT, STREAM_POLICY, make_stream

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)


class NonFiniteLoss(RuntimeError):
    pass


@dataclass
class SacHyper:
    gamma: float = 0.99
    tau: float = 0.005
    lr: float = 3e-4
    batch_size: int = 256
    buffer_capacity: int = 1_000_000
    hidden: tuple = (256, 256)
    activation: str = "relu"
    warmup_steps: int = 1000
    updates_per_step: int = 1
    alpha_init: float = 0.2
    auto_alpha: bool = True
    target_entropy: float | None = None   # default: -action_dim
    dtype: str = "float64"

    def validate(self) -> "SacHyper":
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must be in (0, 1)")
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must be in (0, 1]")
        if self.alpha_init < 0.0:
            raise ValueError("alpha must be >= 0")
        return self


# ----------------------------------------------------------------- replay

@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """FIFO ring buffer with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int, dtype=np.float64):
        self.capacity = int(capacity)
        self.states = np.zeros((self.capacity, obs_dim), dtype=dtype)
        self.actions = np.zeros((self.capacity, act_dim), dtype=dtype)
        self.rewards = np.zeros(self.capacity, dtype=dtype)
        self.next_states = np.zeros((self.capacity, obs_dim), dtype=dtype)
        self.dones = np.zeros(self.capacity, dtype=dtype)
        self.ptr = 0
        self.size = 0

    def add(self, state, action, reward, next_state, done) -> None:
        i = self.ptr
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = float(done)
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "state": self.states[idx],
            "action": self.actions[idx],
            "reward": self.rewards[idx],
            "next_state": self.next_states[idx],
            "done": self.dones[idx],
        }


# ------------------------------------------------------- squashed gaussian

def _softplus(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _log1m_tanh2(u: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2), stable for large |u|
    return 2.0 * (math.log(2.0) - u - _softplus(-2.0 * u))


def split_actor_output(out: np.ndarray, act_dim: int):
    mean = out[..., :act_dim]
    log_std = np.clip(out[..., act_dim:], LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std


def squash(u: np.ndarray, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    half = 0.5 * (high - low)
    mid = 0.5 * (high + low)
    return mid + half * np.tanh(u)


def squashed_sample(mean, log_std, eps, low, high):
    """Returns (action, log_prob, tanh_u). eps is the fixed unit noise."""
    std = np.exp(log_std)
    u = mean + std * eps
    t = np.tanh(u)
    half = 0.5 * (high - low)
    action = 0.5 * (high + low) + half * t
    log_prob = (-0.5 * eps * eps - log_std - 0.5 * LOG_2PI
                - np.log(half) - _log1m_tanh2(u)).sum(axis=-1)
    return action, log_prob, t


def pasac_select(action_vec: np.ndarray, n_discrete: int) -> tuple[np.ndarray, int]:
    """Split a hybrid action vector into (continuous part, argmax of weights).
    Ties resolve to the lowest index."""
    vec = np.asarray(action_vec)
    cont = vec[: len(vec) - n_discrete]
    weights = vec[len(vec) - n_discrete:]
    return cont, int(np.argmax(weights))


# ------------------------------------------------------------------ agent

class SacAgent:
    def __init__(self, obs_dim: int, act_dim: int, low: np.ndarray, high: np.ndarray,
                 hyper: SacHyper | None = None, seed: int = 0):
        self.hyper = (hyper or SacHyper()).validate()
        h = self.hyper
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        dtype = np.dtype(h.dtype)
        self.low = np.asarray(low, dtype=dtype)
        self.high = np.asarray(high, dtype=dtype)
        init_rng = make_stream(seed, STREAM_INIT)

        dims_actor = (obs_dim, *h.hidden, 2 * act_dim)
        dims_q = (obs_dim + act_dim, *h.hidden, 1)
        self.actor = Mlp(dims_actor, h.activation, init_rng, dtype)
        self.q1 = Mlp(dims_q, h.activation, init_rng, dtype)
        self.q2 = Mlp(dims_q, h.activation, init_rng, dtype)
        self.q1_target = self.q1.clone()
        self.q2_target = self.q2.clone()

        self.log_alpha = np.array([math.log(max(h.alpha_init, 1e-8))], dtype=dtype)
        self.target_entropy = (h.target_entropy if h.target_entropy is not None
                               else -float(act_dim))

        self.opt_actor = Adam(self.actor.parameters(), lr=h.lr)
        self.opt_q1 = Adam(self.q1.parameters(), lr=h.lr)
        self.opt_q2 = Adam(self.q2.parameters(), lr=h.lr)
        self.opt_alpha = Adam([self.log_alpha], lr=h.lr)
        self.updates_done = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    # ------------------------------------------------------------- policy

    def policy_sample(self, state: np.ndarray, rng: np.random.Generator,
                      deterministic: bool = False):
        """Sample an action in the env's interval with its exact log-density;
        deterministic mode returns the squashed mean."""
        out, _ = self.actor.forward(np.asarray(state, dtype=self.low.dtype))
        mean, log_std = split_actor_output(out, self.act_dim)
        if deterministic:
            action = squash(mean, self.low, self.high)
            return action, None
        eps = rng.standard_normal(self.act_dim).astype(self.low.dtype)
        action, log_prob, _ = squashed_sample(mean, log_std, eps, self.low, self.high)
        return action, float(log_prob)

    # ------------------------------------------------------------- losses

    def critic_losses_and_grads(self, batch: dict, next_eps: np.ndarray):
        """Twin TD losses toward r + gamma (1-d) (min target Q - alpha log pi)."""
        h = self.hyper
        s, a = batch["state"], batch["action"]
        r, s2, d = batch["reward"], batch["next_state"], batch["done"]
        B = len(r)

        out2, _ = self.actor.forward(s2)
        mean2, log_std2 = split_actor_output(out2, self.act_dim)
        a2, logp2, _ = squashed_sample(mean2, log_std2, next_eps, self.low, self.high)
        q1t, _ = self.q1_target.forward(np.concatenate([s2, a2], axis=1))
        q2t, _ = self.q2_target.forward(np.concatenate([s2, a2], axis=1))
        q_next = np.minimum(q1t[:, 0], q2t[:, 0]) - self.alpha * logp2
        y = r + h.gamma * (1.0 - d) * q_next

        sa = np.concatenate([s, a], axis=1)
        q1, c1 = self.q1.forward(sa)
        q2, c2 = self.q2.forward(sa)
        e1 = q1[:, 0] - y
        e2 = q2[:, 0] - y
        loss1 = float(np.mean(e1 * e1))
        loss2 = float(np.mean(e2 * e2))
        g1, _ = self.q1.backward(c1, (2.0 * e1 / B)[:, None])
        g2, _ = self.q2.backward(c2, (2.0 * e2 / B)[:, None])
        return loss1, loss2, g1, g2, y

    def actor_loss_and_grads(self, batch: dict, eps: np.ndarray):
        """L = mean(alpha log pi - min twin Q) with reparameterized actions."""
        s = batch["state"]
        B = s.shape[0]
        out, cache = self.actor.forward(s)
        mean, log_std = split_actor_output(out, self.act_dim)
        std = np.exp(log_std)
        a, logp, t = squashed_sample(mean, log_std, eps, self.low, self.high)

        sa = np.concatenate([s, a], axis=1)
        q1, c1 = self.q1.forward(sa)
        q2, c2 = self.q2.forward(sa)
        take1 = q1[:, 0] <= q2[:, 0]  # argmin; ties go to the first critic
        qmin = np.where(take1, q1[:, 0], q2[:, 0])
        loss = float(np.mean(self.alpha * logp - qmin))

        # dL/da via the selected critic's input gradient
        _, gin1 = self.q1.backward(c1, (-take1.astype(q1.dtype) / B)[:, None])
        _, gin2 = self.q2.backward(c2, (-(~take1).astype(q2.dtype) / B)[:, None])
        dL_da = (gin1 + gin2)[:, self.obs_dim:]

        half = 0.5 * (self.high - self.low)
        sech2 = 1.0 - t * t
        da_dmean = half * sech2
        # log pi pieces: d/dmean = 2 t ; d/dlogstd = -1 + 2 t std eps
        alpha = self.alpha
        g_mean = alpha * (2.0 * t) / B + dL_da * da_dmean
        g_logstd = (alpha * (-1.0 + 2.0 * t * std * eps) / B
                    + dL_da * da_dmean * std * eps)
        # clip boundary of log_std has zero gradient
        raw = out[..., self.act_dim:]
        inside = ((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)).astype(out.dtype)
        grad_out = np.concatenate([g_mean, g_logstd * inside], axis=1)
        grads, _ = self.actor.backward(cache, grad_out)
        return loss, grads, logp

    def alpha_loss_and_grad(self, logp: np.ndarray):
        """L = mean(-log_alpha * (log pi + target entropy)), log pi detached."""
        excess = float(np.mean(logp + self.target_entropy))
        loss = -float(self.log_alpha[0]) * excess
        return loss, np.array([-excess], dtype=self.log_alpha.dtype)

    # ------------------------------------------------------------- update

    def update(self, batch: dict, rng: np.random.Generator,
               dump_dir: str | None = None) -> dict:
        h = self.hyper
        B = len(batch["reward"])
        dtype = self.low.dtype
        next_eps = rng.standard_normal((B, self.act_dim)).astype(dtype)
        loss1, loss2, g1, g2, y = self.critic_losses_and_grads(batch, next_eps)
        self.opt_q1.step(grads_as_list(g1))
        self.opt_q2.step(grads_as_list(g2))

        eps = rng.standard_normal((B, self.act_dim)).astype(dtype)
        actor_loss, ga, logp = self.actor_loss_and_grads(batch, eps)
        self.opt_actor.step(grads_as_list(ga))

        alpha_loss = 0.0
        if h.auto_alpha:
            alpha_loss, g_alpha = self.alpha_loss_and_grad(logp)
            self.opt_alpha.step([g_alpha])

        self.q1_target.polyak_from(self.q1, h.tau)
        self.q2_target.polyak_from(self.q2, h.tau)
        self.updates_done += 1

        diag = {
            "critic1_loss": loss1, "critic2_loss": loss2, "actor_loss": actor_loss,
            "alpha_loss": alpha_loss, "alpha": self.alpha,
            "mean_q_target": float(np.mean(y)), "mean_entropy": float(-np.mean(logp)),
        }
        if not all(np.isfinite(v) for v in diag.values()):
            path = os.path.join(dump_dir or ".", "nonfinite_batch_dump.npz")
            np.savez(path, **batch)
            raise NonFiniteLoss(f"non-finite loss at update {self.updates_done}; "
                                f"batch dumped to {path}")
        return diag


# ------------------------------------------------------------- checkpoints

def save_checkpoint(path: str, agent: SacAgent, meta: dict | None = None) -> None:
    """Layout: 'meta' holds a JSON header (layer sizes, bounds, hyper block,
    caller metadata); arrays are row-major under '<net>.W<i>' / '<net>.b<i>'."""
    header = {
        "obs_dim": agent.obs_dim,
        "act_dim": agent.act_dim,
        "actor_dims": list(agent.actor.dims),
        "q_dims": list(agent.q1.dims),
        "activation": agent.actor.activation,
        "action_low": agent.low.tolist(),
        "action_high": agent.high.tolist(),
        "hyper": asdict(agent.hyper),
        "target_entropy": agent.target_entropy,
        "meta": meta or {},
    }
    arrays = {"log_alpha": agent.log_alpha}
    for name, net in (("actor", agent.actor), ("q1", agent.q1), ("q2", agent.q2),
                      ("q1_target", agent.q1_target), ("q2_target", agent.q2_target)):
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{name}.W{i}"] = w
            arrays[f"{name}.b{i}"] = b
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    np.savez(path, meta=json.dumps(header, sort_keys=True), **arrays)


def load_checkpoint(path: str) -> tuple[SacAgent, dict]:
    data = np.load(path, allow_pickle=False)
    header = json.loads(str(data["meta"]))
    hyper = SacHyper(**{k: (tuple(v) if k == "hidden" else v)
                        for k, v in header["hyper"].items()})
    agent = SacAgent(header["obs_dim"], header["act_dim"],
                     np.array(header["action_low"]), np.array(header["action_high"]),
                     hyper)
    agent.target_entropy = header["target_entropy"]
    for name, net in (("actor", agent.actor), ("q1", agent.q1), ("q2", agent.q2),
                      ("q1_target", agent.q1_target), ("q2_target", agent.q2_target)):
        for i in range(net.n_layers):
            net.weights[i][...] = data[f"{name}.W{i}"]
            net.biases[i][...] = data[f"{name}.b{i}"]
    agent.log_alpha[...] = data["log_alpha"]
    return agent, header["meta"]


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    agent: SacAgent
    curve: list  # one row per episode: episode, env_steps, return, outcome
    evals: list
    checkpoint_path: str | None


EVAL_EPISODE_OFFSET = 1_000_000_000  # eval episodes never collide with training ones


def evaluate(env, agent: SacAgent, episodes: int, seed: int,
             episode_offset: int = EVAL_EPISODE_OFFSET,
             speed_index: int | None = None) -> dict:
    """Deterministic policy rollout; per-step mean reward, success rate, outcomes."""
    rng = make_stream(seed, STREAM_POLICY, episode_offset)
    outcomes: dict[str, int] = {}
    returns = []
    rewards_sum = 0.0
    steps_sum = 0
    speeds = []
    for k in range(episodes):
        obs = env.reset(seed, episode_offset + k)
        ret = 0.0
        while True:
            action, _ = agent.policy_sample(env.normalize(obs), rng, deterministic=True)
            res = env.step_vec(action)
            obs = res.observation
            ret += res.reward
            rewards_sum += res.reward
            steps_sum += 1
            if speed_index is not None:
                speeds.append(float(obs[speed_index]))
            if res.done:
                break
        returns.append(ret)
        outcomes[res.outcome.value] = outcomes.get(res.outcome.value, 0) + 1
    n = float(episodes)
    return {
        "episodes": episodes,
        "success_rate": outcomes.get("success", 0) / n,
        "collision_rate": outcomes.get("collision", 0) / n,
        "timeout_rate": (outcomes.get("timeout", 0) + outcomes.get("stopped", 0)) / n,
        "average_reward": rewards_sum / max(steps_sum, 1),
        "average_return": float(np.mean(returns)),
        "average_speed": float(np.mean(speeds)) if speeds else float("nan"),
        "outcomes": outcomes,
    }


def train(make_env, hyper: SacHyper, budget_steps: int, seed: int, *,
          eval_every: int = 0, eval_episodes: int = 10,
          checkpoint_path: str | None = None, curve_path: str | None = None,
          dump_dir: str | None = None, log_every_episodes: int = 0) -> TrainResult:
    """Interleave env steps and updates for budget_steps agent timesteps."""
    if budget_steps <= hyper.warmup_steps:
        raise ValueError("budget must exceed warmup")
    env = make_env()
    eval_env = make_env()
    dtype = np.dtype(hyper.dtype)
    low, high = env.action_bounds()
    agent = SacAgent(env.obs_dim, env.action_dim, low, high, hyper, seed=seed)
    buffer = ReplayBuffer(hyper.buffer_capacity, env.obs_dim, env.action_dim, dtype)
    rng = make_stream(seed, STREAM_POLICY)

    curve: list[dict] = []
    evals: list[dict] = []
    steps = 0
    episode = 0
    try:
        while steps < budget_steps:
            obs = env.reset(seed, episode)
            nobs = env.normalize(obs)
            ep_ret = 0.0
            ep_steps = 0
            while True:
                if steps < hyper.warmup_steps:
                    action = rng.uniform(low, high).astype(dtype)
                else:
                    action, _ = agent.policy_sample(nobs, rng)
                res = env.step_vec(action)
                nobs2 = env.normalize(res.observation)
                buffer.add(nobs, action, res.reward, nobs2, res.done)
                nobs = nobs2
                ep_ret += res.reward
                ep_steps += 1
                steps += 1

                if steps > hyper.warmup_steps and buffer.size >= hyper.batch_size:
                    for _ in range(hyper.updates_per_step):
                        agent.update(buffer.sample(hyper.batch_size, rng), rng,
                                     dump_dir=dump_dir)

                if eval_every and steps % eval_every == 0:
                    stats = evaluate(eval_env, agent, eval_episodes, seed)
                    stats["env_steps"] = steps
                    evals.append(stats)

                if res.done or steps >= budget_steps:
                    break
            curve.append({"episode": episode, "env_steps": steps,
                          "reward": ep_ret, "steps": ep_steps,
                          "outcome": res.outcome.value})
            if log_every_episodes and episode % log_every_episodes == 0:
                print(f"[train seed={seed}] ep {episode} steps {steps} "
                      f"return {ep_ret:.3f} outcome {res.outcome.value}", flush=True)
            episode += 1
    finally:
        if checkpoint_path:
            save_checkpoint(checkpoint_path, agent, meta={"seed": seed,
                                                          "budget": budget_steps})
        if curve_path:
            write_curve(curve, curve_path)
    return TrainResult(agent, curve, evals, checkpoint_path)


def write_curve(curve: list[dict], path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write("episode,env_steps,reward,steps,outcome\n")
        for row in curve:
            fh.write(f"{row['episode']},{row['env_steps']},{row['reward']!r},"
                     f"{row['steps']},{row['outcome']}\n")
