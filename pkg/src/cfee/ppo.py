# Self-contained PPO: squashed-Gaussian policy, GAE, clipped surrogate,
# actor/critic updates, rollout buffer, and checkpoint I/O.
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from .nets import MlpParams, forward, forward_cache, backward, init_mlp, \
    make_optimizer

HIDDEN_SIZES = (256, 256)
LOGSTD_INIT = 0.0  # unit std in squash space: broad initial exploration
LOGSTD_CLAMP = (-5.0, 1.0)  # keeps exploration from collapsing or blowing up
_LOG_2PI = np.log(2.0 * np.pi)

CHECKPOINT_MAGIC = b"CFEECKPT"
CHECKPOINT_VERSION = 1


@dataclass
class PpoHyper:
    # user/shadowing redraws every slot make the env a contextual bandit
    # (next state independent of the action), so the default discount is 0
    discount: float = 0.0
    gae_lambda: float = 0.95
    clip: float = 0.2
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    minibatch: int = 64
    total_steps: int = 300_000
    rollout_horizon: int = 256
    epochs_per_update: int = 10
    max_grad_norm: float = 0.5
    entropy_coef: float = 0.01  # keeps exploration from collapsing early
    target_kl: float = 0.0      # >0: stop epochs once approx KL exceeds it
    # extra critic-only epochs per update: a tight value baseline is what
    # separates the action's effect from scenario-to-scenario variation
    critic_extra_epochs: int = 0
    # exploration floor on logstd (scalar or per-dimension sequence),
    # held for the first half of training then annealed to
    # LOGSTD_CLAMP[0]; broad early search, precise late placement
    logstd_floor_init: object = -1.2
    lr_decay: bool = True       # anneal both learning rates linearly to 0
    penalty: float = 20.0       # mirrored from the environment
    optimizer: str = "adam"

    def validate(self):
        if not (0 <= self.discount <= 1 and 0 <= self.gae_lambda <= 1):
            raise ValueError("discount and gae_lambda must lie in [0,1]")
        if self.clip <= 0 or self.lr_actor <= 0 or self.lr_critic <= 0:
            raise ValueError("clip and learning rates must be > 0")
        if self.max_grad_norm <= 0:
            raise ValueError("max_grad_norm must be > 0")


class SquashedGaussianPolicy:
    """Gaussian in pre-squash space, mapped into the action box by a
    per-coordinate sigmoid; log-probabilities carry the change-of-variables
    correction. The log-std is a free state-independent parameter."""

    def __init__(self, actor: MlpParams, lo: np.ndarray, hi: np.ndarray,
                 logstd: Optional[np.ndarray] = None):
        self.actor = actor
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if self.lo.shape != self.hi.shape or np.any(self.hi <= self.lo):
            raise ValueError("bad action bounds")
        dim = self.lo.shape[0]
        if actor.sizes[-1] != dim:
            raise ValueError("actor output dim must match bounds")
        self.logstd = (np.full(dim, LOGSTD_INIT) if logstd is None
                       else np.asarray(logstd, dtype=float).copy())

    @property
    def action_dim(self) -> int:
        return self.lo.shape[0]

    def squash(self, raw: np.ndarray) -> np.ndarray:
        s = 1.0 / (1.0 + np.exp(-raw))
        return self.lo + (self.hi - self.lo) * s

    def _squash_log_det(self, raw: np.ndarray) -> np.ndarray:
        # log |d action / d raw| summed over coordinates
        s = 1.0 / (1.0 + np.exp(-raw))
        jac = (self.hi - self.lo) * s * (1.0 - s)
        return np.log(np.maximum(jac, 1e-300)).sum(axis=-1)

    def _gauss_logp(self, raw: np.ndarray, mean: np.ndarray) -> np.ndarray:
        std = np.exp(self.logstd)
        z = (raw - mean) / std
        return (-0.5 * z ** 2 - self.logstd - 0.5 * _LOG_2PI).sum(axis=-1)

    def log_prob(self, raw: np.ndarray, mean: np.ndarray) -> np.ndarray:
        """Density of the squashed action at squash(raw), given the mean."""
        return self._gauss_logp(raw, mean) - self._squash_log_det(raw)

    def sample(self, state: np.ndarray, rng: np.random.Generator):
        """Returns (raw sample, squashed action, log-probability)."""
        mean = forward(self.actor, state)
        raw = mean + np.exp(self.logstd) * rng.standard_normal(
            self.action_dim)
        return raw, self.squash(raw), float(self.log_prob(raw, mean))

    def deterministic_action(self, state: np.ndarray) -> np.ndarray:
        return self.squash(forward(self.actor, state))

    def copy(self) -> "SquashedGaussianPolicy":
        return SquashedGaussianPolicy(self.actor.copy(), self.lo.copy(),
                                      self.hi.copy(), self.logstd.copy())


def gae(rewards: np.ndarray, values: np.ndarray, bootstrap_value: float,
        dones: np.ndarray, discount: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates, truncated at episode ends."""
    T = len(rewards)
    if not (len(values) == len(dones) == T):
        raise ValueError("rewards, values, dones must have equal length")
    adv = np.zeros(T)
    last = 0.0
    for t in range(T - 1, -1, -1):
        next_v = 0.0 if dones[t] else (
            bootstrap_value if t == T - 1 else values[t + 1])
        delta = rewards[t] + discount * next_v - values[t]
        last = delta + discount * lam * (0.0 if dones[t] else last)
        adv[t] = last
    return adv


def clip_grad_norm(grads: List[np.ndarray], max_norm: float) -> float:
    """Scales gradients in place so their global L2 norm is <= max_norm;
    returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def clipped_surrogate(ratio: np.ndarray, adv: np.ndarray,
                      eps: float) -> np.ndarray:
    """Per-sample clipped objective min(r*A, clip(r, 1-eps, 1+eps)*A)."""
    return np.minimum(ratio * adv, np.clip(ratio, 1 - eps, 1 + eps) * adv)


class RolloutBuffer:
    """Fixed-horizon storage for one PPO update."""

    def __init__(self, horizon: int, obs_dim: int, act_dim: int):
        self.horizon = horizon
        self.states = np.zeros((horizon, obs_dim))
        self.raws = np.zeros((horizon, act_dim))
        self.actions = np.zeros((horizon, act_dim))
        self.logps = np.zeros(horizon)
        self.rewards = np.zeros(horizon)
        self.values = np.zeros(horizon)
        self.dones = np.zeros(horizon, dtype=bool)
        self.pos = 0

    def add(self, state, raw, action, logp, reward, value, done):
        i = self.pos
        self.states[i] = state
        self.raws[i] = raw
        self.actions[i] = action
        self.logps[i] = logp
        self.rewards[i] = reward
        self.values[i] = value
        self.dones[i] = done
        self.pos += 1

    @property
    def full(self) -> bool:
        return self.pos >= self.horizon

    def reset(self):
        self.pos = 0

    def compute_advantages(self, bootstrap_value: float, discount: float,
                           lam: float):
        adv = gae(self.rewards, self.values, bootstrap_value, self.dones,
                  discount, lam)
        returns = adv + self.values
        return adv, returns


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float


def ppo_update(buffer: RolloutBuffer, policy: SquashedGaussianPolicy,
               critic: MlpParams, hyper: PpoHyper,
               rng: np.random.Generator,
               bootstrap_value: float,
               logstd_floor: Optional[float] = None,
               lr_scale: float = 1.0) -> UpdateStats:
    """One PPO update over a full rollout buffer."""
    floor = LOGSTD_CLAMP[0] if logstd_floor is None else logstd_floor
    if not buffer.full:
        raise ValueError("rollout buffer not full")
    hyper.validate()
    adv, returns = buffer.compute_advantages(
        bootstrap_value, hyper.discount, hyper.gae_lambda)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    # persistent optimizer state lives on the policy/critic across updates
    if not hasattr(policy, "_opt_state"):
        policy._opt_state = make_optimizer(
            hyper.optimizer, policy.actor.arrays() + [policy.logstd],
            hyper.lr_actor)
    opt_actor = policy._opt_state
    if not hasattr(critic, "_opt_state"):
        critic._opt_state = make_optimizer(
            hyper.optimizer, critic.arrays(), hyper.lr_critic)
    opt_critic = critic._opt_state
    opt_actor.lr = hyper.lr_actor * lr_scale
    opt_critic.lr = hyper.lr_critic * lr_scale

    T = buffer.horizon
    last_pl, last_vl = 0.0, 0.0
    for _ in range(hyper.epochs_per_update):
        order = rng.permutation(T)
        for start in range(0, T, hyper.minibatch):
            idx = order[start:start + hyper.minibatch]
            states = buffer.states[idx]
            raws = buffer.raws[idx]
            a = adv[idx]
            logp_old = buffer.logps[idx]
            B = len(idx)

            mean, cache = forward_cache(policy.actor, states)
            logp_new = policy.log_prob(raws, mean)
            ratio = np.exp(logp_new - logp_old)
            surr = clipped_surrogate(ratio, a, hyper.clip)
            policy_loss = -float(surr.mean())
            if not np.isfinite(policy_loss):
                raise RuntimeError("policy loss diverged (non-finite)")

            # d(objective)/d(logp): active only where the min picks the
            # unclipped branch (ties included)
            clipped = np.clip(ratio, 1 - hyper.clip, 1 + hyper.clip) * a
            active = (ratio * a) <= clipped
            coef = ratio * a * active            # (B,)
            std = np.exp(policy.logstd)
            z = (raws - mean) / std
            # ascend: feed the negated gradient to the descending optimizer
            grad_mean = -(coef[:, None] * (z / std)) / B
            gw, gb, _ = backward(policy.actor, cache, grad_mean)
            grad_logstd = -(coef[:, None] * (z ** 2 - 1.0)).sum(axis=0) / B
            # entropy bonus: d/d(logstd) of the Gaussian entropy is 1
            grad_logstd -= hyper.entropy_coef
            actor_grads = [g for pair in zip(gw, gb) for g in pair] \
                + [grad_logstd]
            clip_grad_norm(actor_grads, hyper.max_grad_norm)
            opt_actor.step(actor_grads)
            np.clip(policy.logstd, floor, LOGSTD_CLAMP[1],
                    out=policy.logstd)

            v, vcache = forward_cache(critic, states)
            err = v[:, 0] - returns[idx]
            value_loss = 0.5 * float((err ** 2).mean())
            if not np.isfinite(value_loss):
                raise RuntimeError("value loss diverged (non-finite)")
            gwc, gbc, _ = backward(critic, vcache, (err / B)[:, None])
            critic_grads = [g for pair in zip(gwc, gbc) for g in pair]
            clip_grad_norm(critic_grads, hyper.max_grad_norm)
            opt_critic.step(critic_grads)

            last_pl, last_vl = policy_loss, value_loss
        if hyper.target_kl > 0:
            mean_all = forward(policy.actor, buffer.states)
            kl = float((buffer.logps
                        - policy.log_prob(buffer.raws, mean_all)).mean())
            if kl > hyper.target_kl:
                break
    for _ in range(hyper.critic_extra_epochs):
        order = rng.permutation(T)
        for start in range(0, T, hyper.minibatch):
            idx = order[start:start + hyper.minibatch]
            B = len(idx)
            v, vcache = forward_cache(critic, buffer.states[idx])
            err = v[:, 0] - returns[idx]
            last_vl = 0.5 * float((err ** 2).mean())
            gwc, gbc, _ = backward(critic, vcache, (err / B)[:, None])
            critic_grads = [g for pair in zip(gwc, gbc) for g in pair]
            clip_grad_norm(critic_grads, hyper.max_grad_norm)
            opt_critic.step(critic_grads)
    return UpdateStats(policy_loss=last_pl, value_loss=last_vl)


class PpoTrainer:
    """Rollout collection plus PPO updates against a minimal env interface:
    env.reset(seed) -> features and env.step(action_vec) -> (features,
    reward, done). Single-threaded and bit-reproducible for a fixed seed."""

    def __init__(self, env, policy: SquashedGaussianPolicy,
                 critic: MlpParams, hyper: PpoHyper, master_seed: int,
                 to_coeffs: Optional[Callable[[np.ndarray], tuple]] = None):
        self.env = env
        self.policy = policy
        self.critic = critic
        self.hyper = hyper
        self.rng = np.random.default_rng(master_seed)
        self.to_coeffs = to_coeffs or (lambda v: tuple(v))
        self._episode = 0

    def _next_episode_seed(self) -> int:
        self._episode += 1
        return int(self.rng.integers(0, 2 ** 62))

    def train(self, total_steps: Optional[int] = None,
              log_path=None) -> List[dict]:
        """Run training; returns (and optionally writes) per-update logs."""
        hyper = self.hyper
        total_steps = total_steps or hyper.total_steps
        obs = self.env.reset(self._next_episode_seed())
        buf = RolloutBuffer(hyper.rollout_horizon, len(obs),
                            self.policy.action_dim)
        logs: List[dict] = []
        log_file = None
        if log_path is not None:
            log_file = open(log_path, "w")
            log_file.write("step,mean_reward,policy_loss,value_loss,"
                           "mean_zeta,mean_kappa,mean_nu\n")
        try:
            step = 0
            while step < total_steps:
                buf.reset()
                while not buf.full:
                    raw, action, logp = self.policy.sample(obs, self.rng)
                    value = float(forward(self.critic, obs)[0])
                    next_obs, reward, done = self.env.step(action)
                    buf.add(obs, raw, action, logp, reward, value, done)
                    obs = self.env.reset(self._next_episode_seed()) if done \
                        else next_obs
                    step += 1
                bootstrap = 0.0 if buf.dones[-1] else float(
                    forward(self.critic, obs)[0])
                progress = min(1.0, step / max(1, total_steps))
                # hold the exploration floor for the first half (cliffs in
                # the reward stay visible while the mean learns to
                # condition), then anneal it away for precise placement
                anneal = max(0.0, 2.0 * progress - 1.0)
                init = np.asarray(hyper.logstd_floor_init, dtype=float)
                floor = init + anneal * (LOGSTD_CLAMP[0] - init)
                scale = 1.0 - progress if hyper.lr_decay else 1.0
                stats = ppo_update(buf, self.policy, self.critic, hyper,
                                   self.rng, bootstrap, logstd_floor=floor,
                                   lr_scale=max(scale, 1e-3))
                coeffs = np.array([self.to_coeffs(a) for a in buf.actions])
                row = {
                    "step": step,
                    "mean_reward": float(buf.rewards.mean()),
                    "policy_loss": stats.policy_loss,
                    "value_loss": stats.value_loss,
                    "mean_zeta": float(coeffs[:, 0].mean()),
                    "mean_kappa": float(coeffs[:, 1].mean()),
                    "mean_nu": float(coeffs[:, 2].mean()),
                }
                logs.append(row)
                if log_file is not None:
                    log_file.write(
                        "%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n" % (
                            row["step"], row["mean_reward"],
                            row["policy_loss"], row["value_loss"],
                            row["mean_zeta"], row["mean_kappa"],
                            row["mean_nu"]))
                    log_file.flush()
        finally:
            if log_file is not None:
                log_file.close()
        return logs


# --- checkpoint format ----------------------------------------------------
# magic (8 bytes) | version (u32 LE) | header length (u64 LE) | JSON header |
# parameter arrays as little-endian float64 in declaration order:
# actor weights/biases, actor logstd, critic weights/biases.

def save_checkpoint(path, policy: SquashedGaussianPolicy, critic: MlpParams,
                    hyper: PpoHyper, meta: Optional[dict] = None):
    meta = dict(meta or {})
    header = {
        "actor_sizes": list(policy.actor.sizes),
        "critic_sizes": list(critic.sizes),
        "action_lo": policy.lo.tolist(),
        "action_hi": policy.hi.tolist(),
        "hyper": asdict(hyper),
        "meta": meta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    arrays = policy.actor.arrays() + [policy.logstd] + critic.arrays()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (policy, critic, hyper, meta)."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        version, = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        hlen, = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        payload = f.read()

    rng = np.random.default_rng(0)  # shapes only; values overwritten below
    actor = init_mlp(header["actor_sizes"], rng)
    critic = init_mlp(header["critic_sizes"], rng)
    policy = SquashedGaussianPolicy(actor, np.array(header["action_lo"]),
                                    np.array(header["action_hi"]))
    arrays = policy.actor.arrays() + [policy.logstd] + critic.arrays()
    pos = 0
    buf = np.frombuffer(payload, dtype="<f8")
    for a in arrays:
        a[...] = buf[pos:pos + a.size].reshape(a.shape)
        pos += a.size
    if pos != buf.size:
        raise ValueError("checkpoint payload size mismatch")
    hyper = PpoHyper(**header["hyper"])
    return policy, critic, hyper, header["meta"]
