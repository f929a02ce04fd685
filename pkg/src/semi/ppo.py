"""Clipped-surrogate policy optimization over fused multisensory features.

The actor is optimized on the dropout-masked fused features each action
was sampled from; the critic always sees the full-modality fusion. Both
are stored in the rollout buffer at collection time, so updates never
touch the encoders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .net import collect_grads
from .optim import AdamState, adam_step, clip_global_norm
from .policy import ActionSpace, PolicyNet

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PpoConfig:
    """Hyperparameters for one policy-update cycle."""

    steps_per_phase: int = 2048
    num_envs: int = 8
    discount: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    epochs: int = 4
    minibatches: int = 8
    lr: float = 3e-4
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    max_grad_norm: float = 0.5
    normalize_advantage: bool = True

    def __post_init__(self):
        if self.num_envs < 1 or self.steps_per_phase < 1:
            raise ValueError("steps_per_phase and num_envs must be positive")
        if self.steps_per_phase % self.num_envs != 0:
            raise ValueError("steps_per_phase must divide evenly across env instances")
        if self.steps_per_phase % self.minibatches != 0:
            raise ValueError("steps_per_phase must divide evenly into minibatches")
        if not 0.0 <= self.discount <= 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("discount and gae_lambda must lie in [0, 1]")
        if self.clip_ratio <= 0.0:
            raise ValueError("clip_ratio must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")

    @property
    def steps_per_env(self) -> int:
        return self.steps_per_phase // self.num_envs


def compute_gae(rewards, values, dones, last_values, discount: float, gae_lambda: float):
    """Generalized advantage estimates and value targets.

    Arrays are (num_envs, T) with time on the last axis (a single 1-D
    series is promoted); ``last_values`` holds the bootstrap value of the
    state after the final stored transition of each instance. A done flag
    at step t cuts both the bootstrap and the advantage recursion.
    Returns (advantages, returns) shaped like ``rewards``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    one_dim = rewards.ndim == 1
    rewards = np.atleast_2d(rewards)
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    dones = np.atleast_2d(np.asarray(dones)).astype(np.float64)
    last_values = np.atleast_1d(np.asarray(last_values, dtype=np.float64))
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError("rewards, values, and dones must share one shape")
    if last_values.shape != (rewards.shape[0],):
        raise ValueError("last_values must hold one bootstrap per env instance")
    num_envs, horizon = rewards.shape
    advantages = np.zeros_like(rewards)
    carry = np.zeros(num_envs)
    for t in range(horizon - 1, -1, -1):
        nonterminal = 1.0 - dones[:, t]
        next_values = values[:, t + 1] if t + 1 < horizon else last_values
        delta = rewards[:, t] + discount * next_values * nonterminal - values[:, t]
        carry = delta + discount * gae_lambda * nonterminal * carry
        advantages[:, t] = carry
    returns = advantages + values
    if one_dim:
        return advantages[0], returns[0]
    return advantages, returns


class RolloutBuffer:
    """Fixed-size store for one collection phase, (instance, step) indexed.

    Holds the masked fused feature each action was sampled at, the
    full-modality fusion for the critic, and everything the update needs
    to replay the decision. ``finish`` computes advantages; ``flat``
    exposes instance-major flattened views.
    """

    def __init__(self, num_envs: int, steps_per_env: int, feature_dim: int, space: ActionSpace):
        self.num_envs = num_envs
        self.steps_per_env = steps_per_env
        self.space = space
        shape = (num_envs, steps_per_env)
        self.z_masked = np.zeros(shape + (feature_dim,))
        self.z_full = np.zeros(shape + (feature_dim,))
        if space.kind == "discrete":
            self.actions = np.zeros(shape, dtype=np.int64)
        else:
            self.actions = np.zeros(shape + (space.n,))
        self.log_probs = np.zeros(shape)
        self.values = np.zeros(shape)
        self.rewards = np.zeros(shape)
        self.dones = np.zeros(shape, dtype=bool)
        self.mask_codes = np.zeros(shape, dtype=np.int64)
        self.advantages = None
        self.returns = None

    def store(self, env, t, z_masked, z_full, action, log_prob, value, reward, done, mask_code):
        self.z_masked[env, t] = z_masked
        self.z_full[env, t] = z_full
        self.actions[env, t] = action
        self.log_probs[env, t] = log_prob
        self.values[env, t] = value
        self.rewards[env, t] = reward
        self.dones[env, t] = done
        self.mask_codes[env, t] = mask_code

    def finish(self, last_values, discount: float, gae_lambda: float) -> None:
        self.advantages, self.returns = compute_gae(
            self.rewards, self.values, self.dones, last_values, discount, gae_lambda
        )

    def flat(self) -> dict:
        if self.advantages is None:
            raise ValueError("finish() must run before flattening")
        n = self.num_envs * self.steps_per_env
        return {
            "z_masked": self.z_masked.reshape(n, -1),
            "z_full": self.z_full.reshape(n, -1),
            "actions": self.actions.reshape(n, -1) if self.actions.ndim == 3 else self.actions.reshape(n),
            "log_probs": self.log_probs.reshape(n),
            "advantages": self.advantages.reshape(n),
            "returns": self.returns.reshape(n),
        }


def ppo_loss_graph(
    policy: PolicyNet,
    z_masked: np.ndarray,
    z_full: np.ndarray,
    actions: np.ndarray,
    log_probs_old: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    cfg: PpoConfig,
    nodes: dict,
):
    """Clipped-surrogate + value + entropy loss as a differentiable graph.

    Returns (loss node, diagnostics dict). Parameter nodes are shared
    between the actor pass (masked features) and the critic pass (full
    features) through ``nodes``.
    """
    batch = z_masked.shape[0]
    out, _ = policy.forward(z_masked, nodes=nodes)
    _, value = policy.forward(z_full, nodes=nodes)

    if policy.space.kind == "discrete":
        lse = ad.logsumexp(out)
        picked = ad.gather2d(out, np.arange(batch), actions)
        log_probs_new = ad.sub(picked, lse)
        probs = ad.softmax(out)
        entropy = ad.mean(ad.sub(lse, ad.sum_(ad.mul(probs, out), axis=1)))
    else:
        log_std = policy.log_std(nodes=nodes)
        inv_std = ad.exp(ad.neg(log_std))
        normalized = ad.mul(ad.sub(actions, out), inv_std)
        quad = ad.sum_(ad.square(normalized), axis=1)
        log_norm = ad.add(ad.sum_(log_std), 0.5 * policy.space.n * LOG_2PI)
        log_probs_new = ad.neg(ad.add(ad.mul(quad, 0.5), log_norm))
        entropy = ad.add(ad.sum_(log_std), 0.5 * policy.space.n * (1.0 + LOG_2PI))

    ratio = ad.exp(ad.sub(log_probs_new, log_probs_old))
    surrogate = ad.minimum(
        ad.mul(ratio, advantages),
        ad.mul(ad.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio), advantages),
    )
    policy_loss = ad.neg(ad.mean(surrogate))
    value_loss = ad.mean(ad.square(ad.sub(value, returns)))
    loss = ad.add(
        policy_loss,
        ad.sub(ad.mul(cfg.vf_coef, value_loss), ad.mul(cfg.ent_coef, entropy)),
    )
    ratio_values = ratio.value
    info = {
        "ratio": ratio_values,
        "policy_loss": float(policy_loss.value),
        "value_loss": float(value_loss.value),
        "entropy": float(entropy.value),
        "clip_fraction": float(np.mean(np.abs(ratio_values - 1.0) > cfg.clip_ratio)),
        "approx_kl": float(np.mean(log_probs_old - log_probs_new.value)),
    }
    return loss, info


def ppo_update(
    policy: PolicyNet,
    buffer: RolloutBuffer,
    cfg: PpoConfig,
    opt: AdamState,
    rng: np.random.Generator,
) -> dict:
    """Run the full epoch/minibatch schedule on one finished buffer.

    Advantages are normalized across the whole buffer before the first
    epoch. Returns mean diagnostics over all minibatch steps.
    """
    data = buffer.flat()
    advantages = data["advantages"]
    if not all(np.all(np.isfinite(np.asarray(v, dtype=np.float64))) for v in data.values()):
        raise ValueError("rollout buffer contains non-finite values")
    if cfg.normalize_advantage:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
    n = advantages.shape[0]
    batch = n // cfg.minibatches
    totals = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
              "clip_fraction": 0.0, "approx_kl": 0.0, "grad_norm": 0.0}
    steps = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for k in range(cfg.minibatches):
            idx = order[k * batch : (k + 1) * batch]
            nodes: dict = {}
            loss, info = ppo_loss_graph(
                policy,
                data["z_masked"][idx],
                data["z_full"][idx],
                data["actions"][idx],
                data["log_probs"][idx],
                advantages[idx],
                data["returns"][idx],
                cfg,
                nodes,
            )
            ad.backward(loss)
            grads = collect_grads(nodes, policy.params)
            totals["grad_norm"] += clip_global_norm(grads, cfg.max_grad_norm)
            adam_step(policy.params, grads, opt)
            for key in ("policy_loss", "value_loss", "entropy", "clip_fraction", "approx_kl"):
                totals[key] += info[key]
            steps += 1
    return {key: value / steps for key, value in totals.items()}
