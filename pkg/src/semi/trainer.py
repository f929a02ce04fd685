"""Phase-based training loop: collect, score incongruity, align, update.

Each phase collects a fixed number of transitions across parallel env
instances, scores every next observation with the active intrinsic
rewards, then runs one alignment epoch, one epoch for any auxiliary
prediction models, and the clipped policy update. All randomness flows
from one seed through named generator slots, so a run is a pure function
of its configuration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alignment import AlignmentConfig, EncoderBank, NegativePool, perceptual_incongruity_batch
from .alignment import train_alignment
from .checkpoint import save_checkpoint
from .envs import make_env
from .metrics import EpisodeWindow, MetricsWriter, dumps_line, write_json
from .optim import AdamState
from .policy import (
    DiscreteDist,
    GaussianDist,
    PolicyNet,
    TargetPolicy,
    action_incongruity_batch,
    fuse_batch,
    sample_masks,
    sync_target,
)
from .ppo import PpoConfig, RolloutBuffer, ppo_update
from .rewards import (
    ForwardModel,
    RewardSpec,
    RndPair,
    RunningNorm,
    curiosity_reward_batch,
    disagreement_reward_batch,
    encode_actions,
    normalize,
    rnd_reward_batch,
    train_forward_model,
    train_rnd,
)

# Metrics-record field name for each reward component's per-phase mean.
METRIC_NAMES = {
    "semi_p": "r_p_mean",
    "semi_a": "r_a_mean",
    "curiosity": "r_curiosity_mean",
    "disagreement": "r_disagreement_mean",
    "rnd": "r_rnd_mean",
    "extrinsic": "r_extrinsic_mean",
}


@dataclass
class TrainConfig:
    """Run-level settings that sit above the per-module configurations."""

    env: str = "blipgrid-k1"
    seed: int = 0
    total_steps: int = 200_000
    copy_period: int = 2048
    ensemble_size: int = 3
    episode_window: int = 100
    success_threshold: float = 0.8
    min_window_episodes: int = 10
    random_policy: bool = False
    dump_trajectories: bool = False
    deterministic: bool = True
    checkpoint_every: int = 24
    ra_timestep: str = "next"

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if self.copy_period < 1:
            raise ValueError("copy_period must be positive")
        if self.ensemble_size < 2:
            raise ValueError("ensemble_size must be at least 2")
        if not 0.0 < self.success_threshold <= 1.0:
            raise ValueError("success_threshold must lie in (0, 1]")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if self.ra_timestep not in ("next", "current"):
            raise ValueError("ra_timestep must be 'next' or 'current'")


class Trainer:
    """Owns the envs, the encoder bank, the policy, and all reward models."""

    def __init__(
        self,
        cfg: TrainConfig,
        reward: RewardSpec,
        ppo: PpoConfig | None = None,
        align: AlignmentConfig | None = None,
        out_dir=None,
    ):
        self.cfg = cfg
        self.reward = reward
        self.ppo = ppo if ppo is not None else PpoConfig()
        self.align = align if align is not None else AlignmentConfig()
        if cfg.total_steps < self.ppo.steps_per_phase:
            raise ValueError("total_steps must cover at least one phase")
        self.out_dir = Path(out_dir) if out_dir is not None else None

        seeds = np.random.SeedSequence(cfg.seed).generate_state(8)
        world_seed = int(seeds[0])
        self.envs = [make_env(cfg.env, world_seed) for _ in range(self.ppo.num_envs)]
        self.spec = self.envs[0].spec
        self.rng_rollout = np.random.default_rng(int(seeds[1]))
        self.rng_update = np.random.default_rng(int(seeds[2]))
        rng_enc = np.random.default_rng(int(seeds[3]))
        rng_policy = np.random.default_rng(int(seeds[4]))
        rng_models = np.random.default_rng(int(seeds[5]))

        self.bank = EncoderBank(self.spec.modality_widths, self.align, rng_enc)
        self.policy = PolicyNet(self.align.feature_dim, self.spec.action_space, rng=rng_policy)
        self.policy_opt = AdamState(lr=self.ppo.lr)

        self.pool = NegativePool(self.align.pool_size, self.align.pool_warmup) \
            if reward.has("semi_p") else None
        self.target = TargetPolicy(self.policy, cfg.copy_period) \
            if reward.has("semi_a") else None
        self.align_opt = AdamState(lr=self.align.lr) if reward.needs_alignment else None

        act_width = self.spec.action_space.n
        dim = self.align.feature_dim
        self.forward_model = None
        self.forward_opt = None
        if reward.has("curiosity"):
            self.forward_model = ForwardModel(dim, act_width, rng_models)
            self.forward_opt = AdamState(lr=self.ppo.lr)
        self.ensemble = None
        self.ensemble_opts = None
        if reward.has("disagreement"):
            self.ensemble = [ForwardModel(dim, act_width, rng_models)
                             for _ in range(cfg.ensemble_size)]
            self.ensemble_opts = [AdamState(lr=self.ppo.lr) for _ in self.ensemble]
        self.rnd = None
        self.rnd_opt = None
        if reward.has("rnd"):
            self.rnd = RndPair(sum(self.spec.modality_widths), rng_models)
            self.rnd_opt = AdamState(lr=self.ppo.lr)

        self.norms = {c: RunningNorm() for c in reward.components if c != "extrinsic"}
        if reward.has("extrinsic") and reward.normalize_extrinsic:
            self.norms["extrinsic"] = RunningNorm()

        self.window = EpisodeWindow(cfg.episode_window)
        self.total_steps_done = 0
        self.steps_to_threshold = None
        self._episode_counters = [0] * self.ppo.num_envs
        self._ep_return = np.zeros(self.ppo.num_envs)
        self._ep_length = np.zeros(self.ppo.num_envs, dtype=int)
        self._ep_interacted = np.zeros(self.ppo.num_envs, dtype=bool)
        self._feats = None
        self._traj_fh = None

    # -- seeding ---------------------------------------------------------

    def _next_episode_seed(self, env_index: int) -> int:
        seed = self._episode_counters[env_index] * self.ppo.num_envs + env_index
        self._episode_counters[env_index] += 1
        return seed

    def _reset_env(self, env_index: int) -> None:
        obs = self.envs[env_index].reset(episode_seed=self._next_episode_seed(env_index))
        self._feats[env_index] = np.stack(self.bank.encode(obs))
        self._ep_return[env_index] = 0.0
        self._ep_length[env_index] = 0
        self._ep_interacted[env_index] = False

    # -- action sampling -------------------------------------------------

    def _sample_actions(self, z_masked: np.ndarray):
        """Per-row action, log-prob from the live policy (or uniform random)."""
        num = z_masked.shape[0]
        space = self.spec.action_space
        if self.cfg.random_policy:
            if space.kind == "discrete":
                actions = [int(self.rng_rollout.integers(space.n)) for _ in range(num)]
                log_probs = [-np.log(space.n)] * num
            else:
                actions = [self.rng_rollout.uniform(-1.0, 1.0, size=space.n)
                           for _ in range(num)]
                log_probs = [-space.n * np.log(2.0)] * num
            return actions, np.asarray(log_probs, dtype=np.float64)
        out, _ = self.policy.forward(z_masked)
        actions, log_probs = [], []
        if space.kind == "discrete":
            for row in out:
                dist = DiscreteDist(row)
                a = dist.sample(self.rng_rollout)
                actions.append(a)
                log_probs.append(dist.log_prob(a))
        else:
            std = np.exp(self.policy.log_std())
            for row in out:
                dist = GaussianDist(row, std)
                a = dist.sample(self.rng_rollout)
                actions.append(a)
                log_probs.append(dist.log_prob(a))
        return actions, np.asarray(log_probs, dtype=np.float64)

    # -- one collection phase -------------------------------------------

    def _collect_phase(self, phase_index: int):
        num_envs = self.ppo.num_envs
        steps = self.ppo.steps_per_env
        dim = self.align.feature_dim
        num_mod = self.bank.num_modalities
        buf = RolloutBuffer(num_envs, steps, dim, self.spec.action_space)
        z_next_full = np.zeros((num_envs, steps, dim))
        stream_store = [np.zeros((steps * num_envs, w)) for w in self.spec.modality_widths]
        raw_means = {c: 0.0 for c in ("semi_p", "semi_a", "curiosity",
                                      "disagreement", "rnd", "extrinsic")}
        reward_sum = 0.0

        for t in range(steps):
            masks = sample_masks(self.rng_rollout, num_mod, num_envs)
            z_masked = fuse_batch(self._feats, masks)
            z_full = self._feats.mean(axis=1)
            _, values = self.policy.forward(z_full)
            actions, log_probs = self._sample_actions(z_masked)

            results = [self.envs[v].step(actions[v]) for v in range(num_envs)]
            next_streams = [
                np.stack([results[v].obs.streams[m] for v in range(num_envs)])
                for m in range(num_mod)
            ]
            feats_next = self.bank.encode_batch(next_streams)  # (V, M, D)
            for m in range(num_mod):
                stream_store[m][t * num_envs : (t + 1) * num_envs] = next_streams[m]

            raw = {}
            if self.reward.has("semi_p"):
                raw["semi_p"] = perceptual_incongruity_batch(
                    self.bank, feats_next, self.pool, self.align)
            if self.reward.has("semi_a"):
                ra_feats = feats_next if self.cfg.ra_timestep == "next" else self._feats
                raw["semi_a"] = action_incongruity_batch(self.target, ra_feats)
            if self.reward.has("curiosity") or self.reward.has("disagreement"):
                a_enc = encode_actions(
                    [actions[v] for v in range(num_envs)],
                    self.spec.action_space.kind, self.spec.action_space.n,
                )
            zf_next = feats_next.mean(axis=1)
            if self.reward.has("curiosity"):
                raw["curiosity"] = curiosity_reward_batch(self.forward_model, z_full, a_enc, zf_next)
            if self.reward.has("disagreement"):
                raw["disagreement"] = disagreement_reward_batch(self.ensemble, z_full, a_enc)
            if self.reward.has("rnd"):
                raw["rnd"] = rnd_reward_batch(self.rnd, np.concatenate(next_streams, axis=1))

            mask_codes = masks @ (1 << np.arange(num_mod))
            for v in range(num_envs):
                res = results[v]
                r_total = 0.0
                for comp in self.reward.components:
                    if comp == "extrinsic":
                        continue
                    value = raw[comp]
                    value = 0.0 if value is None else float(value[v])
                    raw_means[comp] += value
                    if self.reward.normalize_intrinsic and not (comp == "semi_p" and raw[comp] is None):
                        value = normalize(self.norms[comp], value)
                    weight = self.reward.gamma_weight if comp == "semi_a" else 1.0
                    r_total += weight * value
                if self.reward.has("extrinsic"):
                    raw_means["extrinsic"] += res.reward
                    r_ext = res.reward
                    if self.reward.normalize_extrinsic:
                        r_ext = normalize(self.norms["extrinsic"], r_ext)
                    r_total += self.reward.beta_weight * r_ext
                buf.store(v, t, z_masked[v], z_full[v], actions[v], log_probs[v],
                          float(values[v]), r_total, res.done, int(mask_codes[v]))
                z_next_full[v, t] = zf_next[v]
                reward_sum += r_total

                if self._traj_fh is not None:
                    r_p_rec = 0.0
                    if self.reward.has("semi_p") and raw["semi_p"] is not None:
                        r_p_rec = float(raw["semi_p"][v])
                    r_a_rec = float(raw["semi_a"][v]) if self.reward.has("semi_a") else 0.0
                    self._traj_fh.write(dumps_line({
                        "phase": phase_index, "t": t, "env": v,
                        "obs": [s.tolist() for s in res.obs.streams],
                        "action": actions[v],
                        "mask": int(mask_codes[v]),
                        "r_p": r_p_rec, "r_a": r_a_rec, "r_e": res.reward,
                        "done": bool(res.done), "interact": bool(res.interact),
                    }) + "\n")

            if self.pool is not None:
                for v in range(num_envs):
                    self.pool.push(results[v].obs)

            self._feats = feats_next
            for v in range(num_envs):
                res = results[v]
                self._ep_return[v] += res.reward
                self._ep_length[v] += 1
                self._ep_interacted[v] |= res.interact
                if res.done:
                    self.window.add(self._ep_return[v], self._ep_length[v],
                                    self._ep_interacted[v], res.success)
                    self._reset_env(v)

        self.total_steps_done += steps * num_envs
        count = steps * num_envs
        phase_stats = {METRIC_NAMES[c]: raw_means[c] / count for c in raw_means}
        phase_stats["reward_mean"] = reward_sum / count
        return buf, z_next_full, stream_store, phase_stats

    # -- phase-end training ---------------------------------------------

    def _train_alignment_epoch(self, stream_store) -> float:
        count = stream_store[0].shape[0]
        order = self.rng_update.permutation(count)
        losses = []
        for start in range(0, count, self.align.batch_size):
            idx = order[start : start + self.align.batch_size]
            if idx.size < 2:
                continue
            batch = [s[idx] for s in stream_store]
            losses.append(train_alignment(self.bank, batch, self.align, self.align_opt))
        return float(np.mean(losses)) if losses else 0.0

    def _train_aux_models(self, buf: RolloutBuffer, z_next_full, stream_store) -> dict:
        out = {}
        if self.forward_model is None and self.ensemble is None and self.rnd is None:
            return out
        n = self.ppo.num_envs * self.ppo.steps_per_env
        z = buf.z_full.reshape(n, -1)
        z_next = z_next_full.reshape(n, -1)
        actions = buf.actions.reshape(n) if buf.actions.ndim == 2 else buf.actions.reshape(n, -1)
        a_enc = encode_actions(actions, self.spec.action_space.kind, self.spec.action_space.n)
        if self.forward_model is not None:
            out["curiosity_loss"] = train_forward_model(
                self.forward_model, z, a_enc, z_next, self.forward_opt, self.rng_update)
        if self.ensemble is not None:
            losses = [
                train_forward_model(model, z, a_enc, z_next, opt, self.rng_update)
                for model, opt in zip(self.ensemble, self.ensemble_opts)
            ]
            out["disagreement_loss"] = float(np.mean(losses))
        if self.rnd is not None:
            x = np.concatenate(stream_store, axis=1)
            out["rnd_loss"] = train_rnd(self.rnd, x, self.rnd_opt, self.rng_update)
        return out

    # -- checkpoints -----------------------------------------------------

    def _checkpoint_sections(self) -> dict:
        sections = {"encoders": self.bank.params, "policy": self.policy.params}
        if self.target is not None:
            sections["target"] = self.target.net.params
        return sections

    def _save_phase_checkpoint(self, phase_index: int) -> None:
        ckpt_dir = self.out_dir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(
            str(ckpt_dir / f"phase_{phase_index:04d}"),
            self._checkpoint_sections(),
            {"phase": phase_index, "steps": self.total_steps_done},
        )

    # -- main loop -------------------------------------------------------

    def run(self) -> dict:
        # round up so the run reaches at least the requested step count
        phases = -(-self.cfg.total_steps // self.ppo.steps_per_phase)
        writer = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            writer = MetricsWriter(self.out_dir / "metrics.jsonl")
            if self.cfg.dump_trajectories:
                self._traj_fh = open(self.out_dir / "trajectories.jsonl", "w",
                                     encoding="utf-8")
        started = time.monotonic()
        try:
            self._feats = np.zeros(
                (self.ppo.num_envs, self.bank.num_modalities, self.align.feature_dim))
            for v in range(self.ppo.num_envs):
                self._reset_env(v)
            for phase in range(phases):
                phase_started = time.monotonic()
                if self.out_dir is not None and (
                        self.cfg.dump_trajectories
                        or (self.cfg.checkpoint_every
                            and phase % self.cfg.checkpoint_every == 0)):
                    self._save_phase_checkpoint(phase)
                buf, z_next_full, stream_store, stats = self._collect_phase(phase)
                _, last_values = self.policy.forward(self._feats.mean(axis=1))
                buf.finish(last_values, self.ppo.discount, self.ppo.gae_lambda)

                if self.align_opt is not None:
                    stats["align_loss"] = self._train_alignment_epoch(stream_store)
                stats.update(self._train_aux_models(buf, z_next_full, stream_store))
                if not self.cfg.random_policy:
                    stats.update(ppo_update(self.policy, buf, self.ppo,
                                            self.policy_opt, self.rng_update))
                if self.target is not None:
                    self.target.steps_since_sync += self.ppo.steps_per_phase
                    if self.target.due():
                        sync_target(self.policy, self.target)

                stats.update({
                    "phase": phase,
                    "step": self.total_steps_done,
                    "episodes": self.window.count,
                    "interaction_rate": self.window.interaction_rate,
                    "success_rate": self.window.success_rate,
                    "episode_return_mean": self.window.mean_return,
                    "episode_len_mean": self.window.mean_length,
                    "wall_clock": (None if self.cfg.deterministic
                                   else round(time.monotonic() - phase_started, 6)),
                })
                if (self.steps_to_threshold is None
                        and len(self.window) >= self.cfg.min_window_episodes
                        and self.window.success_rate >= self.cfg.success_threshold):
                    self.steps_to_threshold = self.total_steps_done
                if writer is not None:
                    writer.write(stats)
        except Exception:
            if self.out_dir is not None:
                try:
                    save_checkpoint(
                        str(self.out_dir / "checkpoint_abort"),
                        self._checkpoint_sections(),
                        {"steps": self.total_steps_done, "env": self.cfg.env},
                    )
                except Exception:
                    pass
            raise
        finally:
            if writer is not None:
                writer.close()
            if self._traj_fh is not None:
                self._traj_fh.close()
                self._traj_fh = None

        summary = {
            "env": self.cfg.env,
            "seed": self.cfg.seed,
            "total_steps": self.total_steps_done,
            "phases": phases,
            "episodes": self.window.count,
            "interaction_rate": self.window.interaction_rate,
            "success_rate": self.window.success_rate,
            "best_episode_return": self.window.best_return,
            "steps_to_threshold": self.steps_to_threshold,
            "elapsed_seconds": round(time.monotonic() - started, 3),
        }
        if self.out_dir is not None:
            save_checkpoint(str(self.out_dir / "checkpoint"), self._checkpoint_sections(),
                            {"steps": self.total_steps_done, "env": self.cfg.env})
            write_json(self.out_dir / "summary.json", summary)
        return summary
