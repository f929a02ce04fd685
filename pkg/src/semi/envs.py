"""Desk-scale multisensory environments and the interaction-rate metric.

BlipGrid is a grid world whose audio channel carries an object-specific
tone whenever the agent is on or next to an object; SparseGoal is a
continuous pushing task with sparse 0/-1 reward. Both expose several
flat sensory streams per step so cross-modal structure, not raw-signal
fidelity, is what a learner must pick up. Two BlipGrid variants
reproduce known failure modes: audio constant on every step, and a
single shared tone carrying no object identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import MultiObs
from .policy import ActionSpace


@dataclass(frozen=True)
class EnvSpec:
    """Static description of an environment's interface."""

    name: str
    modality_widths: tuple[int, ...]
    action_space: ActionSpace
    horizon: int
    params: tuple[tuple[str, float], ...] = ()


@dataclass
class StepResult:
    """One transition: next observation plus reward and flags."""

    obs: MultiObs
    reward: float
    done: bool
    interact: bool
    success: bool


class BlipGrid:
    """Grid world with event-triggered audio.

    The visual stream is a flattened 5x5 occupancy patch centered on the
    agent, one 25-cell channel for out-of-bounds plus one per object
    (channel-major layout). The audio stream is an object's fixed
    unit-norm tone plus Gaussian noise whenever the agent is on or
    4-adjacent to it (lowest object index wins if several), otherwise
    pure noise. Extrinsic reward is identically zero.

    ``audio_mode`` selects the failure-mode variants: "event" is the
    base behavior, "constant" plays one fixed tone every step, "shared"
    plays one identity-free tone on any interaction.
    """

    PATCH_RADIUS = 2
    ACTIONS = ("up", "down", "left", "right", "stay")

    def __init__(
        self,
        seed: int,
        grid_size: int = 8,
        num_objects: int = 1,
        audio_dim: int = 16,
        noise_sigma: float = 0.05,
        horizon: int = 64,
        audio_mode: str = "event",
    ):
        if grid_size < 4:
            raise ValueError("grid_size must be >= 4")
        if not 1 <= num_objects <= grid_size:
            raise ValueError("num_objects must be in 1..grid_size")
        if audio_mode not in ("event", "constant", "shared"):
            raise ValueError(f"unknown audio_mode {audio_mode!r}")
        self.seed = seed
        self.grid_size = grid_size
        self.num_objects = num_objects
        self.audio_dim = audio_dim
        self.noise_sigma = noise_sigma
        self.horizon = horizon
        self.audio_mode = audio_mode
        master = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        # one tone per object plus one spare for the variant modes
        tones = master.normal(size=(num_objects + 1, audio_dim))
        self.tones = tones / np.linalg.norm(tones, axis=1, keepdims=True)
        side = 2 * self.PATCH_RADIUS + 1
        self.spec = EnvSpec(
            name="blipgrid",
            modality_widths=(side * side * (num_objects + 1), audio_dim),
            action_space=ActionSpace("discrete", 5),
            horizon=horizon,
            params=(
                ("grid_size", grid_size),
                ("num_objects", num_objects),
                ("noise_sigma", noise_sigma),
            ),
        )
        self._episode_index = 0
        self.agent: tuple[int, int] = (0, 0)
        self.objects: list[tuple[int, int]] = []
        self._t = 0
        self._rng = master

    def reset(self, episode_seed: int | None = None) -> MultiObs:
        if episode_seed is None:
            episode_seed = self._episode_index
        self._episode_index += 1
        self._rng = np.random.default_rng(np.random.SeedSequence([self.seed, 1, episode_seed]))
        g = self.grid_size
        cells = self._rng.choice(g * g, size=self.num_objects + 1, replace=False)
        self.objects = [(int(c // g), int(c % g)) for c in cells[:-1]]
        self.agent = (int(cells[-1] // g), int(cells[-1] % g))
        self._t = 0
        return self._observe()[0]

    def step(self, action: int) -> StepResult:
        action = int(action)
        if not 0 <= action < 5:
            raise ValueError(f"action {action} out of range for {self.ACTIONS}")
        r, c = self.agent
        dr, dc = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))[action]
        g = self.grid_size
        self.agent = (min(max(r + dr, 0), g - 1), min(max(c + dc, 0), g - 1))
        self._t += 1
        obs, interact = self._observe()
        done = self._t >= self.horizon
        return StepResult(obs=obs, reward=0.0, done=done, interact=interact, success=False)

    def _touching(self) -> int | None:
        """Lowest index of an object the agent is on or 4-adjacent to."""
        ar, ac = self.agent
        for k, (orr, oc) in enumerate(self.objects):
            if abs(ar - orr) + abs(ac - oc) <= 1:
                return k
        return None

    def _observe(self) -> tuple[MultiObs, bool]:
        rad = self.PATCH_RADIUS
        side = 2 * rad + 1
        g = self.grid_size
        ar, ac = self.agent
        patch = np.zeros((self.num_objects + 1, side, side))
        obj_at = {pos: k for k, pos in enumerate(self.objects)}
        for dy in range(-rad, rad + 1):
            for dx in range(-rad, rad + 1):
                y, x = ar + dy, ac + dx
                cy, cx = dy + rad, dx + rad
                if not (0 <= y < g and 0 <= x < g):
                    patch[0, cy, cx] = 1.0
                else:
                    k = obj_at.get((y, x))
                    if k is not None:
                        patch[k + 1, cy, cx] = 1.0
        touching = self._touching()
        interact = touching is not None
        noise = self._rng.normal(scale=self.noise_sigma, size=self.audio_dim)
        if self.audio_mode == "constant":
            audio = self.tones[-1] + noise
        elif self.audio_mode == "shared":
            audio = self.tones[-1] + noise if interact else noise
        else:
            audio = self.tones[touching] + noise if interact else noise
        obs = MultiObs((patch.ravel(), audio), t=self._t)
        return obs, interact


def blipgrid_make(
    seed: int,
    grid_size: int = 8,
    num_objects: int = 1,
    audio_dim: int = 16,
    noise_sigma: float = 0.05,
    horizon: int = 64,
) -> BlipGrid:
    return BlipGrid(seed, grid_size, num_objects, audio_dim, noise_sigma, horizon)


def constant_tone_variant(env: BlipGrid) -> BlipGrid:
    """Same world, but the audio plays one fixed tone on every step."""
    if env.audio_dim < 1:
        raise ValueError("base env has no audio modality")
    env.audio_mode = "constant"
    return env


def trivial_assoc_variant(env: BlipGrid) -> BlipGrid:
    """Same world, but every interaction plays the same identity-free tone."""
    if env.audio_dim < 1:
        raise ValueError("base env has no audio modality")
    env.audio_mode = "shared"
    return env


class SparseGoal:
    """Continuous block-pushing with sparse 0/-1 reward.

    A point-mass agent accelerates in the unit square (velocity damping
    0.9); overlapping the block pushes it. Reward is 0 when the block is
    within ``tol`` of the goal, -1 otherwise; the episode ends on
    success or at the horizon. Modalities: proprioception (position +
    velocity), vision (block and goal relative to the agent), and a
    2-way touch indicator.
    """

    DAMPING = 0.9
    ACCEL = 0.015
    CONTACT_RADIUS = 0.08
    MIN_SEPARATION = 0.2

    def __init__(self, seed: int, tol: float = 0.1, horizon: int = 100):
        if tol <= 0:
            raise ValueError("tolerance must be positive")
        self.seed = seed
        self.tol = tol
        self.horizon = horizon
        self.spec = EnvSpec(
            name="sparsegoal",
            modality_widths=(4, 4, 2),
            action_space=ActionSpace("continuous", 2),
            horizon=horizon,
            params=(("tol", tol),),
        )
        self._episode_index = 0
        self._rng = np.random.default_rng(seed)
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.block = np.zeros(2)
        self.goal = np.zeros(2)
        self._t = 0
        self._touching = False

    def reset(self, episode_seed: int | None = None) -> MultiObs:
        if episode_seed is None:
            episode_seed = self._episode_index
        self._episode_index += 1
        self._rng = np.random.default_rng(np.random.SeedSequence([self.seed, 1, episode_seed]))
        while True:
            pts = self._rng.uniform(0.1, 0.9, size=(3, 2))
            d01 = np.linalg.norm(pts[0] - pts[1])
            d02 = np.linalg.norm(pts[0] - pts[2])
            d12 = np.linalg.norm(pts[1] - pts[2])
            if min(d01, d02, d12) >= self.MIN_SEPARATION:
                break
        self.pos, self.block, self.goal = pts[0].copy(), pts[1].copy(), pts[2].copy()
        self.vel = np.zeros(2)
        self._t = 0
        self._touching = False
        return self._observe()

    def step(self, action) -> StepResult:
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -1.0, 1.0)
        self.vel = self.DAMPING * self.vel + self.ACCEL * a
        self.pos = np.clip(self.pos + self.vel, 0.0, 1.0)
        delta = self.block - self.pos
        dist = float(np.linalg.norm(delta))
        self._touching = dist < self.CONTACT_RADIUS
        if self._touching:
            direction = delta / dist if dist > 1e-9 else self._rng.normal(size=2)
            direction = direction / np.linalg.norm(direction)
            self.block = np.clip(self.block + (self.CONTACT_RADIUS - dist) * direction, 0.0, 1.0)
        self._t += 1
        success = bool(np.linalg.norm(self.block - self.goal) < self.tol)
        reward = 0.0 if success else -1.0
        done = success or self._t >= self.horizon
        return StepResult(
            obs=self._observe(),
            reward=reward,
            done=done,
            interact=self._touching,
            success=success,
        )

    def _observe(self) -> MultiObs:
        proprio = np.concatenate([self.pos, self.vel])
        vision = np.concatenate([self.block - self.pos, self.goal - self.pos])
        touch = np.array([1.0, 0.0]) if self._touching else np.array([0.0, 1.0])
        return MultiObs((proprio, vision, touch), t=self._t)


def sparsegoal_make(seed: int, tol: float = 0.1, horizon: int = 100) -> SparseGoal:
    return SparseGoal(seed, tol=tol, horizon=horizon)


class ScriptedPusher:
    """Oracle controller: circle behind the block, then push it toward the goal.

    Inverse-dynamics steering: each step it picks a desired velocity and
    solves ``a = (v_des - damping * vel) / accel_scale`` so the commanded
    velocity is reached in a single step (clipped to the action box).  A
    hysteresis latch keeps it in the slow push once lined up, which stops
    the agent oscillating around the contact point.  Reads env state
    directly; used as a sanity oracle for the physics, not by any learner.
    """

    APPROACH_CAP = 0.1
    PUSH_SPEED = 0.02

    def __init__(self) -> None:
        self.pushing = False

    def reset(self) -> None:
        self.pushing = False

    def __call__(self, env: SparseGoal) -> np.ndarray:
        rc = env.CONTACT_RADIUS
        to_goal = env.goal - env.block
        dist_goal = np.linalg.norm(to_goal)
        if dist_goal < 1e-9:
            return np.zeros(2)
        push_dir = to_goal / dist_goal
        stand = env.block - push_dir * rc * 1.1
        near_stand = np.linalg.norm(env.pos - stand) < rc * 0.5
        aligned = (env.pos - env.block) @ push_dir < -rc * 0.4
        if not self.pushing and near_stand and aligned:
            self.pushing = True
        if self.pushing and not aligned:
            self.pushing = False
        if self.pushing:
            v_des = push_dir * self.PUSH_SPEED
        else:
            to_stand = stand - env.pos
            dist_stand = np.linalg.norm(to_stand)
            if dist_stand < 1e-9:
                v_des = np.zeros(2)
            else:
                speed = min(self.APPROACH_CAP, 0.5 * dist_stand)
                v_des = to_stand / dist_stand * speed
        accel = (v_des - env.DAMPING * env.vel) / env.ACCEL
        return np.clip(accel, -1.0, 1.0)


ENV_PRESETS = {
    "blipgrid-k1": lambda seed: blipgrid_make(seed, num_objects=1),
    "blipgrid-k3": lambda seed: blipgrid_make(seed, num_objects=3),
    "sparsegoal": lambda seed: sparsegoal_make(seed),
    "blipgrid-k1-consttone": lambda seed: constant_tone_variant(blipgrid_make(seed, num_objects=1)),
    "blipgrid-k1-trivial": lambda seed: trivial_assoc_variant(blipgrid_make(seed, num_objects=1)),
}


def make_env(preset: str, seed: int):
    try:
        factory = ENV_PRESETS[preset]
    except KeyError:
        raise ValueError(
            f"unknown env preset {preset!r}; available: {', '.join(sorted(ENV_PRESETS))}"
        ) from None
    return factory(seed)


def interaction_rate(episode_logs) -> float:
    """Fraction of episodes containing at least one interaction step."""
    episodes = list(episode_logs)
    if not episodes:
        raise ValueError("interaction_rate requires at least one episode")
    hits = 0
    for ep in episodes:
        flags = list(ep) if not isinstance(ep, (bool, np.bool_)) else [ep]
        hits += bool(any(flags))
    return hits / len(episodes)
