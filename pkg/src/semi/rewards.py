"""Reward assembly: incongruity weighting, baselines, and normalization.

The training scalar is built in three stages: intrinsic components are
individually scale-normalized, summed (the action branch weighted by
gamma), and the extrinsic reward mixed in with weight beta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .net import MlpSpec, ParameterSet, init_mlp, mlp_forward
from .optim import AdamState, adam_step

COMPONENTS = ("semi_p", "semi_a", "curiosity", "disagreement", "rnd", "extrinsic")
INTRINSIC_COMPONENTS = ("semi_p", "semi_a", "curiosity", "disagreement", "rnd")


@dataclass
class RewardSpec:
    """Which reward components are active and how they are weighted."""

    components: tuple[str, ...]
    gamma_weight: float = 1.0
    beta_weight: float = 1.0
    normalize_intrinsic: bool = True
    normalize_extrinsic: bool = False

    def __post_init__(self):
        self.components = tuple(self.components)
        if not self.components:
            raise ValueError("at least one reward component is required")
        for c in self.components:
            if c not in COMPONENTS:
                raise ValueError(f"unknown reward component {c!r}")
        for w in (self.gamma_weight, self.beta_weight):
            if not np.isfinite(w) or w < 0:
                raise ValueError("weights must be finite and >= 0")

    def has(self, component: str) -> bool:
        return component in self.components

    @property
    def needs_alignment(self) -> bool:
        return self.has("semi_p") or self.has("semi_a")


class RunningNorm:
    """Welford accumulator used for scale-only reward normalization.

    The mean is tracked but never subtracted; values are divided by the
    running std. While the std is at or below its 1e-8 floor (constant
    stream, cold start) values pass through unscaled.
    """

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, x: float) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    @property
    def variance(self) -> float:
        return self.m2 / self.count if self.count >= 2 else 0.0

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))

    def scale(self, r: float) -> float:
        s = self.std if self.count >= 2 else 1.0
        if s <= 1e-8:
            return r
        return r / s


def normalize(norm: RunningNorm, r: float) -> float:
    """Feed ``r`` into the accumulator, then return it scale-normalized."""
    if not np.isfinite(r):
        raise ValueError("reward must be finite")
    norm.update(r)
    return norm.scale(r)


def combine_intrinsic(r_p: float, r_a: float, gamma: float) -> float:
    """Perceptual plus gamma-weighted action incongruity."""
    if not (np.isfinite(r_p) and np.isfinite(r_a) and np.isfinite(gamma)):
        raise ValueError("combine_intrinsic requires finite inputs")
    return r_p + gamma * r_a


def total_reward(r_intrinsic: float, r_extrinsic: float, beta: float) -> float:
    """Training scalar: intrinsic plus beta-weighted extrinsic."""
    if not (np.isfinite(r_intrinsic) and np.isfinite(r_extrinsic) and np.isfinite(beta)):
        raise ValueError("total_reward requires finite inputs")
    return r_intrinsic + beta * r_extrinsic


def sum_intrinsics(values) -> float:
    """Plain sum of already-normalized intrinsic components."""
    return float(sum(values))


# ---------------------------------------------------------------------------
# forward-prediction baselines


class ForwardModel:
    """MLP predicting the next fused feature from (feature, action)."""

    def __init__(
        self,
        feature_dim: int,
        action_width: int,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (64, 64),
    ):
        self.feature_dim = feature_dim
        self.action_width = action_width
        self.spec = MlpSpec(feature_dim + action_width, hidden, feature_dim, activation="relu")
        self.params = init_mlp(self.spec, rng)

    def predict(self, z: np.ndarray, a_enc: np.ndarray) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(z), np.atleast_2d(a_enc)], axis=1)
        out = mlp_forward(self.spec, self.params, x)
        return out[0] if np.asarray(z).ndim == 1 else out


def encode_actions(actions, space_kind: str, width: int) -> np.ndarray:
    """Action batch as network input: one-hot for discrete, raw otherwise."""
    if space_kind == "discrete":
        idx = np.asarray(actions, dtype=np.intp)
        out = np.zeros((idx.size, width))
        out[np.arange(idx.size), idx] = 1.0
        return out
    return np.atleast_2d(np.asarray(actions, dtype=np.float64))


def curiosity_reward(model: ForwardModel, z_t, a_enc, z_next) -> float:
    """Squared error of the forward prediction."""
    pred = model.predict(np.asarray(z_t), np.asarray(a_enc))
    diff = pred - np.asarray(z_next, dtype=np.float64)
    return float(np.sum(diff * diff))


def curiosity_reward_batch(model: ForwardModel, z: np.ndarray, a_enc: np.ndarray, z_next: np.ndarray) -> np.ndarray:
    pred = model.predict(z, a_enc)
    return np.square(pred - z_next).sum(axis=1)


def disagreement_reward(ensemble, z_t, a_enc) -> float:
    """Mean per-dimension population variance across ensemble predictions."""
    if len(ensemble) < 2:
        raise ValueError("disagreement needs an ensemble of at least 2 models")
    preds = np.stack([m.predict(np.asarray(z_t), np.asarray(a_enc)) for m in ensemble])
    return float(preds.var(axis=0).mean())


def disagreement_reward_batch(ensemble, z: np.ndarray, a_enc: np.ndarray) -> np.ndarray:
    preds = np.stack([m.predict(z, a_enc) for m in ensemble])  # (E, B, D)
    return preds.var(axis=0).mean(axis=1)


class RndPair:
    """Fixed random target network and a predictor trained to match it."""

    def __init__(
        self,
        in_width: int,
        rng: np.random.Generator,
        embed_dim: int = 64,
        hidden: tuple[int, ...] = (64, 64),
    ):
        self.spec = MlpSpec(in_width, hidden, embed_dim, activation="relu")
        self.target_params = init_mlp(self.spec, rng)
        # break the zero-bias symmetry so target embeddings vary richly
        for name in self.target_params.names():
            if name.startswith("b"):
                a = 0.1
                self.target_params[name] = rng.uniform(-a, a, size=self.target_params[name].shape)
        self.predictor_params = init_mlp(self.spec, rng)

    def target(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self.spec, self.target_params, x)

    def predictor(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self.spec, self.predictor_params, x)


def rnd_reward(pair: RndPair, obs_concat) -> float:
    """Squared distillation error of the predictor on one observation."""
    x = np.asarray(obs_concat, dtype=np.float64)
    diff = pair.predictor(x) - pair.target(x)
    return float(np.sum(diff * diff))


def rnd_reward_batch(pair: RndPair, x: np.ndarray) -> np.ndarray:
    return np.square(pair.predictor(x) - pair.target(x)).sum(axis=1)


# ---------------------------------------------------------------------------
# per-phase training of the auxiliary models


def forward_model_loss_graph(model: ForwardModel, z, a_enc, z_next, nodes: dict) -> ad.Node:
    """Mean squared prediction error as a differentiable graph."""
    x = np.concatenate([z, a_enc], axis=1)
    pred = mlp_forward(model.spec, model.params, x, nodes=nodes)
    return ad.mean(ad.square(ad.sub(pred, z_next)))


def rnd_loss_graph(pair: RndPair, x, nodes: dict) -> ad.Node:
    """Mean squared distillation error against the frozen target."""
    target = pair.target(x)  # plain mode: constant
    pred = mlp_forward(pair.spec, pair.predictor_params, x, nodes=nodes)
    return ad.mean(ad.square(ad.sub(pred, target)))


def _epoch_minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_forward_model(
    model: ForwardModel,
    z: np.ndarray,
    a_enc: np.ndarray,
    z_next: np.ndarray,
    opt: AdamState,
    rng: np.random.Generator,
    batch_size: int = 256,
) -> float:
    """One epoch of Adam on the prediction loss; returns mean pre-step loss."""
    losses = []
    for idx in _epoch_minibatches(z.shape[0], batch_size, rng):
        nodes: dict = {}
        loss = forward_model_loss_graph(model, z[idx], a_enc[idx], z_next[idx], nodes)
        ad.backward(loss)
        grads = _grads_for(model.params, nodes)
        adam_step(model.params, grads, opt)
        losses.append(float(loss.value))
    return float(np.mean(losses)) if losses else 0.0


def train_rnd(
    pair: RndPair,
    x: np.ndarray,
    opt: AdamState,
    rng: np.random.Generator,
    batch_size: int = 256,
) -> float:
    """One epoch of Adam on the predictor; the target never moves."""
    losses = []
    for idx in _epoch_minibatches(x.shape[0], batch_size, rng):
        nodes: dict = {}
        loss = rnd_loss_graph(pair, x[idx], nodes)
        ad.backward(loss)
        grads = _grads_for(pair.predictor_params, nodes)
        adam_step(pair.predictor_params, grads, opt)
        losses.append(float(loss.value))
    return float(np.mean(losses)) if losses else 0.0


def _grads_for(params: ParameterSet, nodes: dict) -> ParameterSet:
    grads = ParameterSet()
    for name, arr in params.items():
        node = nodes.get(name)
        grads[name] = node.grad if node is not None and node.grad is not None else np.zeros_like(arr)
    return grads
