"""Modality-dropout fusion, the actor-critic policy, and action incongruity.

Fusion averages the feature vectors of whichever modalities a dropout
mask keeps. The action-incongruity reward measures how much the frozen
target policy's action vector varies across every possible nonzero mask:
an agent whose decision changes a lot depending on which senses it gets
is in a multisensorily surprising state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .net import MlpSpec, ParameterSet, init_mlp

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


@dataclass(frozen=True)
class ActionSpace:
    """Discrete space of ``n`` actions or continuous of dimension ``n``."""

    kind: str  # "discrete" | "continuous"
    n: int

    def __post_init__(self):
        if self.kind not in ("discrete", "continuous"):
            raise ValueError(f"unknown action space kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("action space size must be >= 1")


# ---------------------------------------------------------------------------
# dropout masks and fusion


def enumerate_masks(m: int) -> np.ndarray:
    """All 2^m - 1 nonzero dropout masks, ascending binary order, bit 0 first.

    Returns a boolean array of shape (2^m - 1, m).
    """
    if not 1 <= m <= 16:
        raise ValueError("modality count must be in 1..16")
    codes = np.arange(1, 2**m)
    return ((codes[:, None] >> np.arange(m)) & 1).astype(bool)


def sample_mask(rng: np.random.Generator, m: int) -> np.ndarray:
    """One mask drawn uniformly over the 2^m - 1 nonzero masks."""
    code = int(rng.integers(1, 2**m))
    return ((code >> np.arange(m)) & 1).astype(bool)


def sample_masks(rng: np.random.Generator, m: int, count: int) -> np.ndarray:
    """(count, m) masks, each uniform over nonzero masks."""
    codes = rng.integers(1, 2**m, size=count)
    return ((codes[:, None] >> np.arange(m)) & 1).astype(bool)


def fuse(features, mask: np.ndarray) -> np.ndarray:
    """Mean of the feature vectors the mask keeps."""
    feats = np.asarray(features, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if feats.shape[0] != mask.shape[0]:
        raise ValueError(f"{feats.shape[0]} features but mask of length {mask.shape[0]}")
    if not mask.any():
        raise ValueError("all-zero dropout mask is invalid")
    return feats[mask].mean(axis=0)


def fuse_batch(feats: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Row-wise fusion: (B, M, D) features with (B, M) masks -> (B, D)."""
    masks = np.asarray(masks, dtype=bool)
    if not masks.any(axis=1).all():
        raise ValueError("all-zero dropout mask is invalid")
    weights = masks.astype(np.float64)
    return np.einsum("bmd,bm->bd", feats, weights) / weights.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# distributions


@dataclass
class DiscreteDist:
    """Categorical distribution given by logits."""

    logits: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        z = self.logits - self.logits.max()
        e = np.exp(z)
        return e / e.sum()

    def sample(self, rng: np.random.Generator) -> int:
        u = rng.random()
        return int(np.searchsorted(np.cumsum(self.probs), u, side="right").clip(0, len(self.logits) - 1))

    def mode(self) -> int:
        return int(np.argmax(self.logits))

    def log_prob(self, action: int) -> float:
        z = self.logits - self.logits.max()
        return float(z[action] - np.log(np.exp(z).sum()))

    def entropy(self) -> float:
        p = self.probs
        z = self.logits - self.logits.max()
        logp = z - np.log(np.exp(z).sum())
        return float(-(p * logp).sum())


@dataclass
class GaussianDist:
    """Diagonal Gaussian with state-independent std."""

    mean: np.ndarray
    std: np.ndarray

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal(self.mean.shape)

    def mode(self) -> np.ndarray:
        return self.mean.copy()

    def log_prob(self, action: np.ndarray) -> float:
        d = (np.asarray(action) - self.mean) / self.std
        return float(
            -0.5 * np.sum(d * d) - np.sum(np.log(self.std)) - 0.5 * len(self.mean) * np.log(2 * np.pi)
        )

    def entropy(self) -> float:
        return float(np.sum(np.log(self.std)) + 0.5 * len(self.mean) * np.log(2 * np.pi * np.e))


# ---------------------------------------------------------------------------
# policy network


class PolicyNet:
    """Shared tanh trunk with an actor head and a critic head.

    Discrete spaces get action logits; continuous spaces get a mean
    vector plus a learned state-independent log-std clamped to
    [LOG_STD_MIN, LOG_STD_MAX].
    """

    def __init__(
        self,
        feature_dim: int,
        space: ActionSpace,
        hidden: tuple[int, int] = (64, 64),
        rng: np.random.Generator | None = None,
        params: ParameterSet | None = None,
    ):
        self.feature_dim = feature_dim
        self.space = space
        self.hidden = tuple(hidden)
        if params is not None:
            self.params = params
            return
        rng = rng if rng is not None else np.random.default_rng(0)
        h0, h1 = self.hidden
        self.params = init_mlp(MlpSpec(feature_dim, (h0,), h1), rng)
        self.params.merge(init_mlp(MlpSpec(h1, (), space.n), rng).with_prefix("a"))
        self.params.merge(init_mlp(MlpSpec(h1, (), 1), rng).with_prefix("c"))
        if space.kind == "continuous":
            self.params["log_std"] = np.zeros(space.n)

    def clone(self) -> "PolicyNet":
        return PolicyNet(self.feature_dim, self.space, self.hidden, params=self.params.copy())

    def forward(self, z, nodes: dict | None = None):
        """(actor output, value) for a batch of fused features (B, D).

        Actor output is logits (discrete) or the action mean (continuous).
        Works in plain mode (ndarray in/out) or graph mode via ``nodes``.
        """
        p = self.params

        def get(name):
            if nodes is not None:
                return nodes.setdefault(name, ad.Node(p[name]))
            return p[name]

        h = ad.tanh(ad.add(ad.matmul(z, get("W0")), get("b0")))
        h = ad.tanh(ad.add(ad.matmul(h, get("W1")), get("b1")))
        out = ad.add(ad.matmul(h, get("aW0")), get("ab0"))
        v = ad.sum_(ad.add(ad.matmul(h, get("cW0")), get("cb0")), axis=1)
        return out, v

    def log_std(self, nodes: dict | None = None):
        """Clamped log-std (continuous spaces only)."""
        if nodes is not None:
            node = nodes.setdefault("log_std", ad.Node(self.params["log_std"]))
            return ad.clip(node, LOG_STD_MIN, LOG_STD_MAX)
        return np.clip(self.params["log_std"], LOG_STD_MIN, LOG_STD_MAX)


def policy_forward(policy: PolicyNet, z: np.ndarray):
    """Action distribution and value at one fused feature vector."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (policy.feature_dim,):
        raise ValueError(f"expected feature width {policy.feature_dim}, got {z.shape}")
    out, v = policy.forward(z[None, :])
    if policy.space.kind == "discrete":
        return DiscreteDist(out[0]), float(v[0])
    std = np.exp(policy.log_std())
    return GaussianDist(out[0], std), float(v[0])


def act(
    policy: PolicyNet,
    features,
    mask: np.ndarray,
    rng: np.random.Generator,
    greedy: bool = False,
):
    """Sample an action at fuse(features, mask); value uses the full mask.

    Returns (action, log-prob, value).
    """
    feats = np.asarray(features, dtype=np.float64)
    dist, _ = policy_forward(policy, fuse(feats, mask))
    _, value = policy_forward(policy, feats.mean(axis=0))
    action = dist.mode() if greedy else dist.sample(rng)
    return action, dist.log_prob(action), value


# ---------------------------------------------------------------------------
# target policy and action incongruity


class TargetPolicy:
    """Frozen copy of the policy, refreshed every ``copy_period`` env steps."""

    def __init__(self, policy: PolicyNet, copy_period: int = 2048):
        if copy_period < 1:
            raise ValueError("copy_period must be >= 1")
        self.net = policy.clone()
        self.copy_period = copy_period
        self.steps_since_sync = 0

    def due(self) -> bool:
        return self.steps_since_sync >= self.copy_period


def sync_target(policy: PolicyNet, target: TargetPolicy) -> None:
    """Copy the live parameters into the target and reset its counter."""
    if policy.space != target.net.space or policy.feature_dim != target.net.feature_dim:
        raise ValueError("policy and target specs differ")
    target.net.params = policy.params.copy()
    target.steps_since_sync = 0


def _action_vectors(net: PolicyNet, z: np.ndarray) -> np.ndarray:
    """The deterministic action vector at each fused input row.

    Probability vector for discrete spaces, distribution mean for
    continuous ones.
    """
    out, _ = net.forward(z)
    if net.space.kind == "discrete":
        return ad.softmax(out)
    return out


def action_incongruity(target: TargetPolicy, features) -> float:
    """Variance of the target policy's action vector across all dropout masks.

    Mean over the 2^M - 1 masks of the squared Euclidean distance to the
    mean action vector.
    """
    feats = np.asarray(features, dtype=np.float64)
    return float(action_incongruity_batch(target, feats[None, :, :])[0])


def action_incongruity_batch(target: TargetPolicy, feats: np.ndarray) -> np.ndarray:
    """Vectorized action incongruity over (B, M, D) feature banks."""
    b, m_cnt, d = feats.shape
    masks = enumerate_masks(m_cnt)  # (K, M)
    k = masks.shape[0]
    weights = masks.astype(np.float64)
    # fused input per (observation, mask): (B, K, D) -> rows (B*K, D)
    z = np.einsum("bmd,km->bkd", feats, weights) / weights.sum(axis=1)[None, :, None]
    vecs = _action_vectors(target.net, z.reshape(b * k, d)).reshape(b, k, -1)
    center = vecs.mean(axis=1, keepdims=True)
    return np.square(vecs - center).sum(axis=2).mean(axis=1)
