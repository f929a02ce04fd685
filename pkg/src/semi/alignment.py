"""Cross-modal contrastive alignment and the perceptual-incongruity reward.

Each sensory stream gets its own encoder; alignment training pulls
features of streams observed together toward high cosine similarity
against negatives, and the per-observation contrastive loss itself is
the reward signal: familiar stream combinations score low, unfamiliar
ones high.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .net import MlpSpec, ParameterSet, init_mlp, mlp_forward
from .optim import AdamState, adam_step


@dataclass
class MultiObs:
    """One timestep's observation: a fixed-width vector per modality."""

    streams: tuple[np.ndarray, ...]
    t: int = 0

    def __post_init__(self):
        self.streams = tuple(np.asarray(s, dtype=np.float64) for s in self.streams)

    @property
    def num_modalities(self) -> int:
        return len(self.streams)

    def widths(self) -> tuple[int, ...]:
        return tuple(s.shape[-1] for s in self.streams)


@dataclass
class AlignmentConfig:
    """Hyperparameters of the alignment task and its reward."""

    temperature: float = 0.1
    feature_dim: int = 32
    encoder_hidden: tuple[int, ...] = (64, 64)
    pool_size: int = 256
    pool_warmup: int = 32
    batch_size: int = 64
    lr: float = 3e-4
    # keep the anchor's own self-similarity term in every denominator
    literal_denominator: bool = False

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


class EncoderBank:
    """One MLP encoder per modality, all mapping into a shared feature space.

    ``version`` increments on every parameter update so feature caches
    (the negative pool's) know when to re-encode.
    """

    def __init__(self, widths: tuple[int, ...], cfg: AlignmentConfig, rng: np.random.Generator):
        self.widths = tuple(widths)
        self.cfg = cfg
        self.specs = [
            MlpSpec(w, cfg.encoder_hidden, cfg.feature_dim, activation="relu") for w in widths
        ]
        self.params = ParameterSet()
        for m, spec in enumerate(self.specs):
            self.params.merge(init_mlp(spec, rng).with_prefix(f"enc{m}_"))
        self.version = 0

    @property
    def num_modalities(self) -> int:
        return len(self.specs)

    @property
    def feature_dim(self) -> int:
        return self.cfg.feature_dim

    def encode(self, obs: MultiObs) -> list[np.ndarray]:
        """Feature vector per modality, shape (D,) each."""
        self._check_widths(obs.widths())
        return [
            mlp_forward(spec, self.params, obs.streams[m], prefix=f"enc{m}_")
            for m, spec in enumerate(self.specs)
        ]

    def encode_batch(self, streams: list[np.ndarray]) -> np.ndarray:
        """Encode B observations given per-modality (B, width) arrays.

        Returns features of shape (B, M, D).
        """
        self._check_widths(tuple(s.shape[1] for s in streams))
        feats = [
            mlp_forward(spec, self.params, streams[m], prefix=f"enc{m}_")
            for m, spec in enumerate(self.specs)
        ]
        return np.stack(feats, axis=1)

    def encode_graph(self, streams: list[np.ndarray], nodes: dict) -> ad.Node:
        """Graph-mode batch encode producing an (B*M, D) feature matrix.

        Row layout is n*M + m (observation-major) so in-batch contrastive
        indexing is straightforward.
        """
        feats = [
            mlp_forward(spec, self.params, streams[m], nodes=nodes, prefix=f"enc{m}_")
            for m, spec in enumerate(self.specs)
        ]
        b = streams[0].shape[0]
        m_cnt = len(self.specs)
        stacked = ad.concat(feats, axis=0)  # (M*B, D), modality-major
        # reorder to observation-major: output row n*M + m reads row m*B + n
        idx = np.tile(np.arange(m_cnt), b) * b + np.repeat(np.arange(b), m_cnt)
        return take_rows(stacked, idx)

    def _check_widths(self, widths: tuple[int, ...]) -> None:
        if widths != self.widths:
            raise ValueError(f"stream widths {widths} do not match encoder widths {self.widths}")

    def bump_version(self) -> None:
        self.version += 1


def take_rows(a, idx):
    """Row gather that works for both plain arrays and graph Nodes."""
    idx = np.asarray(idx, dtype=np.intp)
    if not isinstance(a, ad.Node):
        return a[idx]
    out = ad.Node(a.value[idx], (a,), op="take_rows")

    def bwd(g):
        acc = np.zeros_like(a.value)
        np.add.at(acc, idx, g)
        if a.grad is None:
            a.grad = np.zeros_like(a.value)
        a.grad += acc

    out._backward = bwd
    return out


class NegativePool:
    """FIFO buffer of past observations supplying contrastive negatives.

    Features are cached per encoder version: a parameter update
    invalidates everything, a push only appends.
    """

    def __init__(self, capacity: int = 256, warmup: int = 32):
        if warmup < 1 or capacity < warmup:
            raise ValueError("need 1 <= warmup <= capacity")
        self.capacity = capacity
        self.warmup = warmup
        self._entries: list[MultiObs] = []
        self._feats: list[np.ndarray] = []  # parallel to _entries, (M, D) each
        self._version = -1

    @property
    def fill(self) -> int:
        return len(self._entries)

    @property
    def ready(self) -> bool:
        return self.fill >= self.warmup

    def push(self, obs: MultiObs) -> None:
        self._entries.append(obs)
        if len(self._entries) > self.capacity:
            self._entries.pop(0)
            if self._feats:
                self._feats.pop(0)

    def features(self, bank: EncoderBank) -> np.ndarray:
        """All pool features, shape (fill*M, D), oldest entry first."""
        if self._version != bank.version:
            self._feats = []
            self._version = bank.version
        start = len(self._feats)
        if start < len(self._entries):
            fresh = self._entries[start:]
            streams = [
                np.stack([e.streams[m] for e in fresh])
                for m in range(bank.num_modalities)
            ]
            encoded = bank.encode_batch(streams)  # (B, M, D)
            self._feats.extend(encoded[i] for i in range(encoded.shape[0]))
        if not self._feats:
            return np.zeros((0, bank.feature_dim))
        return np.concatenate(self._feats, axis=0)


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero-norm vectors are defined to have similarity 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"width mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < ad.ZERO_NORM_EPS or nb < ad.ZERO_NORM_EPS:
        return 0.0
    return float(a @ b / (na * nb))


def contrastive_loss(anchor, positive, negatives, cfg: AlignmentConfig) -> float:
    """Softmax-based loss of the anchor/positive pair against negatives.

    -log( exp(s_pos/t) / (exp(s_pos/t) + sum_neg exp(s_neg/t)) ), with
    cosine similarities s and temperature t. Strictly positive.
    """
    if len(negatives) == 0:
        raise ValueError("contrastive_loss requires at least one negative")
    tau = cfg.temperature
    s_pos = cosine_sim(anchor, positive) / tau
    s_negs = np.array([cosine_sim(anchor, n) for n in negatives]) / tau
    m = max(s_pos, float(np.max(s_negs)))
    lse_all = m + np.log(np.exp(s_pos - m) + np.sum(np.exp(s_negs - m)))
    return float(lse_all - s_pos)


def perceptual_incongruity(
    bank: EncoderBank, obs: MultiObs, pool: NegativePool, cfg: AlignmentConfig
) -> float | None:
    """Sum of contrastive losses over all modality pairs of one observation.

    Negatives are every stream of every pool entry. Returns None while
    the pool is below its warmup fill (callers substitute reward 0).
    """
    if not pool.ready:
        return None
    feats = np.stack(bank.encode(obs))[None, :, :]  # (1, M, D)
    return float(perceptual_incongruity_batch(bank, feats, pool, cfg)[0])


def perceptual_incongruity_batch(
    bank: EncoderBank, feats: np.ndarray, pool: NegativePool, cfg: AlignmentConfig
) -> np.ndarray | None:
    """Vectorized perceptual incongruity for pre-encoded features (B, M, D)."""
    if not pool.ready:
        return None
    b, m_cnt, d = feats.shape
    pool_feats = pool.features(bank)  # (P*M, D)
    tau = cfg.temperature
    anchors = feats.reshape(b * m_cnt, d)
    sims_neg = _cosine_rows(anchors, pool_feats) / tau  # (B*M, P*M)
    lse_neg = _logsumexp_rows(sims_neg)  # (B*M,)
    if cfg.literal_denominator:
        # the verbatim denominator also counts the anchor against itself
        lse_neg = np.logaddexp(lse_neg, 1.0 / tau)
    norms = np.linalg.norm(feats, axis=2)  # (B, M)
    safe = np.where(norms < ad.ZERO_NORM_EPS, 1.0, norms)
    unit = feats * (norms >= ad.ZERO_NORM_EPS)[:, :, None] / safe[:, :, None]
    pair_sims = np.einsum("bid,bjd->bij", unit, unit) / tau  # (B, M, M)
    out = np.zeros(b)
    for i in range(m_cnt):
        for j in range(i + 1, m_cnt):
            s_pos = pair_sims[:, i, j]
            loss = np.logaddexp(s_pos, lse_neg[np.arange(b) * m_cnt + i]) - s_pos
            out += loss
    return out


def _cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return ad.pairwise_cosine(a, b)


def _logsumexp_rows(s: np.ndarray) -> np.ndarray:
    if s.shape[1] == 0:
        return np.full(s.shape[0], -np.inf)
    m = s.max(axis=1)
    return m + np.log(np.exp(s - m[:, None]).sum(axis=1))


def alignment_loss_graph(
    bank: EncoderBank, streams: list[np.ndarray], cfg: AlignmentConfig, nodes: dict
) -> ad.Node:
    """In-batch contrastive loss over all anchor/positive pairs, as a graph.

    For each observation k and ordered pair i < j, the anchor is stream
    i's feature, the positive stream j's, and the denominator runs over
    every stream of every observation in the batch (the anchor-self term
    is excluded unless cfg.literal_denominator).
    """
    n = streams[0].shape[0]
    if n < 2:
        raise ValueError("alignment training needs a batch of at least 2 observations")
    m_cnt = len(streams)
    feat = bank.encode_graph(streams, nodes)  # (N*M, D), row n*M + m
    sims = ad.mul(ad.pairwise_cosine(feat, feat), 1.0 / cfg.temperature)
    if not cfg.literal_denominator:
        mask = np.zeros((n * m_cnt, n * m_cnt))
        np.fill_diagonal(mask, -1e9)  # exp underflows to exactly 0
        sims_den = ad.add(sims, mask)
    else:
        sims_den = sims
    lse = ad.logsumexp(sims_den)  # (N*M,)
    anchor_rows = []
    pos_rows = []
    for k in range(n):
        for i in range(m_cnt):
            for j in range(i + 1, m_cnt):
                anchor_rows.append(k * m_cnt + i)
                pos_rows.append(k * m_cnt + j)
    anchor_rows = np.array(anchor_rows, dtype=np.intp)
    pos_rows = np.array(pos_rows, dtype=np.intp)
    pos_sims = ad.gather2d(sims, anchor_rows, pos_rows)
    per_pair = ad.sub(ad.take(lse, anchor_rows), pos_sims)
    return ad.mean(per_pair)


def train_alignment(
    bank: EncoderBank,
    batch: list[MultiObs] | list[np.ndarray],
    cfg: AlignmentConfig,
    opt: AdamState,
) -> float:
    """One Adam step on the in-batch contrastive loss; returns pre-step loss."""
    if isinstance(batch[0], MultiObs):
        streams = [
            np.stack([obs.streams[m] for obs in batch]) for m in range(bank.num_modalities)
        ]
    else:
        streams = list(batch)
    nodes: dict = {}
    loss = alignment_loss_graph(bank, streams, cfg, nodes)
    ad.backward(loss)
    grads = ParameterSet()
    for name, arr in bank.params.items():
        node = nodes.get(name)
        grads[name] = node.grad if node is not None and node.grad is not None else np.zeros_like(arr)
    adam_step(bank.params, grads, opt)
    bank.bump_version()
    return float(loss.value)
