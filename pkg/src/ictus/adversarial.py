"""Discriminator over aggregated attention patterns and the training loop.

The discriminator is a 2-layer MLP with sigmoid output; it is driven toward
0 on preictal patterns and 1 on interictal ones by minimizing
mean(D(pre)) - mean(D(inter)) plus a gradient penalty at points interpolated
between the two pattern batches. The generator minimizes reconstruction MSE
plus a weighted -mean(D(pre)) term.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import (
    AttentionBundle,
    AttentionConfig,
    generator_forward,
    init_generator,
    reconstruction_loss,
)
from .autodiff import Var
from .checkpoint import ParameterStore
from .optim import Adam

__all__ = [
    "AdversarialConfig",
    "TrainLogRow",
    "FoldResult",
    "aggregate",
    "pattern_length",
    "init_discriminator",
    "discriminate",
    "gradient_penalty",
    "discriminator_step",
    "generator_step",
    "train",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdversarialConfig:
    gp_weight: float = 10.0
    disc_lr: float = 1e-4
    gen_lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    critic_ratio: int = 1
    adv_weight: float = 1.0
    pool: int = 16
    hidden_dim: int = 150
    max_windows_per_class: int | None = None

    def __post_init__(self):
        if self.gp_weight < 0:
            raise ValueError("gp_weight must be >= 0")
        if self.critic_ratio < 1:
            raise ValueError("critic_ratio must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class TrainLogRow:
    epoch: int
    l_d: float
    l_g: float
    mse: float
    gp: float
    wall_seconds: float


@dataclass
class FoldResult:
    fold_index: int
    generator: ParameterStore | None
    discriminator: ParameterStore | None
    log: list[TrainLogRow] = field(default_factory=list)
    skipped: bool = False
    reason: str = ""


def aggregate(bundle: AttentionBundle, pool: int = 16) -> Var:
    """Flatten one bundle into discriminator input patterns (B, L).

    Per block: average maps over heads, average-pool each map to at most
    pool x pool, flatten, and concatenate spatial-then-temporal in block
    order. Maps smaller than the pool size pass through unpooled.
    """
    parts = []
    blocks = max(len(bundle.spatial_maps), len(bundle.temporal_maps))
    if blocks == 0:
        raise ValueError("aggregate: bundle carries no attention maps")
    for m in range(blocks):
        for maps in (bundle.spatial_maps, bundle.temporal_maps):
            if m < len(maps):
                head_mean = ad.vmean(maps[m], axis=1)  # (B, L, L)
                pooled = ad.adaptive_avg_pool2d(head_mean, pool)
                B = pooled.shape[0]
                parts.append(ad.reshape(pooled, (B, -1)))
    return ad.concat(parts, axis=1)


def pattern_length(cfg: AttentionConfig, n_channels: int, window_len: int, pool: int = 16) -> int:
    """Length of the aggregated pattern vector for given window geometry."""
    per_block = 0
    if not cfg.temporal_only:
        per_block += min(n_channels, pool) ** 2
    if not cfg.spatial_only:
        per_block += min(window_len, pool) ** 2
    return cfg.blocks * per_block


def init_discriminator(input_dim: int, hidden_dim: int, rng: np.random.Generator) -> ParameterStore:
    store = ParameterStore()
    b1 = np.sqrt(6.0 / (input_dim + hidden_dim))
    b2 = np.sqrt(6.0 / (hidden_dim + 1))
    store.add("disc.w1", rng.uniform(-b1, b1, size=(input_dim, hidden_dim)))
    store.add("disc.b1", np.zeros(hidden_dim))
    store.add("disc.w2", rng.uniform(-b2, b2, size=(hidden_dim, 1)))
    store.add("disc.b2", np.zeros(1))
    return store


def discriminate(disc: ParameterStore, patterns) -> Var:
    """Anomaly scores in (0, 1) for a batch of patterns (B, d) -> (B,)."""
    p = patterns if isinstance(patterns, Var) else ad.constant(np.asarray(patterns, dtype=np.float64))
    if p.ndim != 2:
        raise ad.ShapeError(f"discriminate: patterns must be (B, d), got {p.shape}")
    if p.shape[1] != disc["disc.w1"].shape[0]:
        raise ad.ShapeError(
            f"discriminate: pattern length {p.shape[1]} != discriminator input {disc['disc.w1'].shape[0]}"
        )
    h = ad.relu(ad.add(ad.matmul(p, disc["disc.w1"]), disc["disc.b1"]))
    s = ad.sigmoid(ad.add(ad.matmul(h, disc["disc.w2"]), disc["disc.b2"]))
    return ad.reshape(s, (p.shape[0],))


def gradient_penalty(score_fn, pre: np.ndarray, inter: np.ndarray, weight: float, rng: np.random.Generator) -> Var:
    """Penalty pushing ||d score / d input|| toward 1 at interpolated points.

    ``score_fn`` maps a (B, d) Var to per-sample scores (B,). Interpolates
    zhat = eps * pre + (1 - eps) * inter with eps ~ U(0, 1) per pair, then
    returns weight * mean((||grad_zhat score||_2 - 1)^2) with the input
    gradient kept on the tape so the penalty differentiates w.r.t. the
    score function's parameters.
    """
    pre = np.asarray(pre, dtype=np.float64)
    inter = np.asarray(inter, dtype=np.float64)
    if pre.size == 0 or inter.size == 0:
        raise ValueError("gradient_penalty: empty batch")
    if pre.shape != inter.shape:
        raise ad.ShapeError(f"gradient_penalty: batch shapes differ: {pre.shape} vs {inter.shape}")
    eps = rng.uniform(size=(pre.shape[0], 1))
    zhat = ad.leaf(eps * pre + (1.0 - eps) * inter, name="zhat")
    total = ad.vsum(score_fn(zhat))  # rows are independent, so one pass suffices
    (gin,) = ad.grad(total, [zhat], create_graph=True)
    norms = ad.sqrt(ad.vsum(ad.square(gin), axis=1))
    return ad.mul(weight, ad.vmean(ad.square(ad.sub(norms, 1.0))))


def discriminator_step(
    disc: ParameterStore,
    opt: Adam,
    pre_patterns: np.ndarray,
    inter_patterns: np.ndarray,
    gp_weight: float,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """One Adam step on the discriminator; returns (L_D, penalty value)."""
    if len(pre_patterns) == 0 or len(inter_patterns) == 0:
        raise ValueError("discriminator_step: both batches must be non-empty")
    disc.zero_grad()
    loss = ad.sub(
        ad.vmean(discriminate(disc, pre_patterns)),
        ad.vmean(discriminate(disc, inter_patterns)),
    )
    gp_value = 0.0
    if gp_weight > 0:
        gp = gradient_penalty(lambda z: discriminate(disc, z), pre_patterns, inter_patterns, gp_weight, rng)
        gp_value = gp.item()
        loss = ad.add(loss, gp)
    l_d = loss.item()
    ad.backward(loss)
    opt.step()
    disc.zero_grad()
    return l_d, gp_value


def generator_step(
    gen: ParameterStore,
    disc: ParameterStore,
    opt: Adam,
    windows: np.ndarray,
    n_pre: int,
    model_cfg: AttentionConfig,
    adv_cfg: AdversarialConfig,
    bundle: AttentionBundle | None = None,
    patterns: Var | None = None,
) -> tuple[float, float]:
    """One Adam step on the generator; returns (L_G, MSE).

    The first ``n_pre`` windows are the preictal half feeding the
    adversarial term. A forward pass (and its aggregated patterns) may be
    passed in to be reused; gradients flowing into the discriminator are
    discarded.
    """
    if len(windows) == 0:
        raise ValueError("generator_step: empty batch")
    gen.zero_grad()
    disc.zero_grad()
    if bundle is None:
        bundle = generator_forward(gen, windows, model_cfg)
    rloss = reconstruction_loss(bundle, windows)
    mse_value = rloss.item()
    if adv_cfg.adv_weight > 0 and n_pre > 0:
        if patterns is None:
            patterns = aggregate(bundle, adv_cfg.pool)
        l_g = ad.neg(ad.vmean(discriminate(disc, patterns[:n_pre])))
        total = ad.add(rloss, ad.mul(adv_cfg.adv_weight, l_g))
        l_g_value = l_g.item()
    else:
        # adversarial gradient disabled: the generator trains on MSE alone
        if patterns is None:
            patterns = aggregate(bundle, adv_cfg.pool)
        with ad.no_grad():
            l_g_value = -float(np.mean(discriminate(disc, patterns.data[:n_pre]).data)) if n_pre else 0.0
        total = rloss
    ad.backward(total)
    opt.step()
    gen.zero_grad()
    disc.zero_grad()
    return l_g_value, mse_value


class _ClassSampler:
    """Cycles a shuffled index pool, reshuffling on wrap-around."""

    def __init__(self, ids: np.ndarray, rng: np.random.Generator):
        self.ids = np.asarray(ids)
        self.rng = rng
        self._order = self.rng.permutation(len(self.ids))
        self._pos = 0

    def draw(self, count: int) -> np.ndarray:
        out = []
        while count > 0:
            if self._pos >= len(self._order):
                self._order = self.rng.permutation(len(self.ids))
                self._pos = 0
            take = min(count, len(self._order) - self._pos)
            out.append(self._order[self._pos : self._pos + take])
            self._pos += take
            count -= take
        return self.ids[np.concatenate(out)]


def train_fold(
    fold_index: int,
    samples: np.ndarray,
    pre_ids: np.ndarray,
    inter_ids: np.ndarray,
    model_cfg: AttentionConfig,
    adv_cfg: AdversarialConfig,
    seed_seq: np.random.SeedSequence,
) -> FoldResult:
    """Alternating adversarial training on one fold's training windows."""
    if len(pre_ids) == 0 or len(inter_ids) == 0:
        reason = f"fold {fold_index}: no {'preictal' if len(pre_ids) == 0 else 'interictal'} training windows"
        log.warning("%s; skipping", reason)
        return FoldResult(fold_index, None, None, skipped=True, reason=reason)

    rng = np.random.default_rng(seed_seq)
    cap = adv_cfg.max_windows_per_class
    if cap is not None:
        if len(pre_ids) > cap:
            pre_ids = pre_ids[np.sort(rng.choice(len(pre_ids), size=cap, replace=False))]
        if len(inter_ids) > cap:
            inter_ids = inter_ids[np.sort(rng.choice(len(inter_ids), size=cap, replace=False))]

    _, n, T = samples.shape
    gen = init_generator(model_cfg, rng)
    disc = init_discriminator(pattern_length(model_cfg, n, T, adv_cfg.pool), adv_cfg.hidden_dim, rng)
    opt_g = Adam(gen.variables(), lr=adv_cfg.gen_lr)
    opt_d = Adam(disc.variables(), lr=adv_cfg.disc_lr)

    batch = min(adv_cfg.batch_size, len(pre_ids), len(inter_ids))
    iters = max(1, int(np.ceil(min(len(pre_ids), len(inter_ids)) / batch)))
    pre_sampler = _ClassSampler(pre_ids, rng)
    inter_sampler = _ClassSampler(inter_ids, rng)

    result = FoldResult(fold_index, gen, disc)
    for epoch in range(adv_cfg.epochs):
        t0 = time.perf_counter()
        acc = np.zeros(4)
        for _ in range(iters):
            ids = np.concatenate([pre_sampler.draw(batch), inter_sampler.draw(batch)])
            wins = samples[ids]
            bundle = generator_forward(gen, wins, model_cfg)
            patterns = aggregate(bundle, adv_cfg.pool)
            pat = patterns.data
            l_d, gp_v = discriminator_step(disc, opt_d, pat[:batch], pat[batch:], adv_cfg.gp_weight, rng)
            for _ in range(adv_cfg.critic_ratio - 1):
                ids2 = np.concatenate([pre_sampler.draw(batch), inter_sampler.draw(batch)])
                with ad.no_grad():
                    extra = aggregate(generator_forward(gen, samples[ids2], model_cfg), adv_cfg.pool).data
                l_d, gp_v = discriminator_step(disc, opt_d, extra[:batch], extra[batch:], adv_cfg.gp_weight, rng)
            l_g, mse_v = generator_step(
                gen, disc, opt_g, wins, batch, model_cfg, adv_cfg, bundle=bundle, patterns=patterns
            )
            acc += (l_d, l_g, mse_v, gp_v)
        mean = acc / iters
        result.log.append(
            TrainLogRow(epoch, mean[0], mean[1], mean[2], mean[3], time.perf_counter() - t0)
        )
    return result


def train(
    samples: np.ndarray,
    labels: np.ndarray,
    fold_plan,
    model_cfg: AttentionConfig,
    adv_cfg: AdversarialConfig,
    seed: int,
) -> list[FoldResult]:
    """Train one model per fold; deterministic for a given seed.

    ``samples``: (W, n, T) window array; ``labels``: (W,) label strings
    aligned with the fold plan's window ids.
    """
    labels = np.asarray(labels)
    seqs = np.random.SeedSequence(seed).spawn(len(fold_plan.folds))
    results = []
    for fold, seq in zip(fold_plan.folds, seqs):
        ids = np.asarray(fold.train_ids, dtype=int)
        pre = ids[labels[ids] == "preictal"]
        inter = ids[labels[ids] == "interictal"]
        results.append(train_fold(fold.index, samples, pre, inter, model_cfg, adv_cfg, seq))
    return results
