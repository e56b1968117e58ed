"""Cascaded spatial/temporal attention generator over EEG windows.

Each block applies a spatial attention module (channels attend to channels,
per time position) followed by a temporal attention module (time positions
attend to time positions). Node affinities are quadratic forms of encoded
features, heads are blended by a learned softmax, and every module wraps its
attention transform in a residual connection plus layer normalization. The
final features are projected back to the window shape as a reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .checkpoint import ParameterStore

__all__ = [
    "AttentionConfig",
    "AttentionBundle",
    "init_generator",
    "multi_head_attention",
    "spatial_module",
    "temporal_module",
    "generator_forward",
    "reconstruction_loss",
]


@dataclass(frozen=True)
class AttentionConfig:
    blocks: int = 3
    heads: int = 4
    spatial_dim: int = 50
    temporal_dim: int = 100
    kernel_size: int = 2
    spatial_only: bool = False
    temporal_only: bool = False

    def __post_init__(self):
        if self.blocks < 1 or self.heads < 1:
            raise ValueError("blocks and heads must be >= 1")
        if self.spatial_dim < 1 or self.temporal_dim < 1 or self.kernel_size < 1:
            raise ValueError("encoder dimensions and kernel size must be positive")
        if self.spatial_only and self.temporal_only:
            raise ValueError("spatial_only and temporal_only are mutually exclusive")

    @property
    def feature_dim(self) -> int:
        """Feature width coming out of the last block."""
        if self.spatial_only:
            return self.spatial_dim
        return self.temporal_dim


@dataclass
class AttentionBundle:
    """One forward pass: reconstruction plus every attention map.

    ``spatial_maps[m]`` has shape (B, H, n, n) and ``temporal_maps[m]``
    (B, H, T, T); each row of each map is a softmax distribution.
    """

    reconstruction: Var
    spatial_maps: list[Var] = field(default_factory=list)
    temporal_maps: list[Var] = field(default_factory=list)


def _glorot(rng: np.random.Generator, shape, fan_in, fan_out) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_generator(cfg: AttentionConfig, rng: np.random.Generator) -> ParameterStore:
    """Seeded parameter store for the full cascade.

    Weights are uniform in +-sqrt(6/(fan_in+fan_out)), biases zero, layer
    norm affine at identity, head-mixing logits zero (uniform head blend).
    """
    store = ParameterStore()
    K = cfg.kernel_size
    feat = 1
    for m in range(cfg.blocks):
        if not cfg.temporal_only:
            S = cfg.spatial_dim
            store.add(f"blk{m}.spat.conv.w", _glorot(rng, (K, feat, S), feat * K, S * K))
            store.add(f"blk{m}.spat.conv.b", np.zeros(S))
            store.add(f"blk{m}.spat.align", _glorot(rng, (cfg.heads, S, S), S, S))
            store.add(f"blk{m}.spat.heads", np.zeros(cfg.heads))
            store.add(f"blk{m}.spat.ln.g", np.ones(S))
            store.add(f"blk{m}.spat.ln.b", np.zeros(S))
            feat = S
        if not cfg.spatial_only:
            E = cfg.temporal_dim
            store.add(f"blk{m}.temp.conv.w", _glorot(rng, (K, feat, E), feat * K, E * K))
            store.add(f"blk{m}.temp.conv.b", np.zeros(E))
            store.add(f"blk{m}.temp.align", _glorot(rng, (cfg.heads, E, E), E, E))
            store.add(f"blk{m}.temp.heads", np.zeros(cfg.heads))
            store.add(f"blk{m}.temp.ln.g", np.ones(E))
            store.add(f"blk{m}.temp.ln.b", np.zeros(E))
            feat = E
    store.add("recon.w", _glorot(rng, (feat, 1), feat, 1))
    store.add("recon.b", np.zeros(1))
    return store


def _attention_maps(z: Var, align: Var, head_logits: Var):
    """Per-head row-stochastic maps plus the head-blended map.

    ``z``: (..., L, E) node encodings; ``align``: (H, E, E) one quadratic
    alignment matrix per head; ``head_logits``: (H,). Affinity of node i to
    node j for head k is z_i . align[k] . z_j; rows are softmaxed. Returns
    (maps (..., H, L, L), blended (..., L, L)).
    """
    H = align.shape[0]
    head_maps = []
    for k in range(H):
        scores = ad.matmul(ad.matmul(z, align[k]), ad.swapaxes(z, -1, -2))
        head_maps.append(ad.softmax(scores, axis=-1))
    maps = ad.stack(head_maps, axis=-3)
    alpha = ad.softmax(head_logits, axis=0)
    blended = None
    for k in range(H):
        term = ad.mul(head_maps[k], alpha[k])
        blended = term if blended is None else ad.add(blended, term)
    return maps, blended


def multi_head_attention(z: Var, align: Var, head_logits: Var, ln_gamma: Var, ln_beta: Var):
    """Attention over the second-to-last axis of ``z``.

    Output is layer_norm(z + relu(blended_map @ z)); the values attended
    over are the encoded features themselves. Returns (output matching the
    shape of ``z``, per-head maps (..., H, L, L)).
    """
    maps, blended = _attention_maps(z, align, head_logits)
    out = ad.layer_norm(ad.add(z, ad.relu(ad.matmul(blended, z))), ln_gamma, ln_beta)
    return out, maps


def spatial_module(x: Var, params: ParameterStore, prefix: str):
    """Channels attend over channels at every time position.

    ``x``: (B, n, T, F). The time-axis encoder (1D convolution, length
    preserving) embeds each channel per position; per-position maps are
    averaged over time into one (B, H, n, n) map. Returns (features
    (B, n, T, S), maps).
    """
    z = ad.relu(ad.conv1d(x, params[f"{prefix}.conv.w"], params[f"{prefix}.conv.b"]))
    zt = ad.swapaxes(z, 1, 2)  # (B, T, n, S): nodes are channels
    out, maps_t = multi_head_attention(
        zt,
        params[f"{prefix}.align"],
        params[f"{prefix}.heads"],
        params[f"{prefix}.ln.g"],
        params[f"{prefix}.ln.b"],
    )
    maps = ad.vmean(maps_t, axis=1)  # (B, H, n, n)
    return ad.swapaxes(out, 1, 2), maps


def temporal_module(x: Var, params: ParameterStore, prefix: str):
    """Time positions attend over time positions.

    ``x``: (B, n, T, F). The channel-axis encoder (1D convolution across
    channels) produces per-channel features; node encodings are their
    channel mean, giving one (B, H, T, T) map set that mixes every
    channel's features along time. Returns (features (B, n, T, E), maps).
    """
    xt = ad.swapaxes(x, 1, 2)  # (B, T, n, F): convolve across channels
    zc = ad.swapaxes(ad.relu(ad.conv1d(xt, params[f"{prefix}.conv.w"], params[f"{prefix}.conv.b"])), 1, 2)
    znodes = ad.vmean(zc, axis=1)  # (B, T, E)
    maps, blended = _attention_maps(znodes, params[f"{prefix}.align"], params[f"{prefix}.heads"])
    B, T = blended.shape[0], blended.shape[-1]
    mixed = ad.matmul(ad.reshape(blended, (B, 1, T, T)), zc)  # (B, n, T, E)
    feats = ad.layer_norm(
        ad.add(zc, ad.relu(mixed)), params[f"{prefix}.ln.g"], params[f"{prefix}.ln.b"]
    )
    return feats, maps


def generator_forward(params: ParameterStore, windows, cfg: AttentionConfig) -> AttentionBundle:
    """Run the cascade over a batch of windows (B, n, T)."""
    w = windows if isinstance(windows, Var) else ad.constant(np.asarray(windows, dtype=np.float64))
    if w.ndim != 3:
        raise ad.ShapeError(f"generator_forward: windows must be (B, n, T), got {w.shape}")
    B, n, T = w.shape
    x = ad.reshape(w, (B, n, T, 1))
    bundle = AttentionBundle(reconstruction=None)
    for m in range(cfg.blocks):
        if not cfg.temporal_only:
            x, smap = spatial_module(x, params, f"blk{m}.spat")
            bundle.spatial_maps.append(smap)
        if not cfg.spatial_only:
            x, tmap = temporal_module(x, params, f"blk{m}.temp")
            bundle.temporal_maps.append(tmap)
    recon = ad.add(ad.reshape(ad.matmul(x, params["recon.w"]), (B, n, T)), params["recon.b"])
    bundle.reconstruction = recon
    return bundle


def reconstruction_loss(bundle: AttentionBundle, windows) -> Var:
    """Mean squared error between the reconstruction and the input window."""
    target = windows if isinstance(windows, Var) else ad.constant(np.asarray(windows, dtype=np.float64))
    return ad.mse(bundle.reconstruction, target)
