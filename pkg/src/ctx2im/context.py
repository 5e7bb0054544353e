"""Per-box latent features and their self-attention contextualization.

Each layout item gets a latent vector built from a class embedding and a
fresh noise draw, pushed through one linear map. A single round of
dot-product self-attention then lets every box see its co-occurring
boxes, so the feature that later drives mask prediction and modulation
depends on scene context rather than on the box alone.

Two deliberate deviations from textbook attention, kept on purpose:
scores are *not* scaled by 1/sqrt(d), and the output *replaces* the
input (no residual).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .layout import Layout
from .seeding import torch_gen

D_LABEL = 64
D_NOISE = 32


@dataclass(frozen=True)
class BoxFeatureSet:
    """N per-box feature rows plus a stage tag guarding call order."""

    features: torch.Tensor  # (N, d_l + d_n)
    stage: str  # "raw" | "contextualized"

    def __post_init__(self):
        if self.features.dim() != 2:
            raise ValueError("features must be a 2-d (N, d) tensor")
        if self.stage not in ("raw", "contextualized"):
            raise ValueError(f"bad stage: {self.stage!r}")

    @property
    def n(self) -> int:
        return self.features.shape[0]


def attention_weights(
    feats: torch.Tensor, w_q: torch.Tensor, w_k: torch.Tensor
) -> torch.Tensor:
    """Row-stochastic attention matrix over (..., N, d) feature rows (unscaled scores)."""
    q = feats @ w_q
    k = feats @ w_k
    scores = q @ k.transpose(-1, -2)
    scores = scores - scores.amax(dim=-1, keepdim=True)
    return torch.softmax(scores, dim=-1)


def contextualize_features(
    feats: torch.Tensor,
    w_q: torch.Tensor,
    w_k: torch.Tensor,
    w_v: torch.Tensor,
    valid: torch.Tensor | None = None,
) -> torch.Tensor:
    """One attention round over (..., N, d) rows; padded rows masked out and zeroed.

    `valid` is an optional (..., N) boolean mask for padded batches;
    invalid rows neither attend nor are attended to.
    """
    q = feats @ w_q
    k = feats @ w_k
    v = feats @ w_v
    scores = q @ k.transpose(-1, -2)
    if valid is not None:
        scores = scores.masked_fill(~valid.unsqueeze(-2), float("-inf"))
    scores = scores - scores.amax(dim=-1, keepdim=True)
    weights = torch.softmax(scores, dim=-1)
    out = weights @ v
    if valid is not None:
        out = out * valid.unsqueeze(-1)
    return out


def contextualize(raw: BoxFeatureSet, t: "ContextTransform") -> BoxFeatureSet:
    """Contextualize a raw feature set; refuses already-contextualized input."""
    if raw.stage != "raw":
        raise ValueError("contextualize expects stage='raw' features")
    out = contextualize_features(raw.features, t.w_q, t.w_k, t.w_v)
    return BoxFeatureSet(features=out, stage="contextualized")


class ContextTransform(nn.Module):
    """The three square matrices of the attention round (no biases)."""

    def __init__(self, dim: int = D_LABEL + D_NOISE):
        super().__init__()
        self.dim = dim
        self.w_q = nn.Parameter(torch.empty(dim, dim))
        self.w_k = nn.Parameter(torch.empty(dim, dim))
        self.w_v = nn.Parameter(torch.empty(dim, dim))
        for w in (self.w_q, self.w_k, self.w_v):
            nn.init.xavier_uniform_(w)

    def forward(self, feats: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
        return contextualize_features(feats, self.w_q, self.w_k, self.w_v, valid)


class BoxFeatureGenerator(nn.Module):
    """Class embedding + noise -> one linear map, per box.

    Works on padded (B, N, ...) batches; rows past each sample's item
    count are zeroed by the caller's valid mask downstream.
    """

    def __init__(self, n_classes: int, d_label: int = D_LABEL, d_noise: int = D_NOISE):
        super().__init__()
        self.d_label = d_label
        self.d_noise = d_noise
        self.dim = d_label + d_noise
        self.embedding = nn.Embedding(n_classes, d_label)
        self.phi0 = nn.Linear(self.dim, self.dim, bias=False)

    def forward(self, labels: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
        if noise.shape[-1] != self.d_noise:
            raise ValueError("noise width does not match d_noise")
        e = self.embedding(labels)
        return self.phi0(torch.cat([e, noise], dim=-1))

    def sample_noise(
        self, *lead: int, generator: torch.Generator | None = None
    ) -> torch.Tensor:
        return torch.randn(*lead, self.d_noise, generator=generator)


def gen_box_features(
    layout: Layout, gen: BoxFeatureGenerator, noise_seed: int
) -> BoxFeatureSet:
    """Raw per-box features for one layout, noise drawn deterministically from the seed."""
    labels = torch.tensor([it.class_id for it in layout.items], dtype=torch.long)
    noise = gen.sample_noise(layout.n, generator=torch_gen(noise_seed))
    feats = gen(labels, noise)
    return BoxFeatureSet(features=feats, stage="raw")
