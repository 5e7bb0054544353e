"""Decoder-only generator: soft masks, mask-modulated normalization, upsampling stack.

The image is decoded from pure noise; the layout enters only through
per-level condition tensors. Each box's contextualized feature vector is
painted into its pixel-rounded box region, weighted by a predicted soft
mask, and the per-pixel sum of those paintings drives the affine
parameters of every normalization layer.

Desk-scale geometry: 128x4x4 base noise, three levels (4 -> 8 -> 16 ->
32), masks predicted at 16x16 before placement, final 3x32x32 tanh
image.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import spatial
from .context import (
    D_LABEL,
    D_NOISE,
    BoxFeatureGenerator,
    BoxFeatureSet,
    ContextTransform,
)
from .layout import Layout
from .seeding import fold_seed, torch_gen

MASK_SIZE = 16
BASE_CHANNELS = 128
BASE_SIZE = 4
LEVEL_CHANNELS = (64, 32, 16)


class MaskNet(nn.Module):
    """Small convolutional net mapping a box feature vector to a 16x16 soft mask."""

    def __init__(self, dim: int = D_LABEL + D_NOISE, mask_size: int = MASK_SIZE):
        super().__init__()
        if mask_size % 4 != 0:
            raise ValueError("mask_size must be a multiple of 4")
        self.mask_size = mask_size
        self.seed_size = mask_size // 4
        self.fc = nn.Linear(dim, 32 * self.seed_size**2)
        self.conv1 = nn.Conv2d(32, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, 8, 3, padding=1)
        self.final = nn.Conv2d(8, 1, 3, padding=1)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        """(..., d) feature rows -> (..., mask_size, mask_size) maps in (0, 1)."""
        lead = feats.shape[:-1]
        x = self.fc(feats.reshape(-1, feats.shape[-1]))
        x = x.view(-1, 32, self.seed_size, self.seed_size)
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.leaky_relu(self.conv1(x), 0.2)
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.leaky_relu(self.conv2(x), 0.2)
        x = torch.sigmoid(self.final(x))
        return x.view(*lead, self.mask_size, self.mask_size)


class ModulatedBatchNorm(nn.Module):
    """Batch normalization whose per-pixel affine parameters come from a condition tensor.

    The two output convolutions start at zero, so an untrained layer (or
    an all-zero condition) reduces to plain normalization: gamma-hat and
    beta-hat are offsets around (1, 0).
    """

    def __init__(self, channels: int, cond_dim: int, hidden: int = 64):
        super().__init__()
        self.bn = nn.BatchNorm2d(channels, affine=False)
        self.shared = nn.Conv2d(cond_dim, hidden, 3, padding=1)
        self.to_gamma = nn.Conv2d(hidden, channels, 3, padding=1)
        self.to_beta = nn.Conv2d(hidden, channels, 3, padding=1)
        nn.init.zeros_(self.to_gamma.weight)
        nn.init.zeros_(self.to_gamma.bias)
        nn.init.zeros_(self.to_beta.weight)
        nn.init.zeros_(self.to_beta.bias)

    def forward(self, f: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[-2:] != f.shape[-2:]:
            raise ValueError(
                f"condition resolution {tuple(cond.shape[-2:])} does not match "
                f"feature resolution {tuple(f.shape[-2:])}"
            )
        h = F.leaky_relu(self.shared(cond), 0.2)
        gamma = self.to_gamma(h)
        beta = self.to_beta(h)
        return (1 + gamma) * self.bn(f) + beta


def condition_tensor(feats: torch.Tensor, placed_masks: torch.Tensor) -> torch.Tensor:
    """Sum over boxes of feature-vector outer mask: (B,N,d) x (B,N,H,W) -> (B,d,H,W)."""
    return torch.einsum("bnd,bnhw->bdhw", feats, placed_masks)


class DecoderStack(nn.Module):
    """Upsampling decoder from base noise, one modulated normalization per level."""

    def __init__(
        self,
        cond_dim: int = D_LABEL + D_NOISE,
        base_channels: int = BASE_CHANNELS,
        base_size: int = BASE_SIZE,
        level_channels: tuple[int, ...] = LEVEL_CHANNELS,
    ):
        super().__init__()
        self.base_shape = (base_channels, base_size, base_size)
        self.norms = nn.ModuleList()
        self.convs = nn.ModuleList()
        c_in = base_channels
        for c_out in level_channels:
            self.norms.append(ModulatedBatchNorm(c_in, cond_dim))
            self.convs.append(nn.Conv2d(c_in, c_out, 3, padding=1))
            c_in = c_out
        self.final = nn.Conv2d(c_in, 3, 3, padding=1)

    @property
    def level_sizes(self) -> tuple[int, ...]:
        s = self.base_shape[-1]
        return tuple(s * 2**i for i in range(len(self.norms)))

    @property
    def image_size(self) -> int:
        return self.base_shape[-1] * 2 ** len(self.norms)

    def forward(self, base: torch.Tensor, conds: list[torch.Tensor]) -> torch.Tensor:
        if len(conds) != len(self.norms):
            raise ValueError("one condition tensor per level required")
        f = base
        for norm, conv, cond in zip(self.norms, self.convs, conds):
            f = norm(f, cond)
            f = F.leaky_relu(f, 0.2)
            f = conv(f)
            f = F.interpolate(f, scale_factor=2, mode="nearest")
        return torch.tanh(self.final(f))


class Generator(nn.Module):
    """Full layout-to-image generator over padded box batches.

    Submodules are initialized under independent derived seeds, so
    building a variant without the context transform leaves every other
    submodule's initial weights bitwise unchanged.
    """

    def __init__(
        self,
        n_classes: int,
        d_label: int = D_LABEL,
        d_noise: int = D_NOISE,
        use_context: bool = True,
        seed: int = 0,
    ):
        super().__init__()
        dim = d_label + d_noise
        self.use_context = use_context
        with torch.random.fork_rng():
            torch.manual_seed(fold_seed(seed, "features"))
            self.features = BoxFeatureGenerator(n_classes, d_label, d_noise)
        self.context = None
        if use_context:
            with torch.random.fork_rng():
                torch.manual_seed(fold_seed(seed, "context"))
                self.context = ContextTransform(dim)
        with torch.random.fork_rng():
            torch.manual_seed(fold_seed(seed, "masknet"))
            self.masknet = MaskNet(dim)
        with torch.random.fork_rng():
            torch.manual_seed(fold_seed(seed, "decoder"))
            self.decoder = DecoderStack(dim)

    @property
    def d_noise(self) -> int:
        return self.features.d_noise

    @property
    def base_shape(self) -> tuple[int, int, int]:
        return self.decoder.base_shape

    def box_features(
        self, labels: torch.Tensor, box_noise: torch.Tensor, valid: torch.Tensor
    ) -> torch.Tensor:
        feats = self.features(labels, box_noise)
        if self.context is not None:
            feats = self.context(feats, valid)
        return feats * valid.unsqueeze(-1)

    def placed_masks(
        self, feats: torch.Tensor, boxes: torch.Tensor, valid: torch.Tensor
    ) -> dict[int, torch.Tensor]:
        """Predict 16x16 masks and place them at every decoder level resolution.

        Only valid rows go through the mask net; padded rows stay
        exactly zero at every level.
        """
        B, N = feats.shape[:2]
        idx = valid.view(B * N).nonzero(as_tuple=True)[0]
        masks_k = self.masknet(feats.view(B * N, -1)[idx])
        out = {}
        for size in self.decoder.level_sizes:
            rects = spatial.rects_tensor(boxes, size, size).view(B * N, 4)[idx]
            placed_k = spatial.place_masks(masks_k, rects, size, size)
            placed = feats.new_zeros(B * N, size, size)
            placed[idx] = placed_k
            out[size] = placed.view(B, N, size, size)
        return out

    def forward(
        self,
        labels: torch.Tensor,
        boxes: torch.Tensor,
        n_valid: torch.Tensor,
        box_noise: torch.Tensor,
        base_noise: torch.Tensor,
        return_parts: bool = False,
    ):
        B, N = labels.shape
        valid = torch.arange(N, device=labels.device).view(1, N) < n_valid.view(B, 1)
        feats = self.box_features(labels, box_noise, valid)
        placed = self.placed_masks(feats, boxes, valid)
        conds = [condition_tensor(feats, placed[s]) for s in self.decoder.level_sizes]
        images = self.decoder(base_noise, conds)
        if return_parts:
            return images, {"features": feats, "placed": placed, "valid": valid}
        return images

    def sample_noise(
        self, batch: int, n_max: int, generator: torch.Generator | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        box_noise = torch.randn(batch, n_max, self.d_noise, generator=generator)
        base_noise = torch.randn(batch, *self.base_shape, generator=generator)
        return box_noise, base_noise


# ---------------------------------------------------------------------------
# single-layout operations


def predict_masks(ctx: BoxFeatureSet, layout: Layout, net: MaskNet) -> list[torch.Tensor]:
    """Per-box soft masks at native resolution, before any placement."""
    if ctx.stage != "contextualized":
        raise ValueError("predict_masks expects contextualized features")
    if ctx.n != layout.n:
        raise ValueError("feature count does not match layout")
    masks = net(ctx.features)
    return list(masks.unbind(0))


def modulated_norm(
    f_l: torch.Tensor,
    ctx: BoxFeatureSet,
    level_masks: list[torch.Tensor],
    phi_l: ModulatedBatchNorm,
) -> torch.Tensor:
    """Modulate one (C, H, W) feature map by mask-weighted box features."""
    if ctx.n != len(level_masks):
        raise ValueError("one mask per feature row required")
    masks = torch.stack(level_masks, dim=0)
    cond = condition_tensor(ctx.features.unsqueeze(0), masks.unsqueeze(0))
    return phi_l(f_l.unsqueeze(0), cond).squeeze(0)


def generate(
    layout: Layout,
    ctx: BoxFeatureSet,
    stack: DecoderStack,
    masknet: MaskNet,
    seed: int,
) -> torch.Tensor:
    """Decode one image from seeded base noise; runs in eval mode for determinism."""
    if ctx.stage != "contextualized":
        raise ValueError("generate expects contextualized features")
    # Draw in float32 so the stream is dtype-independent, then follow the model.
    base = torch.randn(*stack.base_shape, generator=torch_gen(seed))
    base = base.to(next(stack.parameters()).dtype)
    masks = torch.stack(predict_masks(ctx, layout, masknet), dim=0)
    was_training = stack.training
    stack.eval()
    try:
        conds = []
        for size in stack.level_sizes:
            placed = [
                spatial.resize_fit_or_zero(m, item.box, size, size)
                for m, item in zip(masks, layout.items)
            ]
            cond = condition_tensor(
                ctx.features.unsqueeze(0), torch.stack(placed, 0).unsqueeze(0)
            )
            conds.append(cond)
        image = stack(base.unsqueeze(0), conds).squeeze(0)
    finally:
        stack.train(was_training)
    return image


def sample_image(
    gen: Generator, layout: Layout, seed: int, return_parts: bool = False
):
    """Generate one image for a layout with per-box-index derived noise.

    Box i's noise depends only on (seed, i), so growing a layout by one
    box leaves every other box's noise unchanged — feature changes then
    come purely through the context transform.
    """
    labels = torch.tensor([[it.class_id for it in layout.items]], dtype=torch.long)
    boxes = torch.tensor(
        [[[it.box.cx, it.box.cy, it.box.w, it.box.h] for it in layout.items]],
        dtype=torch.float32,
    )
    n_valid = torch.tensor([layout.n])
    box_noise = torch.stack(
        [
            torch.randn(gen.d_noise, generator=torch_gen(fold_seed(seed, "box", i)))
            for i in range(layout.n)
        ],
        dim=0,
    ).unsqueeze(0)
    base = torch.randn(
        *gen.base_shape, generator=torch_gen(fold_seed(seed, "base"))
    ).unsqueeze(0)
    was_training = gen.training
    gen.eval()
    try:
        with torch.no_grad():
            out = gen(labels, boxes, n_valid, box_noise, base, return_parts=return_parts)
    finally:
        gen.train(was_training)
    if return_parts:
        images, parts = out
        return images.squeeze(0), {
            "features": parts["features"].squeeze(0),
            "placed": {s: m.squeeze(0) for s, m in parts["placed"].items()},
        }
    return out.squeeze(0)


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """Map a (3, H, W) image in [-1, 1] to HxWx3 uint8 with round-half-even."""
    arr = image.detach().cpu().numpy()
    scaled = np.rint((np.clip(arr, -1.0, 1.0) + 1.0) * 127.5)
    return np.clip(scaled, 0, 255).astype(np.uint8).transpose(1, 2, 0)


def save_image_png(image: torch.Tensor, path) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(image)).save(path)
