"""Differentiable spatial operators shared by generator and discriminator.

Three operators with one shared geometry convention (see
``_torch_impl`` for the exact sampling formulas):

* ``fill``       — paint a feature vector uniformly into a pixel-rounded box;
* ``resize_fit`` — bilinear-resize a soft mask into a pixel-rounded box;
* ``roi_align``  — continuous-coordinate bilinear pooling inside a box.

``resize_fit`` and ``roi_align`` have two interchangeable backends: a
compiled extension (built from ``_kernels.pyx``) with hand-written
forward/backward loops, and a pure-torch fallback. The extension is
selected at import when present; ``set_backend`` or the
``CTX2IM_SPATIAL_BACKEND`` environment variable override the choice.
Batched entry points (``place_masks``, ``roi_align_rois``) exist because
training calls these once per box per level per step.
"""

from __future__ import annotations

import math
import os

import torch

from ..layout import BBox, pixel_rect
from . import _torch_impl

try:
    from . import _ext

    HAVE_EXT = True
except ImportError:
    _ext = None
    HAVE_EXT = False


class SpatialError(ValueError):
    pass


_backend = os.environ.get("CTX2IM_SPATIAL_BACKEND", "ext" if HAVE_EXT else "torch")
if _backend not in ("ext", "torch"):
    raise SpatialError(f"bad CTX2IM_SPATIAL_BACKEND: {_backend!r}")
if _backend == "ext" and not HAVE_EXT:
    _backend = "torch"


def available_backends() -> list[str]:
    return ["ext", "torch"] if HAVE_EXT else ["torch"]


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("ext", "torch"):
        raise SpatialError(f"unknown backend: {name!r}")
    if name == "ext" and not HAVE_EXT:
        raise SpatialError("compiled extension is not available")
    _backend = name


def _ext_ok(tensor: torch.Tensor) -> bool:
    return tensor.device.type == "cpu" and tensor.dtype in (torch.float32, torch.float64)


# ---------------------------------------------------------------------------
# geometry helpers


def continuous_rect(box: BBox, out_h: int, out_w: int) -> tuple[float, float, float, float]:
    """Box edges in continuous pixel coordinates (X0, Y0, X1, Y1), clipped to the lattice."""
    c = box.clipped()
    return (c.x0 * out_w, c.y0 * out_h, c.x1 * out_w, c.y1 * out_h)


def rects_tensor(boxes: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Vectorized ``pixel_rect``: (..., 4) cx/cy/w/h boxes -> (..., 4) int64 (y0, y1, x0, x1).

    Rect arithmetic always runs in float64 so the rounding matches the
    scalar helper bit for bit.
    """
    b = boxes.double()
    cx, cy, w, h = b.unbind(-1)
    x0 = (cx - w / 2).clamp(0.0, 1.0)
    x1 = (cx + w / 2).clamp(0.0, 1.0)
    y0 = (cy - h / 2).clamp(0.0, 1.0)
    y1 = (cy + h / 2).clamp(0.0, 1.0)
    px0 = torch.floor(x0 * out_w + 0.5).clamp(0, out_w)
    px1 = torch.floor(x1 * out_w + 0.5).clamp(0, out_w)
    py0 = torch.floor(y0 * out_h + 0.5).clamp(0, out_h)
    py1 = torch.floor(y1 * out_h + 0.5).clamp(0, out_h)
    return torch.stack([py0, py1, px0, px1], dim=-1).long()


def rois_tensor(
    boxes: torch.Tensor, n_valid: torch.Tensor, feat_h: int, feat_w: int, dtype=torch.float32
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Flatten a padded (B, N_max, 4) box tensor into roi rows for valid items.

    Returns (rois (K, 5), batch_index (K,), item_index (K,)) where each
    roi row is (batch, X0, Y0, X1, Y1) in continuous feature-map pixels.
    """
    B, n_max, _ = boxes.shape
    idx = torch.arange(n_max).view(1, n_max).expand(B, n_max)
    keep = idx < n_valid.view(B, 1)
    batch_index = torch.arange(B).view(B, 1).expand(B, n_max)[keep]
    item_index = idx[keep]
    b = boxes[keep].double()
    cx, cy, w, h = b.unbind(-1)
    x0 = (cx - w / 2).clamp(0.0, 1.0) * feat_w
    x1 = (cx + w / 2).clamp(0.0, 1.0) * feat_w
    y0 = (cy - h / 2).clamp(0.0, 1.0) * feat_h
    y1 = (cy + h / 2).clamp(0.0, 1.0) * feat_h
    rois = torch.stack([batch_index.double(), x0, y0, x1, y1], dim=-1).to(dtype)
    return rois, batch_index, item_index


# ---------------------------------------------------------------------------
# batched operators (hot path)


def place_masks(masks: torch.Tensor, rects: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Resize-and-place K masks into pixel rects; zero outside, zero for empty rects."""
    if _backend == "ext" and _ext_ok(masks):
        return _ext.place_masks(masks, rects, out_h, out_w)
    return _torch_impl.place_masks(masks, rects, out_h, out_w)


def roi_align_rois(
    features: torch.Tensor, rois: torch.Tensor, out_h: int, out_w: int, samples_per_bin: int = 2
) -> torch.Tensor:
    """ROI-align K roi rows (batch, X0, Y0, X1, Y1) against (B, C, Hf, Wf) features."""
    if rois.shape[0] == 0:
        return features.new_zeros((0, features.shape[1], out_h, out_w))
    if _backend == "ext" and _ext_ok(features):
        return _ext.roi_align_rois(features, rois, out_h, out_w, samples_per_bin)
    return _torch_impl.roi_align_rois(features, rois, out_h, out_w, samples_per_bin)


# ---------------------------------------------------------------------------
# single-box contract operators


def _checked_rect(box: BBox, out_h: int, out_w: int) -> tuple[int, int, int, int]:
    y0, y1, x0, x1 = pixel_rect(box, out_h, out_w)
    if y1 <= y0 or x1 <= x0:
        raise SpatialError("degenerate fill region")
    return y0, y1, x0, x1


def fill(feature: torch.Tensor, box: BBox, out_h: int, out_w: int) -> torch.Tensor:
    """Paint a d-vector into the pixel-rounded box on a zero (d, out_h, out_w) canvas."""
    if feature.dim() != 1:
        raise SpatialError("fill expects a 1-d feature vector")
    y0, y1, x0, x1 = _checked_rect(box, out_h, out_w)
    region = torch.zeros((out_h, out_w), dtype=feature.dtype, device=feature.device)
    region[y0:y1, x0:x1] = 1
    return feature.view(-1, 1, 1) * region


def resize_fit(mask: torch.Tensor, box: BBox, out_h: int, out_w: int) -> torch.Tensor:
    """Bilinear-resize a soft (h_m, w_m) mask into the pixel-rounded box region."""
    if mask.dim() != 2:
        raise SpatialError("resize_fit expects a 2-d mask")
    with torch.no_grad():
        if mask.min() < 0 or mask.max() > 1:
            raise SpatialError("mask entries must lie in [0, 1]")
    y0, y1, x0, x1 = _checked_rect(box, out_h, out_w)
    rects = torch.tensor([[y0, y1, x0, x1]], dtype=torch.int64)
    return place_masks(mask.unsqueeze(0), rects, out_h, out_w).squeeze(0)


def resize_fit_or_zero(mask: torch.Tensor, box: BBox, out_h: int, out_w: int) -> torch.Tensor:
    """Like ``resize_fit`` but a box that rounds to nothing yields an all-zero map."""
    y0, y1, x0, x1 = pixel_rect(box, out_h, out_w)
    if y1 <= y0 or x1 <= x0:
        return torch.zeros((out_h, out_w), dtype=mask.dtype, device=mask.device)
    return resize_fit(mask, box, out_h, out_w)


def roi_align(
    feature: torch.Tensor, box: BBox, out_h: int, out_w: int, samples_per_bin: int = 2
) -> torch.Tensor:
    """ROI-align one (C, H, W) feature map inside a continuous-coordinate box."""
    if feature.dim() != 3:
        raise SpatialError("roi_align expects a (C, H, W) feature map")
    c = box.clipped()
    if c.w <= 0 or c.h <= 0:
        raise SpatialError("degenerate box")
    H, W = feature.shape[1], feature.shape[2]
    x0, y0, x1, y1 = continuous_rect(box, H, W)
    rois = torch.tensor([[0.0, x0, y0, x1, y1]], dtype=feature.dtype)
    out = roi_align_rois(feature.unsqueeze(0), rois, out_h, out_w, samples_per_bin)
    return out.squeeze(0)
