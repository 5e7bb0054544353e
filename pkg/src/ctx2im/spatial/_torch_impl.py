"""Pure-torch implementations of the spatial placement kernels.

These are the fallback kernels, selected when the compiled extension is
unavailable. They are written as vectorized gather/scatter expressions
so autograd provides the backward passes. The sampling conventions are
the single source of truth shared with the compiled kernels:

place_masks (mask resize-and-place, align-corners-false):
    an output pixel (y, x) inside the half-open pixel rect
    [y0, y1) x [x0, x1) samples the mask at
        v = (y - y0 + 0.5) * h_m / (y1 - y0) - 0.5
        u = (x - x0 + 0.5) * w_m / (x1 - x0) - 0.5
    with bilinear interpolation and edge clamping; pixels outside the
    rect are exactly zero.

roi_align (continuous box coordinates, no rounding):
    bin (i, j) of an out_h x out_w grid over the box [X0, X1) x [Y0, Y1)
    averages spb * spb bilinear samples taken at
        y = Y0 + (i + (sy + 0.5) / spb) * (Y1 - Y0) / out_h
        x = X0 + (j + (sx + 0.5) / spb) * (X1 - X0) / out_w
    where a sample at continuous (x, y) reads the feature grid whose
    pixel centers sit at integer + 0.5, i.e. interpolates at
    (u, v) = (x - 0.5, y - 0.5), clamped to the grid, and contributes
    zero if u or v is more than one pixel outside it.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

_ROI_CHUNK = 128


def place_masks(masks: torch.Tensor, rects: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Resize K masks into their pixel rects on a zero canvas.

    masks: (K, h_m, w_m); rects: (K, 4) int64 rows (y0, y1, x0, x1).
    Returns (K, out_h, out_w). Empty rects produce all-zero maps.
    """
    K, hm, wm = masks.shape
    dt = masks.dtype
    y0 = rects[:, 0].view(K, 1, 1).to(dt)
    y1 = rects[:, 1].view(K, 1, 1).to(dt)
    x0 = rects[:, 2].view(K, 1, 1).to(dt)
    x1 = rects[:, 3].view(K, 1, 1).to(dt)
    ys = torch.arange(out_h, dtype=dt, device=masks.device).view(1, out_h, 1)
    xs = torch.arange(out_w, dtype=dt, device=masks.device).view(1, 1, out_w)
    inside = (ys >= y0) & (ys < y1) & (xs >= x0) & (xs < x1)

    bh = (y1 - y0).clamp(min=1.0)
    bw = (x1 - x0).clamp(min=1.0)
    v = ((ys - y0 + 0.5) * hm / bh - 0.5).clamp(0.0, hm - 1)  # (K, out_h, 1)
    u = ((xs - x0 + 0.5) * wm / bw - 0.5).clamp(0.0, wm - 1)  # (K, 1, out_w)
    i0 = v.floor()
    j0 = u.floor()
    tv = v - i0
    tu = u - j0
    i0 = i0.long()
    j0 = j0.long()
    i1 = (i0 + 1).clamp(max=hm - 1)
    j1 = (j0 + 1).clamp(max=wm - 1)

    flat = masks.reshape(K, hm * wm)

    def gather(iy, jx):
        idx = (iy * wm + jx).expand(K, out_h, out_w).reshape(K, -1)
        return torch.gather(flat, 1, idx).view(K, out_h, out_w)

    out = (
        (1 - tv) * (1 - tu) * gather(i0, j0)
        + (1 - tv) * tu * gather(i0, j1)
        + tv * (1 - tu) * gather(i1, j0)
        + tv * tu * gather(i1, j1)
    )
    return out * inside.to(dt)


def _roi_align_chunk(features, rois, out_h, out_w, spb):
    B, C, Hf, Wf = features.shape
    K = rois.shape[0]
    dt = features.dtype
    batch = rois[:, 0].long()
    X0, Y0, X1, Y1 = rois[:, 1], rois[:, 2], rois[:, 3], rois[:, 4]
    bin_h = (Y1 - Y0) / out_h
    bin_w = (X1 - X0) / out_w

    frac = (torch.arange(spb, dtype=dt, device=features.device) + 0.5) / spb
    iy = torch.arange(out_h, dtype=dt, device=features.device)
    ix = torch.arange(out_w, dtype=dt, device=features.device)
    # sampled row/col coordinates on the dense (out*spb) sample grid
    ysamp = Y0.view(K, 1, 1) + (iy.view(1, out_h, 1) + frac.view(1, 1, spb)) * bin_h.view(K, 1, 1)
    xsamp = X0.view(K, 1, 1) + (ix.view(1, out_w, 1) + frac.view(1, 1, spb)) * bin_w.view(K, 1, 1)
    v = (ysamp - 0.5).reshape(K, out_h * spb)
    u = (xsamp - 0.5).reshape(K, out_w * spb)
    valid_v = (v >= -1.0) & (v <= Hf)
    valid_u = (u >= -1.0) & (u <= Wf)
    v = v.clamp(0.0, Hf - 1)
    u = u.clamp(0.0, Wf - 1)
    i0 = v.floor()
    j0 = u.floor()
    tv = (v - i0).view(K, 1, out_h * spb, 1)
    tu = (u - j0).view(K, 1, 1, out_w * spb)
    i0 = i0.long()
    j0 = j0.long()
    i1 = (i0 + 1).clamp(max=Hf - 1)
    j1 = (j0 + 1).clamp(max=Wf - 1)

    fk = features.reshape(B, C, Hf * Wf)[batch]  # (K, C, Hf*Wf)

    def gather(irow, jcol):
        idx = irow.view(K, out_h * spb, 1) * Wf + jcol.view(K, 1, out_w * spb)
        idx = idx.view(K, 1, -1).expand(K, C, -1)
        return torch.gather(fk, 2, idx).view(K, C, out_h * spb, out_w * spb)

    grid = (
        (1 - tv) * (1 - tu) * gather(i0, j0)
        + (1 - tv) * tu * gather(i0, j1)
        + tv * (1 - tu) * gather(i1, j0)
        + tv * tu * gather(i1, j1)
    )
    valid = (valid_v.view(K, 1, out_h * spb, 1) & valid_u.view(K, 1, 1, out_w * spb)).to(dt)
    grid = grid * valid
    return F.avg_pool2d(grid, spb)


def roi_align_rois(
    features: torch.Tensor, rois: torch.Tensor, out_h: int, out_w: int, samples_per_bin: int = 2
) -> torch.Tensor:
    """ROI-align K boxes against a batch of feature maps.

    features: (B, C, Hf, Wf); rois: (K, 5) rows (batch_index, X0, Y0, X1, Y1)
    in continuous feature-map pixel coordinates. Returns (K, C, out_h, out_w).
    """
    K = rois.shape[0]
    if K == 0:
        return features.new_zeros((0, features.shape[1], out_h, out_w))
    parts = []
    for start in range(0, K, _ROI_CHUNK):
        parts.append(_roi_align_chunk(features, rois[start : start + _ROI_CHUNK], out_h, out_w, samples_per_bin))
    return torch.cat(parts, dim=0) if len(parts) > 1 else parts[0]
