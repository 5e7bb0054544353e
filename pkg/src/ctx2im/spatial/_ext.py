"""Autograd bridge over the compiled kernels.

The compiled module only sees contiguous CPU float32/float64 buffers;
these Function wrappers own the tensor plumbing and hand autograd the
hand-derived backward kernels (both operators are linear in their data
argument, so the backward is the transposed scatter of the forward
gather).
"""

from __future__ import annotations

import torch

from . import _kernels


class PlaceMasksFn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, masks, rects, out_h, out_w):
        masks_c = masks.detach().contiguous()
        rects_c = rects.detach().to(torch.int64).contiguous()
        out = torch.empty((masks_c.shape[0], out_h, out_w), dtype=masks_c.dtype)
        _kernels.place_masks_fwd(masks_c.numpy(), rects_c.numpy(), out.numpy())
        ctx.save_for_backward(rects_c)
        ctx.mask_shape = tuple(masks_c.shape)
        return out

    @staticmethod
    def backward(ctx, grad_out):
        (rects,) = ctx.saved_tensors
        grad_masks = torch.zeros(ctx.mask_shape, dtype=grad_out.dtype)
        _kernels.place_masks_bwd(
            grad_out.detach().contiguous().numpy(), rects.numpy(), grad_masks.numpy()
        )
        return grad_masks, None, None, None


class RoiAlignFn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, features, rois, out_h, out_w, samples_per_bin):
        feats_c = features.detach().contiguous()
        rois_c = rois.detach().to(feats_c.dtype).contiguous()
        out = torch.empty(
            (rois_c.shape[0], feats_c.shape[1], out_h, out_w), dtype=feats_c.dtype
        )
        _kernels.roi_align_fwd(feats_c.numpy(), rois_c.numpy(), out.numpy(), samples_per_bin)
        ctx.save_for_backward(rois_c)
        ctx.feat_shape = tuple(feats_c.shape)
        ctx.spb = samples_per_bin
        return out

    @staticmethod
    def backward(ctx, grad_out):
        (rois,) = ctx.saved_tensors
        grad_features = torch.zeros(ctx.feat_shape, dtype=grad_out.dtype)
        _kernels.roi_align_bwd(
            grad_out.detach().contiguous().numpy(),
            rois.to(grad_out.dtype).contiguous().numpy(),
            grad_features.numpy(),
            ctx.spb,
        )
        return grad_features, None, None, None, None


def place_masks(masks, rects, out_h, out_w):
    return PlaceMasksFn.apply(masks, rects, out_h, out_w)


def roi_align_rois(features, rois, out_h, out_w, samples_per_bin=2):
    return RoiAlignFn.apply(features, rois, out_h, out_w, samples_per_bin)
