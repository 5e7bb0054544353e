# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled spatial placement kernels.

Same sampling conventions as ``_torch_impl`` (that module's docstring is
the reference); these loops avoid the large intermediate gather tensors
the pure-torch path materializes, which is what makes them worth
compiling: they run once per box per decoder level per training step.
"""

from libc.math cimport floor
from libc.stdint cimport int64_t

ctypedef fused floating:
    float
    double


cdef inline void _corner(double coord, Py_ssize_t limit,
                         Py_ssize_t* lo, Py_ssize_t* hi, double* frac) noexcept nogil:
    cdef double c = coord
    cdef double f
    if c < 0.0:
        c = 0.0
    elif c > limit - 1:
        c = limit - 1
    f = floor(c)
    lo[0] = <Py_ssize_t> f
    hi[0] = lo[0] + 1
    if hi[0] > limit - 1:
        hi[0] = limit - 1
    frac[0] = c - f


def place_masks_fwd(floating[:, :, ::1] masks,
                    const int64_t[:, ::1] rects,
                    floating[:, :, ::1] out):
    cdef Py_ssize_t K = masks.shape[0]
    cdef Py_ssize_t hm = masks.shape[1]
    cdef Py_ssize_t wm = masks.shape[2]
    cdef Py_ssize_t H = out.shape[1]
    cdef Py_ssize_t W = out.shape[2]
    cdef Py_ssize_t k, y, x, y0, y1, x0, x1, i0, i1, j0, j1
    cdef double bh, bw, v, u, tv, tu
    with nogil:
        for k in range(K):
            for y in range(H):
                for x in range(W):
                    out[k, y, x] = 0
            y0 = rects[k, 0]; y1 = rects[k, 1]
            x0 = rects[k, 2]; x1 = rects[k, 3]
            if y1 <= y0 or x1 <= x0:
                continue
            bh = y1 - y0
            bw = x1 - x0
            for y in range(y0, y1):
                v = (y - y0 + 0.5) * hm / bh - 0.5
                _corner(v, hm, &i0, &i1, &tv)
                for x in range(x0, x1):
                    u = (x - x0 + 0.5) * wm / bw - 0.5
                    _corner(u, wm, &j0, &j1, &tu)
                    out[k, y, x] = <floating> (
                        (1 - tv) * (1 - tu) * masks[k, i0, j0]
                        + (1 - tv) * tu * masks[k, i0, j1]
                        + tv * (1 - tu) * masks[k, i1, j0]
                        + tv * tu * masks[k, i1, j1])


def place_masks_bwd(floating[:, :, ::1] grad_out,
                    const int64_t[:, ::1] rects,
                    floating[:, :, ::1] grad_masks):
    cdef Py_ssize_t K = grad_masks.shape[0]
    cdef Py_ssize_t hm = grad_masks.shape[1]
    cdef Py_ssize_t wm = grad_masks.shape[2]
    cdef Py_ssize_t k, y, x, y0, y1, x0, x1, i0, i1, j0, j1
    cdef double bh, bw, v, u, tv, tu, g
    with nogil:
        for k in range(K):
            y0 = rects[k, 0]; y1 = rects[k, 1]
            x0 = rects[k, 2]; x1 = rects[k, 3]
            if y1 <= y0 or x1 <= x0:
                continue
            bh = y1 - y0
            bw = x1 - x0
            for y in range(y0, y1):
                v = (y - y0 + 0.5) * hm / bh - 0.5
                _corner(v, hm, &i0, &i1, &tv)
                for x in range(x0, x1):
                    u = (x - x0 + 0.5) * wm / bw - 0.5
                    _corner(u, wm, &j0, &j1, &tu)
                    g = grad_out[k, y, x]
                    grad_masks[k, i0, j0] += <floating> ((1 - tv) * (1 - tu) * g)
                    grad_masks[k, i0, j1] += <floating> ((1 - tv) * tu * g)
                    grad_masks[k, i1, j0] += <floating> (tv * (1 - tu) * g)
                    grad_masks[k, i1, j1] += <floating> (tv * tu * g)


def roi_align_fwd(floating[:, :, :, ::1] features,
                  floating[:, ::1] rois,
                  floating[:, :, :, ::1] out,
                  Py_ssize_t spb):
    cdef Py_ssize_t B = features.shape[0]
    cdef Py_ssize_t C = features.shape[1]
    cdef Py_ssize_t Hf = features.shape[2]
    cdef Py_ssize_t Wf = features.shape[3]
    cdef Py_ssize_t K = out.shape[0]
    cdef Py_ssize_t oh = out.shape[2]
    cdef Py_ssize_t ow = out.shape[3]
    cdef Py_ssize_t k, b, c, i, j, sy, sx, i0, i1, j0, j1
    cdef double X0, Y0, bin_h, bin_w, y, x, v, u, tv, tu, acc
    cdef double inv = 1.0 / (spb * spb)
    with nogil:
        for k in range(K):
            b = <Py_ssize_t> rois[k, 0]
            X0 = rois[k, 1]; Y0 = rois[k, 2]
            bin_w = (rois[k, 3] - X0) / ow
            bin_h = (rois[k, 4] - Y0) / oh
            for i in range(oh):
                for j in range(ow):
                    for c in range(C):
                        out[k, c, i, j] = 0
                    for sy in range(spb):
                        y = Y0 + (i + (sy + 0.5) / spb) * bin_h
                        v = y - 0.5
                        if v < -1.0 or v > Hf:
                            continue
                        _corner(v, Hf, &i0, &i1, &tv)
                        for sx in range(spb):
                            x = X0 + (j + (sx + 0.5) / spb) * bin_w
                            u = x - 0.5
                            if u < -1.0 or u > Wf:
                                continue
                            _corner(u, Wf, &j0, &j1, &tu)
                            for c in range(C):
                                acc = ((1 - tv) * (1 - tu) * features[b, c, i0, j0]
                                       + (1 - tv) * tu * features[b, c, i0, j1]
                                       + tv * (1 - tu) * features[b, c, i1, j0]
                                       + tv * tu * features[b, c, i1, j1])
                                out[k, c, i, j] += <floating> (acc * inv)


def roi_align_bwd(floating[:, :, :, ::1] grad_out,
                  floating[:, ::1] rois,
                  floating[:, :, :, ::1] grad_features,
                  Py_ssize_t spb):
    cdef Py_ssize_t C = grad_features.shape[1]
    cdef Py_ssize_t Hf = grad_features.shape[2]
    cdef Py_ssize_t Wf = grad_features.shape[3]
    cdef Py_ssize_t K = grad_out.shape[0]
    cdef Py_ssize_t oh = grad_out.shape[2]
    cdef Py_ssize_t ow = grad_out.shape[3]
    cdef Py_ssize_t k, b, c, i, j, sy, sx, i0, i1, j0, j1
    cdef double X0, Y0, bin_h, bin_w, y, x, v, u, tv, tu, g
    cdef double inv = 1.0 / (spb * spb)
    with nogil:
        for k in range(K):
            b = <Py_ssize_t> rois[k, 0]
            X0 = rois[k, 1]; Y0 = rois[k, 2]
            bin_w = (rois[k, 3] - X0) / ow
            bin_h = (rois[k, 4] - Y0) / oh
            for i in range(oh):
                for j in range(ow):
                    for sy in range(spb):
                        y = Y0 + (i + (sy + 0.5) / spb) * bin_h
                        v = y - 0.5
                        if v < -1.0 or v > Hf:
                            continue
                        _corner(v, Hf, &i0, &i1, &tv)
                        for sx in range(spb):
                            x = X0 + (j + (sx + 0.5) / spb) * bin_w
                            u = x - 0.5
                            if u < -1.0 or u > Wf:
                                continue
                            _corner(u, Wf, &j0, &j1, &tu)
                            for c in range(C):
                                g = grad_out[k, c, i, j] * inv
                                grad_features[b, c, i0, j0] += <floating> ((1 - tv) * (1 - tu) * g)
                                grad_features[b, c, i0, j1] += <floating> ((1 - tv) * tu * g)
                                grad_features[b, c, i1, j0] += <floating> (tv * (1 - tu) * g)
                                grad_features[b, c, i1, j1] += <floating> (tv * tu * g)
