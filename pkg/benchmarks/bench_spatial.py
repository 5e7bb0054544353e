#!/usr/bin/env python3
"""Time the compiled spatial kernels against the pure-torch fallback.

The two batched operators dominate a training step's non-GEMM time:
``place_masks`` (one call per generator level, 512 masks at batch 64)
and ``roi_align_rois`` (one call per discriminator pass, ~320 rois at
batch 64). Workload shapes below mirror those call sites exactly.

Run from the repository root::

    python3 benchmarks/bench_spatial.py [--repeats N]
"""

import argparse
import statistics
import time

import torch

from ctx2im import spatial
from ctx2im.seeding import torch_gen


def median_ms(fn, repeats: int) -> float:
    fn()  # warm-up: first call pays allocator and code-path setup costs
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def make_workloads():
    gen = torch_gen(0)
    # generator mask placement: batch 64 x 8 boxes, 16x16 masks onto 32x32
    masks = torch.rand(512, 16, 16, generator=gen)
    boxes = torch.empty(512, 4)
    boxes[:, 0].uniform_(0.25, 0.75, generator=gen)  # cx
    boxes[:, 1].uniform_(0.25, 0.75, generator=gen)  # cy
    boxes[:, 2].uniform_(0.15, 0.5, generator=gen)  # w
    boxes[:, 3].uniform_(0.15, 0.5, generator=gen)  # h
    rects = spatial.rects_tensor(boxes, 32, 32)

    # discriminator roi pooling: batch 64 x 5 valid boxes on an 8x8 map
    feats = torch.randn(64, 64, 8, 8, generator=gen)
    dboxes = boxes[:320].view(64, 5, 4)
    n_valid = torch.full((64,), 5, dtype=torch.long)
    rois, _, _ = spatial.rois_tensor(dboxes, n_valid, 8, 8)

    return {
        "place_masks 512@16->32": lambda: spatial.place_masks(masks, rects, 32, 32),
        "roi_align 320 rois 8x8->4x4": lambda: spatial.roi_align_rois(feats, rois, 4, 4),
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=50, help="timed calls per cell")
    args = parser.parse_args()

    backends = spatial.available_backends()
    if "ext" not in backends:
        print("compiled extension not available; timing the torch fallback only")

    workloads = make_workloads()
    previous = spatial.get_backend()
    results: dict[str, dict[str, float]] = {name: {} for name in workloads}
    try:
        # agreement check first so the numbers compare identical results
        outputs = {}
        for backend in backends:
            spatial.set_backend(backend)
            outputs[backend] = {name: fn() for name, fn in workloads.items()}
        if "ext" in outputs:
            for name in workloads:
                ok = torch.allclose(outputs["ext"][name], outputs["torch"][name], atol=1e-5)
                assert ok, f"backends disagree on {name}"

        for backend in backends:
            spatial.set_backend(backend)
            for name, fn in workloads.items():
                results[name][backend] = median_ms(fn, args.repeats)
    finally:
        spatial.set_backend(previous)

    width = max(len(name) for name in results) + 2
    header = f"{'workload':<{width}}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name, cells in results.items():
        line = f"{name:<{width}}" + "".join(f"{cells[b]:>10.2f}ms" for b in backends)
        if len(backends) == 2:
            line += f"{cells['torch'] / cells['ext']:>9.1f}x"
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
