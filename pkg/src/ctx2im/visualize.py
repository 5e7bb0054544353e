"""Progressive-layout visualization: grow a layout one box at a time.

For each prefix of the addition list we render three PNGs — a layout
diagram, the per-level mask composites, and the generated image — all
from the *same* seed, with per-box noise tied to box index. Boxes shared
between consecutive rows therefore keep their noise, and any change in
their masks or pixels is attributable to the context transform seeing
the newly added box.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from .generator import Generator, sample_image, save_image_png
from .layout import BBox, ClassVocabulary, Layout, LayoutItem, validate_layout

PALETTE = (
    (230, 80, 80),
    (80, 200, 80),
    (90, 120, 240),
    (235, 210, 80),
    (220, 90, 220),
    (90, 220, 220),
    (240, 150, 60),
    (160, 160, 160),
)


def _to_gray_png(mask: np.ndarray) -> Image.Image:
    arr = np.clip(np.rint(mask * 255.0), 0, 255).astype(np.uint8)
    return Image.fromarray(arr, mode="L")


def draw_layout(layout: Layout, scale: int = 4) -> Image.Image:
    """Box outlines color-coded by class on a dark canvas."""
    W, H = layout.lattice_w * scale, layout.lattice_h * scale
    img = Image.new("RGB", (W, H), (24, 24, 24))
    d = ImageDraw.Draw(img)
    for item in layout.items:
        b = item.box.clipped()
        color = PALETTE[item.class_id % len(PALETTE)]
        d.rectangle(
            [b.x0 * W, b.y0 * H, max(b.x0 * W, b.x1 * W - 1), max(b.y0 * H, b.y1 * H - 1)],
            outline=color,
        )
    return img


def mask_composites(placed: dict[int, torch.Tensor]) -> dict[int, np.ndarray]:
    """Per level, the pixel-wise max over boxes of the placed soft masks."""
    out = {}
    for size, masks in placed.items():
        if masks.shape[0] == 0:
            out[size] = np.zeros((size, size), dtype=np.float64)
        else:
            out[size] = masks.amax(dim=0).double().numpy()
    return out


def mask_strip(composites: dict[int, np.ndarray], height: int = 64) -> Image.Image:
    """All levels side by side, nearest-upscaled to a common height."""
    tiles = []
    for size in sorted(composites):
        img = _to_gray_png(composites[size]).resize((height, height), Image.NEAREST)
        tiles.append(np.asarray(img))
        tiles.append(np.full((height, 2), 255, dtype=np.uint8))
    strip = np.concatenate(tiles[:-1], axis=1)
    return Image.fromarray(strip, mode="L")


def progressive_visualize(
    base_layout: Layout,
    additions: list[LayoutItem],
    g: Generator,
    out_dir: str | Path,
    seed: int = 0,
) -> list[dict]:
    """Render one row per layout prefix; rows carry paths, composites, and
    the per-box placed masks at every level."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(len(additions) + 1):
        layout = Layout(
            items=list(base_layout.items) + list(additions[:k]),
            lattice_h=base_layout.lattice_h,
            lattice_w=base_layout.lattice_w,
        )
        image, parts = sample_image(g, layout, seed, return_parts=True)
        composites = mask_composites(parts["placed"])
        layout_png = out_dir / f"row{k}_layout.png"
        mask_png = out_dir / f"row{k}_mask.png"
        image_png = out_dir / f"row{k}_image.png"
        draw_layout(layout).save(layout_png)
        mask_strip(composites).save(mask_png)
        save_image_png(image, image_png)
        rows.append(
            {
                "layout": layout,
                "layout_png": layout_png,
                "mask_png": mask_png,
                "image_png": image_png,
                "composites": composites,
                "placed": {s: m.double().numpy() for s, m in parts["placed"].items()},
            }
        )
    return rows


def load_progressive_spec(
    path: str | Path, vocab: ClassVocabulary, lattice: int = 32
) -> tuple[Layout, list[LayoutItem]]:
    """Parse {"base": [...], "additions": [...]} item lists for the visualizer.

    Items are {"class": name or id, "box": [cx, cy, w, h]}.
    """
    with open(path) as f:
        spec = json.load(f)

    def parse_item(obj) -> LayoutItem:
        cls = obj["class"]
        class_id = vocab.index(cls) if isinstance(cls, str) else int(cls)
        cx, cy, w, h = (float(v) for v in obj["box"])
        return LayoutItem(class_id=class_id, box=BBox(cx, cy, w, h))

    try:
        base_items = [parse_item(o) for o in spec["base"]]
        additions = [parse_item(o) for o in spec.get("additions", [])]
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise ValueError(f"malformed layout spec {path}: {e}") from e
    base = Layout(items=base_items, lattice_h=lattice, lattice_w=lattice)
    result = validate_layout(
        Layout(items=base_items + additions, lattice_h=lattice, lattice_w=lattice),
        vocab,
        n_max=len(base_items) + len(additions),
    )
    if not result.ok:
        raise ValueError(f"malformed layout spec {path}: {'; '.join(result.violations)}")
    return base, additions
