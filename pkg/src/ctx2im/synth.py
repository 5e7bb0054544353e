"""Procedural synthetic scene dataset.

Scenes are composed from a small vocabulary of "thing" classes (countable
foreground shapes) and "stuff" classes (background fills). Every thing
class has a characteristic shape and texture, both defined analytically
on box-normalized coordinates, so the appearance inside a box is an
exact, recomputable function of (class, box). That makes the rendered
image a ground-truth oracle: appearance-fidelity losses have a
measurable target, and tests can check rendering pixel-exactly.

Rendering rules:
  * the canvas starts at a uniform dark gray,
  * items paint in list order, so later items occlude earlier ones,
  * the layout sampler emits the stuff item first and things in
    decreasing box-area order, which makes the z-order a deterministic
    function of the geometry (a permutation-equivariant model can learn
    "smaller box wins the overlap" without seeing list positions).

Thing textures are anchored to the box (u, v in [0, 1) across the box),
so a class looks the same wherever and at whatever size it is placed.
Stuff textures are anchored to the lattice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layout import (
    BBox,
    ClassVocabulary,
    Layout,
    LayoutItem,
    SceneSample,
    occlusion_pairs_of,
    pixel_rect,
)
from .seeding import np_rng

BASE_COLOR = (-0.85, -0.85, -0.85)

THING_NAMES = ("disc", "square", "triangle", "ring", "cross", "bar")
STUFF_NAMES = ("striped", "gradient")


@dataclass
class SynthConfig:
    image_size: int = 32
    n_min: int = 3
    n_max: int = 8
    things: tuple = THING_NAMES
    stuffs: tuple = STUFF_NAMES
    thing_min_size: float = 0.28
    thing_max_size: float = 0.55
    stuff_min_size: float = 0.85
    occlusion_prob: float = 0.5
    ensure_occlusion: bool = False

    def __post_init__(self):
        self.things = tuple(self.things)
        self.stuffs = tuple(self.stuffs)
        if self.image_size not in (32, 64):
            raise ValueError("image_size must be 32 or 64")
        if len(self.things) < 6:
            raise ValueError("need at least 6 thing classes")
        if len(self.stuffs) < 2:
            raise ValueError("need at least 2 stuff classes")
        unknown = [n for n in self.things + self.stuffs if n not in TEXTURES]
        if unknown:
            raise ValueError(f"no texture registered for classes: {unknown}")

    def vocab(self) -> ClassVocabulary:
        return ClassVocabulary(self.things + self.stuffs)

    def n_things_classes(self) -> int:
        return len(self.things)


def _box_grids(rect):
    y0, y1, x0, x1 = rect
    bh, bw = y1 - y0, x1 - x0
    v = (np.arange(bh, dtype=np.float32) + 0.5) / bh
    u = (np.arange(bw, dtype=np.float32) + 0.5) / bw
    return np.meshgrid(v, u, indexing="ij")


def _two_tone(band, color_a, color_b):
    rgb = np.where(band[..., None] > 0, np.float32(color_b), np.float32(color_a))
    return rgb.astype(np.float32)


def _lerp_color(t, color_a, color_b):
    a = np.float32(color_a)
    b = np.float32(color_b)
    return (a + (b - a) * t[..., None].astype(np.float32)).astype(np.float32)


def _tex_disc(rect, H, W):
    v, u = _box_grids(rect)
    mask = (u - 0.5) ** 2 + (v - 0.5) ** 2 <= 0.25
    band = np.floor(v * 4).astype(np.int64) % 2
    return _two_tone(band, (0.90, 0.15, -0.30), (0.35, -0.40, -0.55)), mask


def _tex_square(rect, H, W):
    v, u = _box_grids(rect)
    mask = np.ones_like(u, dtype=bool)
    band = (np.floor(u * 4) + np.floor(v * 4)).astype(np.int64) % 2
    return _two_tone(band, (-0.10, 0.85, -0.10), (-0.55, 0.20, -0.55)), mask


def _tex_triangle(rect, H, W):
    v, u = _box_grids(rect)
    mask = np.abs(u - 0.5) <= v / 2
    band = np.floor(u * 4).astype(np.int64) % 2
    return _two_tone(band, (-0.10, 0.10, 0.95), (0.40, 0.50, 0.95)), mask


def _tex_ring(rect, H, W):
    v, u = _box_grids(rect)
    r2 = (u - 0.5) ** 2 + (v - 0.5) ** 2
    mask = (r2 <= 0.25) & (r2 >= 0.075)
    band = np.floor(np.sqrt(r2) / 0.5 * 3).astype(np.int64) % 2
    return _two_tone(band, (0.95, 0.80, -0.20), (0.55, 0.40, -0.45)), mask


def _tex_cross(rect, H, W):
    v, u = _box_grids(rect)
    mask = (np.abs(u - 0.5) <= 1 / 6) | (np.abs(v - 0.5) <= 1 / 6)
    band = np.floor((u + v) * 3).astype(np.int64) % 2
    return _two_tone(band, (0.85, -0.25, 0.85), (0.30, -0.60, 0.45)), mask


def _tex_bar(rect, H, W):
    v, u = _box_grids(rect)
    mask = np.abs(v - 0.5) <= 1 / 6
    return _lerp_color(u, (-0.30, 0.55, 0.60), (0.25, 0.95, 1.0)), mask


def _tex_striped(rect, H, W):
    y0, y1, x0, x1 = rect
    py, px = np.meshgrid(np.arange(y0, y1), np.arange(x0, x1), indexing="ij")
    band = ((px + py) // 4) % 2
    mask = np.ones_like(px, dtype=bool)
    return _two_tone(band, (-0.50, -0.50, -0.38), (-0.70, -0.70, -0.58)), mask


def _tex_gradient(rect, H, W):
    y0, y1, x0, x1 = rect
    py = np.arange(y0, y1, dtype=np.float32)
    g = (py + 0.5) / H
    grad = np.broadcast_to(g[:, None], (y1 - y0, x1 - x0))
    mask = np.ones_like(grad, dtype=bool)
    return _lerp_color(grad, (-0.78, -0.68, -0.58), (-0.38, -0.30, -0.22)), mask


TEXTURES = {
    "disc": _tex_disc,
    "square": _tex_square,
    "triangle": _tex_triangle,
    "ring": _tex_ring,
    "cross": _tex_cross,
    "bar": _tex_bar,
    "striped": _tex_striped,
    "gradient": _tex_gradient,
}


def render_item(class_name: str, rect, H: int, W: int):
    """Render one item's (rgb, coverage mask) patch for the given pixel rect."""
    return TEXTURES[class_name](rect, H, W)


def render_scene(layout: Layout, vocab: ClassVocabulary) -> SceneSample:
    """Paint a layout onto the canvas. Later items overwrite earlier ones."""
    H, W = layout.lattice_h, layout.lattice_w
    canvas = np.empty((H, W, 3), dtype=np.float32)
    canvas[:] = np.float32(BASE_COLOR)
    for item in layout.items:
        rect = pixel_rect(item.box, H, W)
        y0, y1, x0, x1 = rect
        if y1 <= y0 or x1 <= x0:
            continue
        rgb, mask = render_item(vocab.names[item.class_id], rect, H, W)
        region = canvas[y0:y1, x0:x1]
        region[mask] = rgb[mask]
    image = np.ascontiguousarray(canvas.transpose(2, 0, 1))
    return SceneSample(image=image, layout=layout, occlusion_pairs=occlusion_pairs_of(layout))


def _things_overlap(things: list[LayoutItem]) -> bool:
    for i in range(len(things)):
        for j in range(i + 1, len(things)):
            if things[i].box.clipped().iou(things[j].box.clipped()) > 0:
                return True
    return False


def _sample_thing(rng, cfg: SynthConfig) -> LayoutItem:
    cls = int(rng.integers(len(cfg.things)))
    w = float(rng.uniform(cfg.thing_min_size, cfg.thing_max_size))
    h = float(rng.uniform(cfg.thing_min_size, cfg.thing_max_size))
    cx = float(rng.uniform(w / 2, 1 - w / 2))
    cy = float(rng.uniform(h / 2, 1 - h / 2))
    return LayoutItem(class_id=cls, box=BBox(cx, cy, w, h))


def _pull_together(rng, anchor: LayoutItem, other: LayoutItem) -> LayoutItem:
    """Re-center `other` near `anchor` so the two boxes very likely overlap."""
    a, b = anchor.box, other.box
    cx = a.cx + float(rng.uniform(-0.5, 0.5)) * (a.w + b.w) / 2
    cy = a.cy + float(rng.uniform(-0.5, 0.5)) * (a.h + b.h) / 2
    cx = min(max(cx, b.w / 2), 1 - b.w / 2)
    cy = min(max(cy, b.h / 2), 1 - b.h / 2)
    return LayoutItem(class_id=other.class_id, box=BBox(cx, cy, b.w, b.h))


def sample_layout(rng: np.random.Generator, cfg: SynthConfig) -> Layout:
    """Draw one layout: a stuff background item plus area-sorted things."""
    n_total = int(rng.integers(cfg.n_min, cfg.n_max + 1))
    stuff_cls = len(cfg.things) + int(rng.integers(len(cfg.stuffs)))
    sw = float(rng.uniform(cfg.stuff_min_size, 1.0))
    sh = float(rng.uniform(cfg.stuff_min_size, 1.0))
    stuff = LayoutItem(
        class_id=stuff_cls,
        box=BBox(float(rng.uniform(0.45, 0.55)), float(rng.uniform(0.45, 0.55)), sw, sh),
    )
    things = [_sample_thing(rng, cfg) for _ in range(n_total - 1)]

    if len(things) >= 2 and rng.random() < cfg.occlusion_prob:
        a = int(rng.integers(len(things)))
        b = (a + 1 + int(rng.integers(len(things) - 1))) % len(things)
        things[b] = _pull_together(rng, things[a], things[b])
    if cfg.ensure_occlusion and len(things) >= 2:
        tries = 0
        while not _things_overlap(things) and tries < 20:
            things[1] = _pull_together(rng, things[0], things[1])
            tries += 1
        if not _things_overlap(things):
            b = things[1].box
            things[1] = LayoutItem(things[1].class_id, BBox(things[0].box.cx, things[0].box.cy, b.w, b.h))

    things.sort(key=lambda it: it.box.w * it.box.h, reverse=True)
    size = cfg.image_size
    return Layout(items=[stuff] + things, lattice_h=size, lattice_w=size)


def synth_scene(seed: int, cfg: SynthConfig) -> SceneSample:
    """Deterministically synthesize one scene from a seed."""
    rng = np_rng(seed)
    layout = sample_layout(rng, cfg)
    return render_scene(layout, cfg.vocab())


def sample_single_thing_layout(rng: np.random.Generator, cfg: SynthConfig) -> tuple[Layout, int]:
    """One stuff background plus exactly one thing; returns (layout, thing class id).

    Used to train the evaluation classifier: the label of such a scene is
    unambiguous.
    """
    stuff_cls = len(cfg.things) + int(rng.integers(len(cfg.stuffs)))
    sw = float(rng.uniform(cfg.stuff_min_size, 1.0))
    sh = float(rng.uniform(cfg.stuff_min_size, 1.0))
    stuff = LayoutItem(
        class_id=stuff_cls,
        box=BBox(float(rng.uniform(0.45, 0.55)), float(rng.uniform(0.45, 0.55)), sw, sh),
    )
    thing = _sample_thing(rng, cfg)
    size = cfg.image_size
    layout = Layout(items=[stuff, thing], lattice_h=size, lattice_w=size)
    return layout, thing.class_id
