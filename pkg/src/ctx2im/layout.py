"""Layout data model and COCO-style annotation ingestion.

A layout is an ordered list of (class, box) items on a fixed image
lattice. Boxes are stored center-normalized: (cx, cy) is the box center
and (w, h) its size, all relative to the lattice so every coordinate
lives in [0, 1]. Item order matters only for rendering z-order (later
items occlude earlier ones); the generative model itself treats the
items as a set.

The on-disk annotation format is a COCO-style JSON list::

    [
      {"image_id": "scene_00000", "width": 32, "height": 32,
       "boxes": [{"class": "disc", "x": 3.0, "y": 5.0, "w": 12.0, "h": 9.0}, ...]},
      ...
    ]

with pixel coordinates and (x, y) the top-left corner of the box. The
loader clips to the lattice and converts to normalized center form.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

DEFAULT_N_MAX = 8


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class ClassVocabulary:
    """Ordered class name list; index = class id."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) != len(set(self.names)):
            raise LayoutError("class names must be unique")
        if any(not n for n in self.names):
            raise LayoutError("class names must be non-empty")
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def count(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise LayoutError(f"unknown class name: {name!r}") from None


@dataclass(frozen=True)
class BBox:
    """Center-normalized bounding box: center (cx, cy), size (w, h), all in [0, 1]."""

    cx: float
    cy: float
    w: float
    h: float

    @property
    def x0(self) -> float:
        return self.cx - self.w / 2

    @property
    def x1(self) -> float:
        return self.cx + self.w / 2

    @property
    def y0(self) -> float:
        return self.cy - self.h / 2

    @property
    def y1(self) -> float:
        return self.cy + self.h / 2

    def clipped(self) -> "BBox":
        """Clip to the unit lattice and recompute center/size."""
        x0 = min(max(self.x0, 0.0), 1.0)
        x1 = min(max(self.x1, 0.0), 1.0)
        y0 = min(max(self.y0, 0.0), 1.0)
        y1 = min(max(self.y1, 0.0), 1.0)
        return BBox((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    def iou(self, other: "BBox") -> float:
        ix = max(0.0, min(self.x1, other.x1) - max(self.x0, other.x0))
        iy = max(0.0, min(self.y1, other.y1) - max(self.y0, other.y0))
        inter = ix * iy
        if inter <= 0.0:
            return 0.0
        union = self.w * self.h + other.w * other.h - inter
        return inter / union if union > 0 else 0.0


def pixel_rect(box: BBox, out_h: int, out_w: int) -> tuple[int, int, int, int]:
    """Round a normalized box to integer pixel edges on an out_h x out_w lattice.

    Edges are rounded half-up; the result (y0, y1, x0, x1) addresses the
    half-open pixel range [y0, y1) x [x0, x1) and may be empty.
    """
    c = box.clipped()
    x0 = int(math.floor(c.x0 * out_w + 0.5))
    x1 = int(math.floor(c.x1 * out_w + 0.5))
    y0 = int(math.floor(c.y0 * out_h + 0.5))
    y1 = int(math.floor(c.y1 * out_h + 0.5))
    x0, x1 = max(x0, 0), min(x1, out_w)
    y0, y1 = max(y0, 0), min(y1, out_h)
    return y0, y1, x0, x1


@dataclass(frozen=True)
class LayoutItem:
    class_id: int
    box: BBox


@dataclass
class Layout:
    items: list[LayoutItem]
    lattice_h: int
    lattice_w: int

    @property
    def n(self) -> int:
        return len(self.items)

    def boxes(self) -> list[BBox]:
        return [it.box for it in self.items]

    def class_ids(self) -> list[int]:
        return [it.class_id for it in self.items]


@dataclass
class SceneSample:
    """A rendered scene paired with its layout.

    image is a 3 x H x W float array in [-1, 1]; occlusion_pairs lists all
    item index pairs (i, j), i < j, whose clipped boxes overlap (IoU > 0).
    """

    image: object
    layout: Layout
    occlusion_pairs: list[tuple[int, int]]


def occlusion_pairs_of(layout: Layout) -> list[tuple[int, int]]:
    clipped = [it.box.clipped() for it in layout.items]
    pairs = []
    for i in range(len(clipped)):
        for j in range(i + 1, len(clipped)):
            if clipped[i].iou(clipped[j]) > 0.0:
                pairs.append((i, j))
    return pairs


@dataclass
class ValidationResult:
    ok: bool
    violations: list[str] = field(default_factory=list)


def validate_layout(layout: Layout, vocab: ClassVocabulary, n_max: int = DEFAULT_N_MAX) -> ValidationResult:
    """Check a layout against the data-model invariants.

    Returns a result object rather than raising; an empty violation list
    means the layout is well-formed.
    """
    violations: list[str] = []
    if layout.n == 0:
        violations.append("empty layout")
    if layout.n > n_max:
        violations.append(f"too many items: {layout.n} > {n_max}")
    if layout.lattice_h < 1 or layout.lattice_w < 1:
        violations.append("degenerate lattice")
    for idx, item in enumerate(layout.items):
        b = item.box
        if not (0.0 <= b.cx <= 1.0 and 0.0 <= b.cy <= 1.0):
            violations.append(f"item {idx}: center outside lattice")
        if not (0.0 < b.w <= 1.0 and 0.0 < b.h <= 1.0):
            violations.append(f"item {idx}: degenerate box")
        else:
            c = b.clipped()
            if c.w <= 0.0 or c.h <= 0.0:
                violations.append(f"item {idx}: degenerate box")
        if not (0 <= item.class_id < vocab.count):
            violations.append(f"item {idx}: bad class id {item.class_id}")
    return ValidationResult(ok=not violations, violations=violations)


def load_coco_style(
    path: str | Path,
    vocab: ClassVocabulary,
    n_min: int = 3,
    n_max: int = DEFAULT_N_MAX,
) -> list[tuple[str, Layout]]:
    """Load COCO-style layout annotations as (image_id, layout) pairs.

    Keeps layouts with n_min <= N <= n_max. Boxes are clipped to the
    lattice (clip, never reject); a box that clips to zero area is
    dropped with a warning. An empty result is a warning, not an error.
    """
    path = Path(path)
    try:
        records = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise LayoutError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(records, list):
        raise LayoutError(f"{path}: expected a top-level JSON list")

    layouts: list[tuple[str, Layout]] = []
    for rec_idx, rec in enumerate(records):
        try:
            image_id = str(rec.get("image_id", f"layout_{rec_idx:05d}"))
            width = int(rec["width"])
            height = int(rec["height"])
            raw_boxes = rec["boxes"]
        except (KeyError, TypeError, AttributeError) as exc:
            raise LayoutError(f"{path}: record {rec_idx} malformed: {exc}") from exc
        if width < 1 or height < 1:
            raise LayoutError(f"{path}: record {rec_idx} has a degenerate lattice")
        items: list[LayoutItem] = []
        for b in raw_boxes:
            class_id = vocab.index(str(b["class"]))
            x0 = min(max(float(b["x"]), 0.0), float(width))
            y0 = min(max(float(b["y"]), 0.0), float(height))
            x1 = min(max(float(b["x"]) + float(b["w"]), 0.0), float(width))
            y1 = min(max(float(b["y"]) + float(b["h"]), 0.0), float(height))
            if x1 <= x0 or y1 <= y0:
                logger.warning("%s: record %d: box clipped to zero area, dropped", path, rec_idx)
                continue
            box = BBox(
                cx=(x0 + x1) / 2 / width,
                cy=(y0 + y1) / 2 / height,
                w=(x1 - x0) / width,
                h=(y1 - y0) / height,
            )
            items.append(LayoutItem(class_id=class_id, box=box))
        if n_min <= len(items) <= n_max:
            layouts.append((image_id, Layout(items=items, lattice_h=height, lattice_w=width)))
    if not layouts:
        logger.warning("%s: no layouts with %d <= N <= %d", path, n_min, n_max)
    return layouts


def save_coco_style(
    path: str | Path,
    layouts: list[Layout],
    vocab: ClassVocabulary,
    image_ids: list[str] | None = None,
) -> None:
    records = []
    for idx, layout in enumerate(layouts):
        image_id = image_ids[idx] if image_ids is not None else f"layout_{idx:05d}"
        boxes = []
        for item in layout.items:
            b = item.box
            boxes.append(
                {
                    "class": vocab.names[item.class_id],
                    "x": b.x0 * layout.lattice_w,
                    "y": b.y0 * layout.lattice_h,
                    "w": b.w * layout.lattice_w,
                    "h": b.h * layout.lattice_h,
                }
            )
        records.append(
            {
                "image_id": image_id,
                "width": layout.lattice_w,
                "height": layout.lattice_h,
                "boxes": boxes,
            }
        )
    Path(path).write_text(json.dumps(records, indent=1))
