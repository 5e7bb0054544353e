"""Progressive visualization: composites, PNG artifacts, spec parsing."""

import json

import numpy as np
import pytest
import torch
from PIL import Image

from ctx2im.generator import Generator
from ctx2im.layout import BBox, ClassVocabulary, Layout, LayoutItem, pixel_rect
from ctx2im.visualize import (
    PALETTE,
    draw_layout,
    load_progressive_spec,
    mask_composites,
    mask_strip,
    progressive_visualize,
)

VOCAB = ClassVocabulary(("a", "b", "c", "d", "e", "f", "g", "h"))


def _layout(rects_and_classes, lattice=32):
    items = [LayoutItem(c, BBox(*r)) for r, c in rects_and_classes]
    return Layout(items, lattice, lattice)


def test_draw_layout_outlines_boxes_in_class_colors():
    layout = _layout([((0.5, 0.5, 0.5, 0.5), 1)])
    img = draw_layout(layout, scale=4)
    assert img.size == (128, 128)
    px = np.asarray(img)
    # top-left outline corner of the box (x0, y0) = (0.25, 0.25) of 128
    assert tuple(px[32, 32]) == PALETTE[1]
    assert tuple(px[0, 0]) == (24, 24, 24)  # background untouched


def test_mask_composites_take_pixelwise_max_over_boxes():
    masks = torch.zeros(2, 4, 4)
    masks[0, :2] = 0.6
    masks[1, 1:3] = 0.9
    comp = mask_composites({4: masks})
    want = np.maximum(masks[0].numpy(), masks[1].numpy())
    assert np.array_equal(comp[4], want)

    empty = mask_composites({4: torch.zeros(0, 4, 4)})
    assert np.array_equal(empty[4], np.zeros((4, 4)))


def test_mask_strip_tiles_levels_left_to_right():
    comp = {4: np.zeros((4, 4)), 8: np.ones((8, 8))}
    strip = mask_strip(comp, height=16)
    arr = np.asarray(strip)
    assert arr.shape == (16, 16 + 2 + 16)
    assert (arr[:, :16] == 0).all()
    assert (arr[:, 16:18] == 255).all()  # separator
    assert (arr[:, 18:] == 255).all()


def _fresh_generator(use_context=True):
    return Generator(len(VOCAB.names), use_context=use_context, seed=77)


def test_progressive_rows_count_and_file_naming(tmp_path):
    g = _fresh_generator()
    base = _layout([((0.3, 0.3, 0.4, 0.4), 0)])
    additions = [
        LayoutItem(2, BBox(0.7, 0.6, 0.3, 0.3)),
        LayoutItem(3, BBox(0.5, 0.8, 0.25, 0.25)),
    ]
    rows = progressive_visualize(base, additions, g, tmp_path, seed=3)
    assert len(rows) == 3
    for k, row in enumerate(rows):
        assert row["layout"].n == 1 + k
        for kind in ("layout", "mask", "image"):
            path = tmp_path / f"row{k}_{kind}.png"
            assert path.exists()
            assert row[f"{kind}_png"] == path
    # first row is the bare base layout
    assert rows[0]["layout"].items == base.items


def test_progressive_with_no_additions_renders_single_row(tmp_path):
    g = _fresh_generator()
    rows = progressive_visualize(_layout([((0.5, 0.5, 0.5, 0.5), 0)]), [], g, tmp_path, seed=1)
    assert len(rows) == 1
    assert (tmp_path / "row0_image.png").exists()
    assert not (tmp_path / "row1_image.png").exists()


def test_progressive_outputs_are_deterministic(tmp_path):
    g = _fresh_generator()
    base = _layout([((0.3, 0.3, 0.4, 0.4), 0)])
    additions = [LayoutItem(2, BBox(0.7, 0.6, 0.3, 0.3))]
    rows_a = progressive_visualize(base, additions, g, tmp_path / "a", seed=3)
    rows_b = progressive_visualize(base, additions, g, tmp_path / "b", seed=3)
    for ra, rb in zip(rows_a, rows_b):
        for kind in ("layout_png", "mask_png", "image_png"):
            assert ra[kind].read_bytes() == rb[kind].read_bytes()
        for size in ra["composites"]:
            assert np.array_equal(ra["composites"][size], rb["composites"][size])


def test_adding_a_box_only_raises_the_composite_inside_it(tmp_path):
    """Without context, old masks keep their noise, so the composite can
    move only under the new box's rectangle (and only upward). Outside it
    the rows agree to convolution batch-shape rounding."""
    g = _fresh_generator(use_context=False)
    base = _layout([((0.25, 0.25, 0.35, 0.35), 0)])
    new_box = BBox(0.75, 0.75, 0.3, 0.3)
    rows = progressive_visualize(base, [LayoutItem(4, new_box)], g, tmp_path, seed=11)
    for size, before in rows[0]["composites"].items():
        after = rows[1]["composites"][size]
        y0, y1, x0, x1 = pixel_rect(new_box, size, size)
        inside = np.zeros((size, size), dtype=bool)
        inside[y0:y1, x0:x1] = True
        assert np.allclose(after[~inside], before[~inside], atol=1e-6)
        assert (after[inside] >= before[inside] - 1e-6).all()
        assert (after[inside] - before[inside]).max() > 0.01


def test_load_progressive_spec_accepts_names_and_ids(tmp_path):
    spec = {
        "base": [{"class": "a", "box": [0.3, 0.3, 0.4, 0.4]}],
        "additions": [
            {"class": 2, "box": [0.7, 0.6, 0.3, 0.3]},
            {"class": "d", "box": [0.5, 0.8, 0.2, 0.2]},
        ],
    }
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    base, additions = load_progressive_spec(path, VOCAB)
    assert [it.class_id for it in base.items] == [0]
    assert [it.class_id for it in additions] == [2, 3]
    assert base.lattice_h == base.lattice_w == 32
    assert additions[1].box == BBox(0.5, 0.8, 0.2, 0.2)

    no_adds = tmp_path / "no_adds.json"
    no_adds.write_text(json.dumps({"base": spec["base"]}))
    _, additions = load_progressive_spec(no_adds, VOCAB)
    assert additions == []


def test_load_progressive_spec_rejects_malformed_input(tmp_path):
    cases = [
        {"additions": []},  # missing base
        {"base": [{"class": "a"}]},  # missing box
        {"base": [{"class": "a", "box": [0.3, 0.3]}]},  # short box
        {"base": [{"class": "nope", "box": [0.3, 0.3, 0.4, 0.4]}]},  # unknown name
    ]
    for i, spec in enumerate(cases):
        path = tmp_path / f"bad{i}.json"
        path.write_text(json.dumps(spec))
        with pytest.raises(ValueError, match="malformed layout spec"):
            load_progressive_spec(path, VOCAB)

    # structurally fine but semantically invalid: zero-area box
    path = tmp_path / "degenerate.json"
    path.write_text(json.dumps({"base": [{"class": "a", "box": [0.3, 0.3, 0.0, 0.4]}]}))
    with pytest.raises(ValueError, match="degenerate box"):
        load_progressive_spec(path, VOCAB)
