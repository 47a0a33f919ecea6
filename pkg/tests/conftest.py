"""Shared fixture: a six-image dataset with two planted channel-signature
objects, small enough for every pipeline stage to run in well under a second."""

import numpy as np
import pytest

from objdisco.store import ActivationMap, PixelBox, Query, save_activation, save_manifest

STRIDE = 16
SHAPE = (10, 10, 12)
OBJECT_CHANNELS = {"A": (3, 4, 5), "B": (6, 7, 8)}
# (image-id, object, 1-based inclusive cell box as top,left,bottom,right)
LAYOUT = [
    ("img0", "A", (2, 2, 4, 5)),
    ("img1", "B", (5, 4, 7, 7)),
    ("img2", "A", (6, 3, 8, 6)),
    ("img3", "B", (2, 5, 4, 8)),
    ("img4", "A", (4, 6, 6, 9)),
    ("img5", "B", (7, 2, 9, 5)),
]


def cell_box_to_pixels(box):
    top, left, bottom, right = box
    return PixelBox(
        top=(top - 1) * STRIDE,
        left=(left - 1) * STRIDE,
        bottom=bottom * STRIDE - 1,
        right=right * STRIDE - 1,
    )


def build_tiny_dataset(root):
    """Write tensors plus manifest, queries, labels, and box sidecars under
    root; returns the manifest path."""
    rng = np.random.default_rng(1234)
    h, w, c = SHAPE
    entries = []
    boxes = []
    for image_id, obj, cell_box in LAYOUT:
        values = np.zeros(SHAPE, dtype=np.float32)
        # weak widespread background on the first three channels
        stuff = rng.random((h, w, 3)) < 0.6
        values[:, :, :3][stuff] = rng.uniform(0.1, 0.5, stuff.sum())
        # a couple of rare clutter activations on the last three channels
        clutter = rng.random((h, w, 3)) < 0.04
        values[:, :, 9:][clutter] = rng.uniform(0.5, 2.0, clutter.sum())
        top, left, bottom, right = cell_box
        for ch in OBJECT_CHANNELS[obj]:
            block = rng.uniform(2.0, 4.0, (bottom - top + 1, right - left + 1))
            values[top - 1 : bottom, left - 1 : right, ch] = block
        save_activation(root / f"{image_id}.act", ActivationMap(values=values, stride=STRIDE))
        entries.append((image_id, f"{image_id}.act"))
        boxes.append((image_id, cell_box_to_pixels(cell_box)))

    queries = [
        Query(query_id="q-A", image_id="img0", box=cell_box_to_pixels(LAYOUT[0][2])),
        Query(query_id="q-B", image_id="img1", box=cell_box_to_pixels(LAYOUT[1][2])),
    ]
    labels = [
        ("q-A", "img2", "good"),
        ("q-A", "img4", "good"),
        ("q-A", "img0", "junk"),
        ("q-B", "img3", "good"),
        ("q-B", "img5", "ok"),
        ("q-B", "img1", "junk"),
    ]
    manifest = root / "manifest.tsv"
    save_manifest(manifest, entries, queries=queries, labels=labels, boxes=boxes)
    return manifest


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    return build_tiny_dataset(root)
