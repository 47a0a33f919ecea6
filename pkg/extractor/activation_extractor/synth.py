"""Synthetic dataset generator: plants channel-signature objects into random
rectangles of otherwise background-plus-clutter activation tensors, and emits
the manifest, query, ground-truth, and box sidecars the pipeline consumes.

Each object owns an ordered block of channels, and every planted instance
activates a smooth bump over that block centered at a continuous "pose" (a
crude stand-in for viewpoint). Instances of one object therefore lie on a
one-dimensional manifold: nearby poses overlap strongly, opposite ends of the
block share no channels at all. That is the kind of structure neighbor voting
and graph diffusion can exploit and plain cosine ranking cannot; the pose
continuum matters because whitening preserves a continuous curve but tears
apart a handful of discrete pattern clusters. Clutter patterns are drawn
fresh for every instance from a reserved channel pool, so they never repeat
across the dataset.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .act1 import save_act1

STUFF_CHANNELS = 4
STUFF_DENSITY = 0.7
STUFF_RANGE = (0.1, 0.6)
OBJECT_PATTERN_CHANNELS = 8
POSE_RADIUS = 1.25
POSE_CUTOFF = 0.05
OBJECT_WEIGHT_RANGE = (1.5, 2.2)
OBJECT_SIDE_RANGE = (5, 8)
OBJECT_SCALE_RANGE = (0.85, 1.2)
OCCURRENCE_RATE = 0.07
MIN_OCCURRENCES = 5
CLUTTER_COUNT_RANGE = (5, 9)
CLUTTER_PATTERN_CHANNELS = 6
CLUTTER_WEIGHT_RANGE = (0.25, 0.6)
CLUTTER_SIDE_RANGE = (2, 5)
CLUTTER_POOL_MIN = 16
CELL_NOISE_RANGE = (0.75, 1.25)


def pose_profile(pose: float) -> np.ndarray:
    """Per-channel weight multipliers for a pose in [0, 1]: a Gaussian bump
    sliding along the object's channel block, truncated to exact zero in its
    tails so far-apart poses genuinely share no channels."""
    center = pose * (OBJECT_PATTERN_CHANNELS - 1)
    offsets = np.arange(OBJECT_PATTERN_CHANNELS) - center
    profile = np.exp(-0.5 * (offsets / POSE_RADIUS) ** 2)
    profile[profile < POSE_CUTOFF] = 0.0
    return profile


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    n_images: int
    n_objects: int
    height: int = 24
    width: int = 24
    channels: int = 128
    stride: int = 16
    n_queries: int = 20

    def validate(self) -> None:
        if self.n_objects < 2:
            raise ValueError("need at least 2 objects")
        if self.n_images < 2:
            raise ValueError("need at least 2 images")
        if self.height < OBJECT_SIDE_RANGE[1] or self.width < OBJECT_SIDE_RANGE[1]:
            raise ValueError(f"map sides must be at least {OBJECT_SIDE_RANGE[1]} cells")
        pool = self.channels - STUFF_CHANNELS - OBJECT_PATTERN_CHANNELS * self.n_objects
        if pool < CLUTTER_POOL_MIN:
            raise ValueError(
                f"{self.channels} channels cannot hold {self.n_objects} disjoint object "
                f"patterns plus a clutter pool of at least {CLUTTER_POOL_MIN}"
            )
        if self.stride < 1:
            raise ValueError("stride must be positive")


@dataclass
class Instance:
    image: int
    obj: int
    pose: float  # bump center along the object's channel block, in [0, 1]
    box: tuple[int, int, int, int]  # 1-based inclusive cells: top,left,bottom,right


@dataclass
class SynthResult:
    spec: SynthSpec
    image_ids: list[str]
    prototypes: list[tuple[np.ndarray, np.ndarray]]  # (channel indices, weights)
    instances: list[Instance] = field(default_factory=list)
    queries: list[tuple[str, str, tuple[int, int, int, int]]] = field(default_factory=list)


def _place_box(rng, height, width, side_range, taken, tries=20):
    """A random box, re-rolled a few times to avoid overlapping earlier ones."""
    for attempt in range(tries):
        side_r = int(rng.integers(side_range[0], side_range[1] + 1))
        side_c = int(rng.integers(side_range[0], side_range[1] + 1))
        top = int(rng.integers(1, height - side_r + 2))
        left = int(rng.integers(1, width - side_c + 2))
        box = (top, left, top + side_r - 1, left + side_c - 1)
        clear = all(
            box[2] < t or box[0] > b or box[3] < l or box[1] > r for t, l, b, r in taken
        )
        if clear or attempt == tries - 1:
            return box
    raise AssertionError("unreachable")


def _stamp(values, box, channels, weights, scale, rng):
    top, left, bottom, right = box
    shape = (bottom - top + 1, right - left + 1)
    for ch, weight in zip(channels, weights):
        block = weight * scale * rng.uniform(*CELL_NOISE_RANGE, shape)
        region = values[top - 1 : bottom, left - 1 : right, ch]
        np.maximum(region, block.astype(np.float32), out=region)


def _cell_box_to_pixels(box, stride):
    top, left, bottom, right = box
    return (
        (left - 1) * stride,
        (top - 1) * stride,
        right * stride - 1,
        bottom * stride - 1,
    )


def synth_dataset(spec: SynthSpec, out_dir: Path | str) -> SynthResult:
    """Generate the dataset under out_dir; everything derives from spec.seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    out = Path(out_dir)
    tensor_dir = out / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)

    pad = max(3, len(str(spec.n_images - 1)))
    image_ids = [f"img{i:0{pad}d}" for i in range(spec.n_images)]

    pool = rng.permutation(np.arange(STUFF_CHANNELS, spec.channels))
    prototypes = []
    for k in range(spec.n_objects):
        channels = np.sort(pool[k * OBJECT_PATTERN_CHANNELS : (k + 1) * OBJECT_PATTERN_CHANNELS])
        weights = rng.uniform(*OBJECT_WEIGHT_RANGE, OBJECT_PATTERN_CHANNELS)
        prototypes.append((channels, weights))
    clutter_pool = np.sort(pool[OBJECT_PATTERN_CHANNELS * spec.n_objects :])

    occurrences = min(spec.n_images, max(MIN_OCCURRENCES, round(OCCURRENCE_RATE * spec.n_images)))
    # spread hosts so no image carries two objects unless capacity forces it
    occupancy = np.zeros(spec.n_images, dtype=np.int64)
    hosts = []
    for _ in range(spec.n_objects):
        order = rng.permutation(spec.n_images)
        ranked = order[np.argsort(occupancy[order], kind="stable")]
        picked = np.sort(ranked[:occurrences])
        occupancy[picked] += 1
        hosts.append(picked)
    by_image: dict[int, list[int]] = {}
    for obj, images in enumerate(hosts):
        for image in images:
            by_image.setdefault(int(image), []).append(obj)

    result = SynthResult(spec=spec, image_ids=image_ids, prototypes=prototypes)
    h, w = spec.height, spec.width
    for image in range(spec.n_images):
        values = np.zeros((h, w, spec.channels), dtype=np.float32)
        stuff = rng.random((h, w, STUFF_CHANNELS)) < STUFF_DENSITY
        values[:, :, :STUFF_CHANNELS][stuff] = rng.uniform(*STUFF_RANGE, int(stuff.sum()))

        taken: list[tuple[int, int, int, int]] = []
        for obj in by_image.get(image, []):
            box = _place_box(rng, h, w, OBJECT_SIDE_RANGE, taken)
            taken.append(box)
            channels, weights = prototypes[obj]
            pose = float(rng.uniform(0.0, 1.0))
            profile = pose_profile(pose)
            active = profile > 0.0
            scale = rng.uniform(*OBJECT_SCALE_RANGE)
            _stamp(values, box, channels[active], weights[active] * profile[active], scale, rng)
            result.instances.append(Instance(image=image, obj=obj, pose=pose, box=box))

        for _ in range(int(rng.integers(CLUTTER_COUNT_RANGE[0], CLUTTER_COUNT_RANGE[1] + 1))):
            box = _place_box(rng, h, w, CLUTTER_SIDE_RANGE, taken)
            taken.append(box)
            channels = rng.choice(clutter_pool, CLUTTER_PATTERN_CHANNELS, replace=False)
            weights = rng.uniform(*CLUTTER_WEIGHT_RANGE, CLUTTER_PATTERN_CHANNELS)
            _stamp(values, box, channels, weights, 1.0, rng)

        save_act1(tensor_dir / f"{image_ids[image]}.act", values, spec.stride)

    instance_lookup: dict[tuple[int, int], Instance] = {
        (inst.obj, inst.image): inst for inst in result.instances
    }
    n_queries = min(spec.n_queries, len(result.instances))
    chosen: list[tuple[int, int]] = []
    for q in range(n_queries):
        obj = q % spec.n_objects
        candidates = [int(i) for i in hosts[obj] if (obj, int(i)) not in chosen]
        if not candidates:
            candidates = [int(i) for i in hosts[obj]]
        host = candidates[int(rng.integers(len(candidates)))]
        chosen.append((obj, host))

    qpad = max(2, len(str(max(n_queries - 1, 0))))
    gt_lines = []
    query_lines = []
    for q, (obj, host) in enumerate(chosen):
        query_id = f"q{q:0{qpad}d}"
        box = instance_lookup[(obj, host)].box
        pixels = _cell_box_to_pixels(box, spec.stride)
        query_lines.append(f"{query_id}\t{image_ids[host]}\t{pixels[0]},{pixels[1]},{pixels[2]},{pixels[3]}\n")
        result.queries.append((query_id, image_ids[host], box))
        gt_lines.append(f"{query_id}\t{image_ids[host]}\tjunk\n")
        for image in hosts[obj]:
            if int(image) != host:
                gt_lines.append(f"{query_id}\t{image_ids[int(image)]}\tgood\n")

    box_lines = []
    for inst in result.instances:
        pixels = _cell_box_to_pixels(inst.box, spec.stride)
        box_lines.append(f"{image_ids[inst.image]}\t{pixels[0]},{pixels[1]},{pixels[2]},{pixels[3]}\n")

    manifest_lines = [f"{image_id}\ttensors/{image_id}.act\n" for image_id in image_ids]
    (out / "manifest.tsv").write_text("".join(manifest_lines), encoding="utf-8")
    if query_lines:
        (out / "manifest.queries.tsv").write_text("".join(query_lines), encoding="utf-8")
        (out / "manifest.gt.tsv").write_text("".join(gt_lines), encoding="utf-8")
    (out / "manifest.boxes.tsv").write_text("".join(box_lines), encoding="utf-8")
    return result


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Generate a synthetic activation-tensor dataset.")
    parser.add_argument("--seed", type=int, required=True)
    parser.add_argument("--images", type=int, default=200)
    parser.add_argument("--objects", type=int, default=10)
    parser.add_argument("--out", required=True)
    parser.add_argument("--height", type=int, default=24)
    parser.add_argument("--width", type=int, default=24)
    parser.add_argument("--channels", type=int, default=128)
    parser.add_argument("--stride", type=int, default=16)
    parser.add_argument("--queries", type=int, default=20)
    args = parser.parse_args(argv)
    spec = SynthSpec(
        seed=args.seed,
        n_images=args.images,
        n_objects=args.objects,
        height=args.height,
        width=args.width,
        channels=args.channels,
        stride=args.stride,
        n_queries=args.queries,
    )
    try:
        result = synth_dataset(spec, args.out)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"wrote {spec.n_images} tensors, {len(result.instances)} object instances, "
        f"{len(result.queries)} queries to {args.out}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
