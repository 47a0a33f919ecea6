"""Run images through a torchvision CNN and dump one ACT1 tensor per image.

The tapped layer must be a ReLU so the stored values are non-negative; the
spatial stride is read off the network geometry (2 per max-pool crossed
before the tap). Undecodable images are skipped and reported, not fatal.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .act1 import save_act1

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp", ".ppm", ".pgm", ".webp")
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def build_network(name: str, layer: str, pretrained: bool):
    """The feature stack truncated after `layer`, plus its output stride."""
    import torch
    from torch import nn
    from torchvision import models

    factory = getattr(models, name, None)
    if factory is None:
        raise ValueError(f"unknown network {name!r}")
    weights = "DEFAULT" if pretrained else None
    network = factory(weights=weights)
    features = getattr(network, "features", None)
    if features is None:
        raise ValueError(f"network {name!r} has no sequential feature stack")
    prefix, _, index_text = layer.partition(".")
    if prefix != "features" or not index_text.isdigit():
        raise ValueError(f"layer must look like 'features.N', got {layer!r}")
    index = int(index_text)
    if index >= len(features):
        raise ValueError(f"layer index {index} out of range for {name} ({len(features)} modules)")
    if not isinstance(features[index], nn.ReLU):
        raise ValueError(f"layer {layer!r} is {type(features[index]).__name__}, not a ReLU")
    stride = 1
    for module in list(features)[: index + 1]:
        if isinstance(module, nn.MaxPool2d):
            stride *= module.stride if isinstance(module.stride, int) else module.stride[0]
    truncated = nn.Sequential(*list(features)[: index + 1])
    truncated.eval()
    for parameter in truncated.parameters():
        parameter.requires_grad_(False)
    _ = torch  # keep the import local to this function's callers
    return truncated, stride


def load_image(path: Path, max_side: int) -> np.ndarray:
    """RGB float array in [0, 1], longer side capped at max_side pixels."""
    with Image.open(path) as img:
        img = img.convert("RGB")
        longest = max(img.size)
        if longest > max_side:
            scale = max_side / longest
            img = img.resize(
                (max(1, round(img.width * scale)), max(1, round(img.height * scale))),
                Image.BILINEAR,
            )
        return np.asarray(img, dtype=np.float32) / 255.0


def extract_one(network, image: np.ndarray) -> np.ndarray:
    import torch

    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32)
    std = np.asarray(IMAGENET_STD, dtype=np.float32)
    tensor = torch.from_numpy(((image - mean) / std).transpose(2, 0, 1)[None])
    with torch.no_grad():
        out = network(tensor)
    return out[0].permute(1, 2, 0).numpy()


def list_images(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)


def run_job(
    image_dir: Path,
    out_dir: Path,
    network_name: str = "vgg16",
    layer: str = "features.29",
    max_side: int = 1024,
    pretrained: bool = False,
) -> tuple[list[str], list[str]]:
    """Extract every image in image_dir; returns (written ids, skipped names)."""
    paths = list_images(image_dir)
    if not paths:
        raise ValueError(f"no images found under {image_dir}")
    stems = [p.stem for p in paths]
    duplicates = {s for s in stems if stems.count(s) > 1}
    if duplicates:
        raise ValueError(f"duplicate image stems: {sorted(duplicates)}")

    network, stride = build_network(network_name, layer, pretrained)
    tensor_dir = out_dir / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)

    written: list[str] = []
    skipped: list[str] = []
    for path in paths:
        try:
            image = load_image(path, max_side)
        except (UnidentifiedImageError, OSError) as exc:
            print(f"warning: skipping {path.name}: {exc}", file=sys.stderr)
            skipped.append(path.name)
            continue
        activation = extract_one(network, image)
        save_act1(tensor_dir / f"{path.stem}.act", activation, stride)
        written.append(path.stem)

    (out_dir / "manifest.tsv").write_text(
        "".join(f"{stem}\ttensors/{stem}.act\n" for stem in written), encoding="utf-8"
    )
    if skipped:
        (out_dir / "skipped.tsv").write_text("".join(f"{name}\n" for name in skipped), encoding="utf-8")
    return written, skipped


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Dump CNN activation tensors for an image directory.")
    parser.add_argument("--images", required=True, help="directory of images")
    parser.add_argument("--layer", default="features.29", help="ReLU to tap, as features.N")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--network", default="vgg16", help="torchvision model name")
    parser.add_argument("--max-side", type=int, default=1024, help="cap on the longer image side")
    parser.add_argument("--pretrained", action="store_true", help="load pretrained weights")
    args = parser.parse_args(argv)
    try:
        written, skipped = run_job(
            Path(args.images),
            Path(args.out),
            network_name=args.network,
            layer=args.layer,
            max_side=args.max_side,
            pretrained=args.pretrained,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(written)} tensors to {args.out}" + (f", skipped {len(skipped)}" if skipped else ""))
    return 0


if __name__ == "__main__":
    sys.exit(main())
