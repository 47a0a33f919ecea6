"""Minimal PGM/PPM writers for heatmap and histogram inspection output."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .store import atomic_write_bytes


def write_pgm(path: Path | str, values: np.ndarray) -> None:
    """Grayscale image from a 2-D array of values in [0, 1]."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array")
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + data.tobytes())


def write_ppm(path: Path | str, rgb: np.ndarray) -> None:
    arr = np.asarray(rgb, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("expected an h x w x 3 uint8 array")
    header = f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + arr.tobytes())


def histogram_chart(path: Path | str, first: np.ndarray, second: np.ndarray, height: int = 120) -> None:
    """Side-by-side bar chart of two equal-length count series (first drawn
    red, second blue) on a white background."""
    a = np.asarray(first, dtype=np.float64)
    b = np.asarray(second, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need two equal-length 1-D series")
    peak = max(a.max(initial=0.0), b.max(initial=0.0), 1.0)
    bar_w, gap = 4, 2
    width = len(a) * (2 * bar_w + gap) + gap
    img = np.full((height, width, 3), 255, dtype=np.uint8)
    for i in range(len(a)):
        x = gap + i * (2 * bar_w + gap)
        for series, color, offset in ((a, (200, 40, 40), 0), (b, (40, 40, 200), bar_w)):
            bar_h = int(round(series[i] / peak * (height - 2)))
            if bar_h > 0:
                img[height - bar_h :, x + offset : x + offset + bar_w] = color
    write_ppm(path, img)
