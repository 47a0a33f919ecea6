"""Dataset and artifact storage.

Everything the pipeline reads or writes lives here: the activation-tensor
binary format, dataset manifests with their ground-truth sidecars, detected
region lists, and the binary artifacts produced by the later stages (region
table, whitening model, region graph, centrality vector, global descriptors).

All binary formats are little-endian. Cell coordinates are 1-based inclusive
in the API (row, col) and 0-based on disk. Every writer goes through an
atomic temp-file + rename so a crashed run never leaves a half-written file.

Binary layouts::

    ACT1  magic "ACT1" | version u32=1 | h u32 | w u32 | c u32 | stride u32
          | h*w*c float32 payload (row-major, channel-last) | crc32(payload) u32
    RGT1  magic | n u32 | d u32 | n records of
          (image-index u32, top/left/bottom/right u32, f float32, v d*float32)
    WHT1  magic | c u32 | d u32 | mean c*float32 | projection d*c float32 row-major
    GRF1  magic | n u32 | nnz u64 | nnz triplets (i u32, j u32, w float32), i < j
    CEN1  magic | n u32 | n*float32
    GDV1  magic | n u32 | d u32 | n records of (id-index u32, d*float32)
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
from scipy import sparse

ACT1_MAGIC = b"ACT1"
ACT1_VERSION = 1


class FormatError(ValueError):
    """A file does not conform to one of the formats documented above."""


class Rectangle(NamedTuple):
    """Axis-aligned cell rectangle, 1-based inclusive bounds."""

    top: int
    left: int
    bottom: int
    right: int

    @property
    def area(self) -> int:
        return (self.bottom - self.top + 1) * (self.right - self.left + 1)


class PixelBox(NamedTuple):
    """Axis-aligned pixel rectangle, 0-based inclusive bounds."""

    top: int
    left: int
    bottom: int
    right: int


class Query(NamedTuple):
    query_id: str
    image_id: str
    box: PixelBox


@dataclass
class ActivationMap:
    """A c-channel CNN activation tensor on an h x w cell grid.

    values has shape (h, w, c), float32, non-negative (post-ReLU). stride is
    the pixel extent of one cell in the source image.
    """

    values: np.ndarray
    stride: int

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def channels(self) -> int:
        return int(self.values.shape[2])

    def validate(self) -> None:
        if self.values.ndim != 3:
            raise FormatError("activation values must be h x w x c")
        if min(self.values.shape) < 1:
            raise FormatError("activation dimensions must be at least 1")
        if self.stride < 1:
            raise FormatError("stride must be at least 1")
        if not np.isfinite(self.values).all():
            raise FormatError("non-finite activation values")
        if (self.values < 0).any():
            raise FormatError("negative activation values")

    def full_rectangle(self) -> Rectangle:
        return Rectangle(1, 1, self.height, self.width)


def atomic_write_bytes(path: Path | str, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path | str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_activation(path: Path | str, amap: ActivationMap) -> None:
    amap.validate()
    values = np.ascontiguousarray(amap.values, dtype="<f4")
    payload = values.tobytes()
    header = struct.pack(
        "<4sIIIII",
        ACT1_MAGIC,
        ACT1_VERSION,
        amap.height,
        amap.width,
        amap.channels,
        amap.stride,
    )
    trailer = struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    atomic_write_bytes(path, header + payload + trailer)


def load_activation(path: Path | str) -> ActivationMap:
    data = Path(path).read_bytes()
    if len(data) < 28:
        raise FormatError(f"{path}: truncated file")
    magic, version, h, w, c, stride = struct.unpack_from("<4sIIIII", data, 0)
    if magic != ACT1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != ACT1_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if min(h, w, c) < 1 or stride < 1:
        raise FormatError(f"{path}: bad header dimensions")
    n_bytes = h * w * c * 4
    if len(data) != 24 + n_bytes + 4:
        raise FormatError(f"{path}: truncated file")
    payload = data[24 : 24 + n_bytes]
    (crc,) = struct.unpack_from("<I", data, 24 + n_bytes)
    if crc != zlib.crc32(payload) & 0xFFFFFFFF:
        raise FormatError(f"{path}: checksum mismatch")
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w, c).copy()
    amap = ActivationMap(values=values, stride=stride)
    amap.validate()
    return amap


def save_saliency(path: Path | str, saliency: np.ndarray, stride: int) -> None:
    """Store an h x w saliency map as a single-channel ACT1 file."""
    save_activation(path, ActivationMap(values=np.asarray(saliency, dtype=np.float32)[:, :, None], stride=stride))


def load_saliency(path: Path | str) -> tuple[np.ndarray, int]:
    amap = load_activation(path)
    if amap.channels != 1:
        raise FormatError(f"{path}: expected a single-channel saliency map")
    return amap.values[:, :, 0].astype(np.float64), amap.stride


@dataclass
class GroundTruth:
    """Retrieval relevance labels keyed by query id.

    positives holds the good and ok image ids; junk entries are removed from
    rankings before scoring.
    """

    positives: dict[str, set[str]] = field(default_factory=dict)
    junk: dict[str, set[str]] = field(default_factory=dict)


@dataclass
class DatasetManifest:
    """Ordered image list plus optional ground-truth sidecars.

    Tensor paths are stored resolved. Sidecar files share the manifest stem:
    <stem>.gt.tsv (labels), <stem>.queries.tsv (query boxes) and
    <stem>.boxes.tsv (per-image object boxes), all optional.
    """

    images: list[tuple[str, Path]]
    queries: list[Query] = field(default_factory=list)
    ground_truth: GroundTruth | None = None
    boxes: dict[str, list[PixelBox]] = field(default_factory=dict)

    @property
    def image_ids(self) -> list[str]:
        return [image_id for image_id, _ in self.images]

    def index_of(self, image_id: str) -> int:
        try:
            return self.image_ids.index(image_id)
        except ValueError:
            raise KeyError(f"unknown image id {image_id!r}") from None

    def tensor_path(self, image_id: str) -> Path:
        return self.images[self.index_of(image_id)][1]


def _split_tsv(line: str, n_fields: int, path: Path, lineno: int) -> list[str]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != n_fields or not all(parts):
        raise FormatError(f"{path}:{lineno}: unparseable line {line!r}")
    return parts


def _parse_box(text: str, path: Path, lineno: int) -> PixelBox:
    try:
        x1, y1, x2, y2 = (int(v) for v in text.split(","))
    except ValueError:
        raise FormatError(f"{path}:{lineno}: unparseable box {text!r}") from None
    if x1 < 0 or y1 < 0 or x2 < x1 or y2 < y1:
        raise FormatError(f"{path}:{lineno}: degenerate box {text!r}")
    return PixelBox(top=y1, left=x1, bottom=y2, right=x2)


def _data_lines(path: Path) -> list[tuple[int, str]]:
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if line.strip():
            out.append((lineno, line))
    return out


def load_manifest(path: Path | str) -> DatasetManifest:
    """Load a manifest TSV (<image-id>\\t<tensor-path>) and its sidecars.

    Relative tensor paths resolve against the manifest directory; every
    referenced tensor must exist.
    """
    path = Path(path)
    images: list[tuple[str, Path]] = []
    seen: set[str] = set()
    for lineno, line in _data_lines(path):
        image_id, rel = _split_tsv(line, 2, path, lineno)
        if image_id in seen:
            raise FormatError(f"{path}:{lineno}: duplicate image id {image_id!r}")
        seen.add(image_id)
        tensor = (path.parent / rel).resolve()
        if not tensor.is_file():
            raise FormatError(f"{path}:{lineno}: missing tensor file {rel!r}")
        images.append((image_id, tensor))
    if not images:
        raise FormatError(f"{path}: empty manifest")
    manifest = DatasetManifest(images=images)

    stem = path.parent / path.stem
    queries_path = Path(f"{stem}.queries.tsv")
    if queries_path.is_file():
        for lineno, line in _data_lines(queries_path):
            query_id, image_id, box = _split_tsv(line, 3, queries_path, lineno)
            if image_id not in seen:
                raise FormatError(f"{queries_path}:{lineno}: unknown image id {image_id!r}")
            manifest.queries.append(Query(query_id, image_id, _parse_box(box, queries_path, lineno)))

    gt_path = Path(f"{stem}.gt.tsv")
    if gt_path.is_file():
        gt = GroundTruth()
        for lineno, line in _data_lines(gt_path):
            query_id, image_id, label = _split_tsv(line, 3, gt_path, lineno)
            if image_id not in seen:
                raise FormatError(f"{gt_path}:{lineno}: unknown image id {image_id!r}")
            if label in ("good", "ok"):
                gt.positives.setdefault(query_id, set()).add(image_id)
            elif label == "junk":
                gt.junk.setdefault(query_id, set()).add(image_id)
            else:
                raise FormatError(f"{gt_path}:{lineno}: unknown label {label!r}")
        manifest.ground_truth = gt

    boxes_path = Path(f"{stem}.boxes.tsv")
    if boxes_path.is_file():
        for lineno, line in _data_lines(boxes_path):
            image_id, box = _split_tsv(line, 2, boxes_path, lineno)
            if image_id not in seen:
                raise FormatError(f"{boxes_path}:{lineno}: unknown image id {image_id!r}")
            manifest.boxes.setdefault(image_id, []).append(_parse_box(box, boxes_path, lineno))

    return manifest


def save_manifest(
    path: Path | str,
    entries: Iterable[tuple[str, str]],
    queries: Iterable[Query] = (),
    labels: Iterable[tuple[str, str, str]] = (),
    boxes: Iterable[tuple[str, PixelBox]] = (),
) -> None:
    """Write a manifest and whichever sidecars have content.

    entries are (image-id, tensor-path-as-written); labels are
    (query-id, image-id, good|ok|junk) rows.
    """
    path = Path(path)
    atomic_write_text(path, "".join(f"{i}\t{p}\n" for i, p in entries))
    stem = path.parent / path.stem
    q_lines = [f"{q.query_id}\t{q.image_id}\t{q.box.left},{q.box.top},{q.box.right},{q.box.bottom}\n" for q in queries]
    if q_lines:
        atomic_write_text(f"{stem}.queries.tsv", "".join(q_lines))
    l_lines = [f"{q}\t{i}\t{label}\n" for q, i, label in labels]
    if l_lines:
        atomic_write_text(f"{stem}.gt.tsv", "".join(l_lines))
    b_lines = [f"{i}\t{b.left},{b.top},{b.right},{b.bottom}\n" for i, b in boxes]
    if b_lines:
        atomic_write_text(f"{stem}.boxes.tsv", "".join(b_lines))


def save_region_lists(path: Path | str, regions: dict[str, list[Rectangle]]) -> None:
    """Write per-image detected regions, one region per line, 0-based on disk."""
    lines = []
    for image_id, rects in regions.items():
        for r in rects:
            lines.append(f"{image_id}\t{r.top - 1},{r.left - 1},{r.bottom - 1},{r.right - 1}\n")
    atomic_write_text(path, "".join(lines))


def load_region_lists(path: Path | str) -> dict[str, list[Rectangle]]:
    path = Path(path)
    regions: dict[str, list[Rectangle]] = {}
    for lineno, line in _data_lines(path):
        image_id, coords = _split_tsv(line, 2, path, lineno)
        try:
            top, left, bottom, right = (int(v) for v in coords.split(","))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: unparseable rectangle {coords!r}") from None
        rect = Rectangle(top + 1, left + 1, bottom + 1, right + 1)
        if rect.top < 1 or rect.left < 1 or rect.top > rect.bottom or rect.left > rect.right:
            raise FormatError(f"{path}:{lineno}: degenerate rectangle {coords!r}")
        regions.setdefault(image_id, []).append(rect)
    return regions


@dataclass
class RegionRecord:
    """One pooled region: owning image (manifest index), extent, saliency f,
    whitened unit descriptor v."""

    image_index: int
    rect: Rectangle
    saliency: float
    vector: np.ndarray


RGT1_MAGIC = b"RGT1"
WHT1_MAGIC = b"WHT1"
GRF1_MAGIC = b"GRF1"
CEN1_MAGIC = b"CEN1"
GDV1_MAGIC = b"GDV1"


def _check_header(data: bytes, magic: bytes, path: Path | str) -> None:
    if len(data) < 4 + 4:
        raise FormatError(f"{path}: truncated file")
    if data[:4] != magic:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")


def save_region_table(path: Path | str, records: list[RegionRecord]) -> None:
    if not records:
        raise FormatError("refusing to write an empty region table")
    d = len(records[0].vector)
    parts = [struct.pack("<4sII", RGT1_MAGIC, len(records), d)]
    for rec in records:
        if len(rec.vector) != d:
            raise FormatError("inconsistent descriptor dimensions")
        r = rec.rect
        parts.append(
            struct.pack("<IIIIIf", rec.image_index, r.top - 1, r.left - 1, r.bottom - 1, r.right - 1, rec.saliency)
        )
        parts.append(np.asarray(rec.vector, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_region_table(path: Path | str) -> list[RegionRecord]:
    data = Path(path).read_bytes()
    _check_header(data, RGT1_MAGIC, path)
    n, d = struct.unpack_from("<II", data, 4)
    rec_size = 24 + 4 * d
    if len(data) != 12 + n * rec_size:
        raise FormatError(f"{path}: truncated file")
    records = []
    off = 12
    for _ in range(n):
        image_index, top, left, bottom, right, f = struct.unpack_from("<IIIIIf", data, off)
        vec = np.frombuffer(data, dtype="<f4", count=d, offset=off + 24).astype(np.float64)
        records.append(
            RegionRecord(
                image_index=image_index,
                rect=Rectangle(top + 1, left + 1, bottom + 1, right + 1),
                saliency=float(f),
                vector=vec,
            )
        )
        off += rec_size
    return records


def save_whitening(path: Path | str, mean: np.ndarray, projection: np.ndarray) -> None:
    d, c = projection.shape
    if mean.shape != (c,):
        raise FormatError("whitening mean/projection shape mismatch")
    data = (
        struct.pack("<4sII", WHT1_MAGIC, c, d)
        + np.asarray(mean, dtype="<f4").tobytes()
        + np.ascontiguousarray(projection, dtype="<f4").tobytes()
    )
    atomic_write_bytes(path, data)


def load_whitening(path: Path | str) -> tuple[np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    _check_header(data, WHT1_MAGIC, path)
    c, d = struct.unpack_from("<II", data, 4)
    if len(data) != 12 + 4 * c + 4 * d * c:
        raise FormatError(f"{path}: truncated file")
    mean = np.frombuffer(data, dtype="<f4", count=c, offset=12).astype(np.float64)
    projection = (
        np.frombuffer(data, dtype="<f4", count=d * c, offset=12 + 4 * c).astype(np.float64).reshape(d, c)
    )
    return mean, projection


def save_graph(path: Path | str, adjacency: sparse.csr_matrix) -> None:
    """Write the upper triangle of a symmetric sparse adjacency as GRF1."""
    coo = sparse.triu(adjacency, k=1).tocoo()
    n = adjacency.shape[0]
    order = np.lexsort((coo.col, coo.row))
    rows = coo.row[order].astype("<u4")
    cols = coo.col[order].astype("<u4")
    vals = coo.data[order].astype("<f4")
    triplets = np.empty(len(rows), dtype=[("i", "<u4"), ("j", "<u4"), ("w", "<f4")])
    triplets["i"], triplets["j"], triplets["w"] = rows, cols, vals
    atomic_write_bytes(path, struct.pack("<4sIQ", GRF1_MAGIC, n, len(rows)) + triplets.tobytes())


def load_graph(path: Path | str) -> sparse.csr_matrix:
    data = Path(path).read_bytes()
    _check_header(data, GRF1_MAGIC, path)
    if len(data) < 16:
        raise FormatError(f"{path}: truncated file")
    n, nnz = struct.unpack_from("<IQ", data, 4)
    if len(data) != 16 + 12 * nnz:
        raise FormatError(f"{path}: truncated file")
    triplets = np.frombuffer(data, dtype=[("i", "<u4"), ("j", "<u4"), ("w", "<f4")], count=nnz, offset=16)
    i = triplets["i"].astype(np.int64)
    j = triplets["j"].astype(np.int64)
    if nnz and not (i < j).all():
        raise FormatError(f"{path}: triplets must satisfy i < j")
    w = triplets["w"].astype(np.float64)
    adj = sparse.coo_matrix((np.r_[w, w], (np.r_[i, j], np.r_[j, i])), shape=(n, n))
    return adj.tocsr()


def save_centrality(path: Path | str, values: np.ndarray) -> None:
    data = struct.pack("<4sI", CEN1_MAGIC, len(values)) + np.asarray(values, dtype="<f4").tobytes()
    atomic_write_bytes(path, data)


def load_centrality(path: Path | str) -> np.ndarray:
    data = Path(path).read_bytes()
    _check_header(data, CEN1_MAGIC, path)
    (n,) = struct.unpack_from("<I", data, 4)
    if len(data) != 8 + 4 * n:
        raise FormatError(f"{path}: truncated file")
    return np.frombuffer(data, dtype="<f4", count=n, offset=8).astype(np.float64)


def save_global_descriptors(path: Path | str, indices: np.ndarray, vectors: np.ndarray) -> None:
    n, d = vectors.shape
    if len(indices) != n:
        raise FormatError("index/vector count mismatch")
    parts = [struct.pack("<4sII", GDV1_MAGIC, n, d)]
    for idx, vec in zip(np.asarray(indices), vectors):
        parts.append(struct.pack("<I", int(idx)) + np.asarray(vec, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_global_descriptors(path: Path | str) -> tuple[np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    _check_header(data, GDV1_MAGIC, path)
    n, d = struct.unpack_from("<II", data, 4)
    rec = 4 + 4 * d
    if len(data) != 12 + n * rec:
        raise FormatError(f"{path}: truncated file")
    indices = np.empty(n, dtype=np.int64)
    vectors = np.empty((n, d), dtype=np.float64)
    off = 12
    for k in range(n):
        (indices[k],) = struct.unpack_from("<I", data, off)
        vectors[k] = np.frombuffer(data, dtype="<f4", count=d, offset=off + 4)
        off += rec
    return indices, vectors
