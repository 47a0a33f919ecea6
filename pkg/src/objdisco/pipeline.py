"""Stage runner: executes the discovery/retrieval stages over a work
directory, records digests in run.log, and enforces stage prerequisites.

Work directory layout::

    fs/<image-id>.act          preprocessed feature-saliency maps
    regions-fs/regions.tsv     detected regions on the fs maps
    pool/regions.rgt           pooled region table
    pool/whitening.wht         whitening model fitted on the region pool
    graph/graph.grf            mutual k-NN region graph
    graph/centrality.cen       centrality per region
    os/<image-id>.act          preprocessed object-saliency maps
    regions-os/regions.tsv     detected regions on the os maps
    descriptors/<source>.gdv   global descriptors per aggregation source
    search/<source>.tsv        cosine rankings (+ .diffusion.tsv variants)
    eval/<source>.tsv          per-query average precision and mAP
    salprec/                   saliency-precision tables
    run.log                    stage name, wall seconds, output digest per run
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import PipelineConfig
from .descriptors import WhiteningModel, apply_whitening, fit_whitening, max_pool, region_saliency
from .egm import EgmConfig, components_to_regions, egm_fit
from .graph import centrality, mutual_knn_adjacency
from .object_saliency import RegionIndex, object_saliency_map
from .render import histogram_chart, write_pgm
from .retrieval import (
    SOURCES,
    aggregate_global,
    diffuse,
    mean_average_precision,
    pixel_box_to_cells,
    query_descriptor,
    rank_cosine,
    saliency_precision,
    triangle_expand,
    uniform_regions,
)
from .saliency import feature_saliency_map, idf_weights, preprocess_saliency
from .store import (
    DatasetManifest,
    RegionRecord,
    Rectangle,
    load_activation,
    load_centrality,
    load_global_descriptors,
    load_manifest,
    load_region_lists,
    load_region_table,
    load_saliency,
    save_centrality,
    save_global_descriptors,
    save_graph,
    save_region_lists,
    save_region_table,
    save_saliency,
    atomic_write_text,
)


class PipelineError(RuntimeError):
    pass


def digest_tree(root: Path) -> str:
    """sha256 over sorted (relative path, content) pairs; stable across runs."""
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode("utf-8"))
            h.update(b"\x00")
            h.update(p.read_bytes())
            h.update(b"\x01")
    return h.hexdigest()


@dataclass
class Pipeline:
    config: PipelineConfig
    jobs: int = 1
    _manifest: DatasetManifest | None = field(default=None, repr=False)

    @property
    def work(self) -> Path:
        return Path(self.config.paths.work_dir)

    @property
    def manifest(self) -> DatasetManifest:
        if self._manifest is None:
            if not self.config.paths.manifest:
                raise PipelineError("paths.manifest is not set")
            self._manifest = load_manifest(self.config.paths.manifest)
        return self._manifest

    def _map(self, fn: Callable, items: Sequence) -> list:
        if self.jobs <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(fn, items))

    def _require(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise PipelineError(f"{path.name} not found; run the {stage!r} stage first")
        return path

    def _saliency_dir(self, source: str) -> Path:
        if source not in ("fs", "os"):
            raise PipelineError(f"unknown saliency source {source!r}")
        return self.work / source

    # -- stages ----------------------------------------------------------

    def stage_fs(self, heatmap_dir: str | None = None) -> Path:
        out = self.work / "fs"
        out.mkdir(parents=True, exist_ok=True)
        cfg = self.config.fs

        def one(entry: tuple[str, Path]) -> None:
            image_id, tensor = entry
            amap = load_activation(tensor)
            weights = idf_weights(amap, cfg.epsilon)
            smap = preprocess_saliency(feature_saliency_map(amap, weights), cfg.tau, cfg.rho)
            save_saliency(out / f"{image_id}.act", smap, amap.stride)
            if heatmap_dir:
                Path(heatmap_dir).mkdir(parents=True, exist_ok=True)
                write_pgm(Path(heatmap_dir) / f"{image_id}.pgm", smap)

        self._map(one, self.manifest.images)
        return out

    def stage_detect(self, source: str = "fs") -> Path:
        maps_dir = self._require(self._saliency_dir(source), source)
        out_dir = self.work / f"regions-{source}"
        out_dir.mkdir(parents=True, exist_ok=True)
        egm_cfg = EgmConfig(
            sigma=self.config.fs.sigma if source == "fs" else self.config.os.sigma,
            kappa=self.config.egm.kappa,
            max_iterations=self.config.egm.max_iterations,
            move_tolerance=self.config.egm.move_tolerance,
            mass_weighted=self.config.egm.mass_weighted,
        )

        def one(entry: tuple[str, Path]) -> tuple[str, list[Rectangle]]:
            image_id = entry[0]
            smap, _ = load_saliency(self._require(maps_dir / f"{image_id}.act", source))
            components = egm_fit(smap, egm_cfg)
            return image_id, components_to_regions(components, smap.shape, self.config.egm.extent)

        results = self._map(one, self.manifest.images)
        save_region_lists(out_dir / "regions.tsv", dict(results))
        return out_dir

    def stage_pool(self) -> Path:
        fs_dir = self._require(self.work / "fs", "fs")
        regions = load_region_lists(self._require(self.work / "regions-fs" / "regions.tsv", "detect"))
        out = self.work / "pool"
        out.mkdir(parents=True, exist_ok=True)

        gathered: list[tuple[int, Rectangle, float, np.ndarray]] = []
        for idx, (image_id, tensor) in enumerate(self.manifest.images):
            amap = load_activation(tensor)
            smap, _ = load_saliency(fs_dir / f"{image_id}.act")
            for rect in regions.get(image_id, []):
                raw = max_pool(amap, rect)
                if not raw.any():
                    continue
                gathered.append((idx, rect, region_saliency(smap, rect), raw))
        if len(gathered) < 2:
            raise PipelineError("fewer than 2 non-empty regions; nothing to pool")

        raw_stack = np.stack([g[3] for g in gathered])
        model = fit_whitening(raw_stack, self.config.whitening.dim or None, self.config.whitening.shrinkage)
        records = [
            RegionRecord(image_index=idx, rect=rect, saliency=f, vector=apply_whitening(model, raw))
            for idx, rect, f, raw in gathered
        ]
        save_region_table(out / "regions.rgt", records)
        model.save(out / "whitening.wht")
        return out

    def stage_graph(self) -> Path:
        records = load_region_table(self._require(self.work / "pool" / "regions.rgt", "pool"))
        out = self.work / "graph"
        out.mkdir(parents=True, exist_ok=True)
        vectors = np.stack([r.vector for r in records])
        cfg = self.config.graph
        adjacency = mutual_knn_adjacency(vectors, cfg.k, cfg.beta)
        save_graph(out / "graph.grf", adjacency)
        g = centrality(adjacency, cfg.alpha, cfg.tol, cfg.max_iter)
        if g.min() <= 0:
            raise PipelineError("centrality solve produced a non-positive entry")
        save_centrality(out / "centrality.cen", g)
        return out

    def stage_os(self) -> Path:
        fs_dir = self._require(self.work / "fs", "fs")
        records = load_region_table(self._require(self.work / "pool" / "regions.rgt", "pool"))
        g = load_centrality(self._require(self.work / "graph" / "centrality.cen", "graph"))
        model = WhiteningModel.load(self.work / "pool" / "whitening.wht")
        if len(g) != len(records):
            raise PipelineError("centrality vector does not match the region table")
        index = RegionIndex(
            vectors=np.stack([r.vector for r in records]),
            saliencies=np.array([r.saliency for r in records]),
            centralities=g,
            k=self.config.os.k,
        )
        out = self.work / "os"
        out.mkdir(parents=True, exist_ok=True)
        cfg = self.config.os

        def one(entry: tuple[str, Path]) -> None:
            image_id, tensor = entry
            amap = load_activation(tensor)
            fsal, _ = load_saliency(fs_dir / f"{image_id}.act")
            smap = object_saliency_map(
                amap,
                fsal,
                index,
                model,
                theta_img=cfg.theta_img,
                theta_nbr=cfg.theta_nbr,
                beta=self.config.graph.beta,
                patch_side=cfg.patch,
            )
            save_saliency(out / f"{image_id}.act", preprocess_saliency(smap, cfg.tau, cfg.rho), amap.stride)

        self._map(one, self.manifest.images)
        return out

    def _source_regions(self, source: str, image_id: str, shape: tuple[int, int]) -> list[Rectangle]:
        if source == "mac":
            return [Rectangle(1, 1, shape[0], shape[1])]
        if source == "uniform":
            return uniform_regions(shape, scales=3)
        if source == "fs":
            return self._region_cache("fs").get(image_id, [])
        if source == "os":
            return self._region_cache("os").get(image_id, [])
        if source == "os-tri":
            return triangle_expand(self._region_cache("os").get(image_id, []), scales=2)
        raise PipelineError(f"unknown aggregation source {source!r}")

    def _region_cache(self, source: str) -> dict[str, list[Rectangle]]:
        cache = getattr(self, "_regions_" + source, None)
        if cache is None:
            path = self._require(self.work / f"regions-{source}" / "regions.tsv", "detect")
            cache = load_region_lists(path)
            setattr(self, "_regions_" + source, cache)
        return cache

    def stage_aggregate(self, source: str) -> Path:
        model = WhiteningModel.load(self._require(self.work / "pool" / "whitening.wht", "pool"))
        out = self.work / "descriptors"
        out.mkdir(parents=True, exist_ok=True)

        def one(entry: tuple[str, Path]) -> tuple[np.ndarray, bool]:
            image_id, tensor = entry
            amap = load_activation(tensor)
            regions = self._source_regions(source, image_id, (amap.height, amap.width))
            gd = aggregate_global(amap, regions, model, image_id=image_id, source=source)
            return gd.vector, gd.source != source

        results = self._map(one, self.manifest.images)
        vectors = np.stack([vec for vec, _ in results])
        save_global_descriptors(out / f"{source}.gdv", np.arange(len(results)), vectors)
        fallbacks = [self.manifest.image_ids[i] for i, (_, fb) in enumerate(results) if fb]
        if fallbacks:
            atomic_write_text(out / f"{source}.fallback.tsv", "".join(f"{i}\tmac\n" for i in fallbacks))
        return out

    def stage_search(self, source: str, diffusion: bool | None = None) -> Path:
        if not self.manifest.queries:
            raise PipelineError("manifest has no query sidecar; nothing to search")
        indices, vectors = load_global_descriptors(
            self._require(self.work / "descriptors" / f"{source}.gdv", "aggregate")
        )
        model = WhiteningModel.load(self._require(self.work / "pool" / "whitening.wht", "pool"))
        ids = [self.manifest.image_ids[i] for i in indices]
        out = self.work / "search"
        out.mkdir(parents=True, exist_ok=True)
        use_diffusion = self.config.eval.diffusion if diffusion is None else diffusion
        gcfg = self.config.graph

        plain_lines: list[str] = []
        diffusion_lines: list[str] = []
        for query in self.manifest.queries:
            amap = load_activation(self.manifest.tensor_path(query.image_id))
            qv = query_descriptor(amap, query.box, model)
            for rank, (image_id, score) in enumerate(rank_cosine(qv, vectors, ids), start=1):
                plain_lines.append(f"{query.query_id}\t{rank}\t{image_id}\t{score:.8f}\n")
            if use_diffusion:
                ranked = diffuse(qv, vectors, ids, gcfg.k, gcfg.beta, gcfg.alpha, gcfg.tol, gcfg.max_iter)
                for rank, (image_id, score) in enumerate(ranked, start=1):
                    diffusion_lines.append(f"{query.query_id}\t{rank}\t{image_id}\t{score:.8f}\n")
        atomic_write_text(out / f"{source}.tsv", "".join(plain_lines))
        if use_diffusion:
            atomic_write_text(out / f"{source}.diffusion.tsv", "".join(diffusion_lines))
        return out

    def stage_eval(self, source: str) -> dict[str, float]:
        if self.manifest.ground_truth is None:
            raise PipelineError("manifest has no ground-truth sidecar; nothing to evaluate")
        out = self.work / "eval"
        out.mkdir(parents=True, exist_ok=True)
        results: dict[str, float] = {}
        for suffix in ("", ".diffusion"):
            ranking_path = self.work / "search" / f"{source}{suffix}.tsv"
            if suffix == "" and not ranking_path.exists():
                raise PipelineError(f"{ranking_path.name} not found; run the 'search' stage first")
            if not ranking_path.exists():
                continue
            rankings = _load_rankings(ranking_path)
            mean_ap, per_query = mean_average_precision(rankings, self.manifest.ground_truth)
            lines = [f"{qid}\t{per_query[qid]:.6f}\n" for qid in sorted(per_query)]
            lines.append(f"mAP\t{mean_ap:.6f}\n")
            atomic_write_text(out / f"{source}{suffix}.tsv", "".join(lines))
            results[f"{source}{suffix}" if suffix else source] = mean_ap
        return results

    def stage_sal_precision(self, plot_dir: str | None = None) -> Path:
        fs_dir = self._require(self.work / "fs", "fs")
        os_dir = self._require(self.work / "os", "os")
        if not self.manifest.boxes:
            raise PipelineError("manifest has no boxes sidecar; nothing to measure")
        out = self.work / "salprec"
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        fs_values, os_values = [], []
        for image_id, _ in self.manifest.images:
            boxes = self.manifest.boxes.get(image_id)
            if not boxes:
                continue
            fs_map, stride = load_saliency(fs_dir / f"{image_id}.act")
            os_map, _ = load_saliency(os_dir / f"{image_id}.act")
            cells = [pixel_box_to_cells(b, stride, fs_map.shape) for b in boxes]
            p_fs = saliency_precision(fs_map, cells)
            p_os = saliency_precision(os_map, cells)
            fs_values.append(p_fs)
            os_values.append(p_os)
            rows.append(f"{image_id}\t{p_fs:.6f}\t{p_os:.6f}\n")
            if plot_dir:
                Path(plot_dir).mkdir(parents=True, exist_ok=True)
                write_pgm(Path(plot_dir) / f"{image_id}.fs.pgm", fs_map)
                write_pgm(Path(plot_dir) / f"{image_id}.os.pgm", os_map)
        atomic_write_text(out / "precision.tsv", "".join(rows))
        bins = np.linspace(0.0, 1.0, 21)
        fs_hist = np.histogram(fs_values, bins=bins)[0]
        os_hist = np.histogram(os_values, bins=bins)[0]
        hist_lines = [
            f"{bins[i]:.2f}\t{bins[i + 1]:.2f}\t{fs_hist[i]}\t{os_hist[i]}\n" for i in range(len(fs_hist))
        ]
        atomic_write_text(out / "histogram.tsv", "".join(hist_lines))
        atomic_write_text(
            out / "summary.tsv",
            f"mean_fs\t{np.mean(fs_values):.6f}\nmean_os\t{np.mean(os_values):.6f}\n",
        )
        if plot_dir:
            histogram_chart(Path(plot_dir) / "histogram.ppm", fs_hist, os_hist)
        return out

    # -- orchestration ---------------------------------------------------

    def run(self, stages: Sequence[str], **stage_kwargs) -> None:
        """Execute the named stages in order, logging each to run.log.

        "all" expands to the full chain; search/eval/sal-precision steps are
        included only when the manifest carries the needed sidecars.
        """
        expanded: list[tuple[str, Callable[[], object]]] = []
        for name in stages:
            if name == "all":
                expanded.extend(self._plan_all())
            else:
                expanded.append((name, self._stage_thunk(name, **stage_kwargs)))
        self.work.mkdir(parents=True, exist_ok=True)
        for name, thunk in expanded:
            start = time.monotonic()
            thunk()
            elapsed = time.monotonic() - start
            with open(self.work / "run.log", "a", encoding="utf-8") as log:
                log.write(f"{name}\t{elapsed:.3f}\t{self.output_digest()}\n")

    def _plan_all(self) -> list[tuple[str, Callable[[], object]]]:
        plan: list[tuple[str, Callable[[], object]]] = [
            ("fs", lambda: self.stage_fs()),
            ("detect:fs", lambda: self.stage_detect("fs")),
            ("pool", lambda: self.stage_pool()),
            ("graph", lambda: self.stage_graph()),
            ("os", lambda: self.stage_os()),
            ("detect:os", lambda: self.stage_detect("os")),
        ]
        for source in SOURCES:
            plan.append((f"aggregate:{source}", lambda s=source: self.stage_aggregate(s)))
        if self.manifest.queries:
            for source in SOURCES:
                plan.append((f"search:{source}", lambda s=source: self.stage_search(s)))
            if self.manifest.ground_truth is not None:
                for source in SOURCES:
                    plan.append((f"eval:{source}", lambda s=source: self.stage_eval(s)))
        if self.manifest.boxes:
            plan.append(("sal-precision", lambda: self.stage_sal_precision()))
        return plan

    def _stage_thunk(self, name: str, **kwargs) -> Callable[[], object]:
        base, _, qualifier = name.partition(":")
        table: dict[str, Callable[[], object]] = {
            "fs": lambda: self.stage_fs(heatmap_dir=kwargs.get("heatmap_dir")),
            "detect": lambda: self.stage_detect(qualifier or kwargs.get("source", "fs")),
            "pool": lambda: self.stage_pool(),
            "graph": lambda: self.stage_graph(),
            "os": lambda: self.stage_os(),
            "aggregate": lambda: self.stage_aggregate(qualifier or kwargs.get("source", "os")),
            "search": lambda: self.stage_search(
                qualifier or kwargs.get("source", "os"), kwargs.get("diffusion")
            ),
            "eval": lambda: self.stage_eval(qualifier or kwargs.get("source", "os")),
            "sal-precision": lambda: self.stage_sal_precision(plot_dir=kwargs.get("plot_dir")),
        }
        if base not in table:
            raise PipelineError(f"unknown stage {name!r}")
        return table[base]

    def output_digest(self) -> str:
        """Digest over every artifact below the work dir except run.log."""
        h = hashlib.sha256()
        for p in sorted(self.work.rglob("*")):
            if p.is_file() and p.name != "run.log":
                h.update(str(p.relative_to(self.work)).encode("utf-8"))
                h.update(b"\x00")
                h.update(p.read_bytes())
                h.update(b"\x01")
        return h.hexdigest()


def _load_rankings(path: Path) -> dict[str, list[str]]:
    rankings: dict[str, list[str]] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        query_id, _rank, image_id, _score = line.split("\t")
        rankings.setdefault(query_id, []).append(image_id)
    return rankings
