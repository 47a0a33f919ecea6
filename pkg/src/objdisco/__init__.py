"""Unsupervised object discovery over CNN activation tensors, with
saliency-driven region detection, graph centrality, and clutter-free global
descriptors for instance retrieval."""

from .config import PipelineConfig, parse_config, serialize_config
from .descriptors import WhiteningModel, apply_whitening, fit_whitening, max_pool, region_saliency
from .egm import EgmConfig, WeightedGaussian, components_to_regions, egm_fit, gaussian_inner
from .graph import ConvergenceError, centrality, mutual_knn_adjacency, normalize_adjacency, solve_cg
from .object_saliency import RegionIndex, object_saliency_map, patch_descriptor
from .pipeline import Pipeline, PipelineError
from .retrieval import (
    GlobalDescriptor,
    aggregate_global,
    diffuse,
    mean_average_precision,
    query_descriptor,
    rank_cosine,
    saliency_precision,
    triangle_expand,
    uniform_regions,
)
from .saliency import feature_saliency_map, idf_weights, preprocess_saliency
from .store import (
    ActivationMap,
    DatasetManifest,
    FormatError,
    GroundTruth,
    PixelBox,
    Rectangle,
    load_activation,
    load_manifest,
    save_activation,
)

__version__ = "0.1.0"
