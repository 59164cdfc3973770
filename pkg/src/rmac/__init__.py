"""Particular-object image retrieval over quantized convolutional activations.

Compact max-pooled descriptors filter the database by cosine similarity; a
short-list is re-ranked by localizing the query object with integral-image
approximate max-pooling, then refined once more by query expansion.
"""

from .actmap import (
    ActivationMap,
    ActmapStats,
    ImageMeta,
    QuantizationParams,
    decode,
    dequantize_value,
    encode,
    inspect,
    load_actmap,
    quantize,
    save_actmap,
)
from .descriptors import PcaModel, l2_normalize, learn_pca, rmac, whiten, whitened_mac
from .errors import (
    CapacityError,
    DimensionMismatchError,
    FormatError,
    InsufficientDataError,
    InvalidInputError,
    RmacError,
    ZeroVectorError,
)
from .grid import RegionGridParams, choose_m, region_grid
from .localize import (
    DetectionResult,
    SearchParams,
    detect_aml,
    detect_exhaustive,
    iou,
    map_region_to_image,
    refine,
)
from .pooling import (
    IntegralStack,
    PoolingParams,
    Region,
    approx_max,
    approx_regional_vector,
    approximation_cosine_stats,
    approximation_error_profile,
    build_integral,
    mac,
    regional_max,
)
from .retrieval import (
    Index,
    IndexEntry,
    MapReport,
    QueryGroundTruth,
    RankedList,
    RerankParams,
    average_precision,
    evaluate_iou_protocol,
    evaluate_map,
    filter_rank,
    query_expand,
    rerank_aml,
)

__version__ = "0.1.0"
