"""Finding the rectangle of a database map that best matches a query vector.

Every candidate window is scored by the cosine between its approximate
regional vector (four integral lookups per channel plus a table root) and
the query's unit MAC vector. The exhaustive scan over all O(W^2 H^2)
rectangles is the accuracy reference; the sampled search evaluates only
windows on a step grid within an aspect band around the query and then
polishes the best one by coordinate descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .actmap import ImageMeta
from .errors import InvalidInputError
from .pooling import IntegralStack, PoolingParams, Region, _check_region


@dataclass(frozen=True)
class SearchParams:
    """Sampled-search knobs: grid step, aspect band, refinement budget."""

    step: int = 3
    aspect_threshold: float = 1.1
    refine_max_change: int = 3
    refine_rounds: int = 5
    alpha: float = 10.0

    def __post_init__(self):
        if self.step < 1:
            raise InvalidInputError("step must be >= 1")
        if not self.aspect_threshold >= 1.0:
            raise InvalidInputError("aspect_threshold must be >= 1")
        if self.refine_max_change < 0 or self.refine_rounds < 0:
            raise InvalidInputError("refinement budget must be non-negative")
        PoolingParams(self.alpha)


@dataclass(frozen=True)
class DetectionResult:
    """Best-scoring window, its cosine score, and the pixel-plane box."""

    region: Region
    score: float
    image_box: tuple[int, int, int, int] | None
    windows_evaluated: int
    aspect_fallback: bool = False


def _check_query(q: np.ndarray) -> np.ndarray:
    q = np.ascontiguousarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise InvalidInputError("query vector must be 1-D")
    if not np.any(q):
        raise InvalidInputError("query vector is zero")
    return q


def _result(stack: IntegralStack, coords, score: float, windows: int, fallback: bool = False) -> DetectionResult:
    region = Region(*coords)
    box = None
    if stack.meta is not None:
        box = map_region_to_image(region, stack.meta, stack.width, stack.height)
    return DetectionResult(
        region=region,
        score=float(score),
        image_box=box,
        windows_evaluated=windows,
        aspect_fallback=fallback,
    )


def detect_exhaustive(stack: IntegralStack, q: np.ndarray) -> DetectionResult:
    """Globally optimal window under the approximate scores.

    ``q`` must be the l2-normalized query MAC. Ties break toward the
    smaller area, then the top-most, then the left-most window.
    """
    q = _check_query(q)
    if len(q) != stack.channels:
        raise InvalidInputError(f"query dim {len(q)} != {stack.channels} channels")
    lut = stack.lut
    x0, y0, x1, y1, score, windows = kernels.exhaustive_search(
        stack.table, q, lut.root_values, lut.root_powers, stack.alpha
    )
    return _result(stack, (x0, y0, x1, y1), score, windows)


def detect_aml(
    stack: IntegralStack,
    q: np.ndarray,
    query_aspect: float,
    params: SearchParams = SearchParams(),
) -> DetectionResult:
    """Step-sampled search plus refinement.

    Window corners and sizes both move on the ``params.step`` grid; windows
    whose width/height ratio differs from ``query_aspect`` by more than the
    aspect threshold factor are skipped before scoring. If the band (or a
    map smaller than the step) leaves nothing to evaluate, the search falls
    back to the unfiltered grid and finally to the exhaustive scan, flagged
    via ``aspect_fallback``.
    """
    q = _check_query(q)
    if len(q) != stack.channels:
        raise InvalidInputError(f"query dim {len(q)} != {stack.channels} channels")
    if not (query_aspect > 0 and math.isfinite(query_aspect)):
        raise InvalidInputError("query aspect ratio must be positive and finite")
    if stack.alpha != params.alpha:
        raise InvalidInputError(
            f"stack built with alpha={stack.alpha}, params ask {params.alpha}"
        )
    lut = stack.lut
    fallback = False
    x0, y0, x1, y1, score, windows, found = kernels.grid_search(
        stack.table,
        q,
        lut.root_values,
        lut.root_powers,
        stack.alpha,
        params.step,
        query_aspect / params.aspect_threshold,
        query_aspect * params.aspect_threshold,
    )
    if not found:
        fallback = True
        x0, y0, x1, y1, score, more, found = kernels.grid_search(
            stack.table, q, lut.root_values, lut.root_powers, stack.alpha,
            params.step, 0.0, math.inf,
        )
        windows += more
    if not found:
        # step grid empty (map smaller than the step): degenerate tiny map
        result = detect_exhaustive(stack, q)
        return _result(
            stack, result.region.as_tuple(), result.score,
            windows + result.windows_evaluated, True,
        )
    x0, y0, x1, y1, score, extra = kernels.refine_search(
        stack.table, q, lut.root_values, lut.root_powers, stack.alpha,
        (x0, y0, x1, y1), score, params.refine_max_change, params.refine_rounds,
    )
    return _result(stack, (x0, y0, x1, y1), score, windows + extra, fallback)


def refine(stack: IntegralStack, q: np.ndarray, seed: Region, params: SearchParams = SearchParams()) -> Region:
    """Coordinate-descent polish of a seed window; never lowers the score."""
    q = _check_query(q)
    _check_region(seed, stack.width, stack.height)
    lut = stack.lut
    seed_score = kernels.score_one(
        stack.table, q, seed.as_tuple(), lut.root_values, lut.root_powers, stack.alpha
    )
    x0, y0, x1, y1, _, _ = kernels.refine_search(
        stack.table, q, lut.root_values, lut.root_powers, stack.alpha,
        seed.as_tuple(), seed_score, params.refine_max_change, params.refine_rounds,
    )
    return Region(x0, y0, x1, y1)


def score_region(stack: IntegralStack, q: np.ndarray, region: Region) -> float:
    """Cosine of one window's approximate vector against a unit query."""
    q = _check_query(q)
    _check_region(region, stack.width, stack.height)
    lut = stack.lut
    return kernels.score_one(
        stack.table, q, region.as_tuple(), lut.root_values, lut.root_powers, stack.alpha
    )


def iou(a: Region, b: Region) -> float:
    """Intersection over union on inclusive cell counts."""
    ix = min(a.x1, b.x1) - max(a.x0, b.x0) + 1
    iy = min(a.y1, b.y1) - max(a.y0, b.y0) + 1
    inter = max(0, ix) * max(0, iy)
    union = a.area + b.area - inter
    return inter / union


def map_region_to_image(region: Region, meta: ImageMeta, width: int, height: int) -> tuple[int, int, int, int]:
    """Feature-map cells to an inclusive pixel rectangle, rounded outward."""
    _check_region(region, width, height)
    sx = meta.image_width / width
    sy = meta.image_height / height
    px0 = math.floor(region.x0 * sx)
    py0 = math.floor(region.y0 * sy)
    px1 = min(meta.image_width - 1, math.ceil((region.x1 + 1) * sx) - 1)
    py1 = min(meta.image_height - 1, math.ceil((region.y1 + 1) * sy) - 1)
    return px0, py0, px1, py1


def pixel_box_to_feature(box: tuple[int, int, int, int], meta: ImageMeta, width: int, height: int) -> Region:
    """Inclusive pixel rectangle to the covering feature-map region."""
    px0, py0, px1, py1 = box
    if px0 > px1 or py0 > py1 or px0 < 0 or py0 < 0:
        raise InvalidInputError(f"degenerate pixel box {box}")
    sx = width / meta.image_width
    sy = height / meta.image_height
    x0 = min(width - 1, math.floor(px0 * sx))
    y0 = min(height - 1, math.floor(py0 * sy))
    x1 = min(width - 1, max(x0, math.ceil((px1 + 1) * sx) - 1))
    y1 = min(height - 1, max(y0, math.ceil((py1 + 1) * sy) - 1))
    return Region(x0, y0, x1, y1)
