"""Multi-scale square sampling grid on the feature-map plane.

Scale l tiles the map with squares of side round(2*min(W,H)/(l+1)), one row
of l placements along the short axis and l+m-1 along the long axis, centers
uniformly spaced with the first and last square touching opposite borders.
The long-axis count m is fixed once from the map aspect so that consecutive
squares at the largest scale overlap as close as possible to the target
fraction (40% by default).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .errors import InvalidInputError
from .pooling import Region


@dataclass(frozen=True)
class RegionGridParams:
    num_scales: int = 3
    target_overlap: float = 0.4

    def __post_init__(self):
        if self.num_scales < 1:
            raise InvalidInputError("num_scales must be >= 1")
        if not 0.0 < self.target_overlap < 1.0:
            raise InvalidInputError("target_overlap must be in (0, 1)")


def choose_m(width: int, height: int, target_overlap: float = 0.4) -> int:
    """Long-axis placement count whose consecutive-square overlap is nearest
    the target; a single placement counts as overlap 0, ties go to larger m."""
    if width < 1 or height < 1:
        raise InvalidInputError("map dimensions must be positive")
    long_side = max(width, height)
    short_side = min(width, height)
    best_m = 1
    best_dist = abs(0.0 - target_overlap)
    for m in range(2, math.ceil(long_side / short_side) + 2):
        overlap = 1.0 - (long_side - short_side) / ((m - 1) * short_side)
        dist = abs(overlap - target_overlap)
        if dist <= best_dist:
            best_m = m
            best_dist = dist
    return best_m


def _positions(axis_len: int, side: int, count: int) -> list[int]:
    # Uniform real-valued centers with endpoints pinned to the borders,
    # floored to cells; integer arithmetic keeps the endpoints exact.
    if count == 1:
        return [(axis_len - side) // 2]
    span = axis_len - side
    return [(j * span) // (count - 1) for j in range(count)]


def region_grid(width: int, height: int, params: RegionGridParams = RegionGridParams()) -> list[Region]:
    """All sampling squares, scale-major then row-major. Deterministic.

    A scale whose side rounds to zero is skipped with a warning (degenerate
    tiny maps).
    """
    if width < 1 or height < 1:
        raise InvalidInputError("map dimensions must be positive")
    m = choose_m(width, height, params.target_overlap)
    short_side = min(width, height)
    regions: list[Region] = []
    for scale in range(1, params.num_scales + 1):
        side = int(math.floor(2.0 * short_side / (scale + 1) + 0.5))  # round half up
        if side < 1:
            warnings.warn(
                f"scale {scale} skipped: region side rounds to zero on a "
                f"{width}x{height} map",
                RuntimeWarning,
                stacklevel=2,
            )
            continue
        n_long = scale + m - 1
        n_short = scale
        nx, ny = (n_long, n_short) if width >= height else (n_short, n_long)
        xs = _positions(width, side, nx)
        ys = _positions(height, side, ny)
        for y0 in ys:
            for x0 in xs:
                regions.append(Region(x0, y0, x0 + side - 1, y0 + side - 1))
    return regions
