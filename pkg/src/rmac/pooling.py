"""Rectangle pooling over activation maps: exact channel maxima and their
generalized-mean approximation served by per-channel integral images.

For a region R and exponent alpha, each channel's maximum is estimated by
(sum over R of v^alpha)^(1/alpha), which upper-bounds the true maximum and
converges to it as alpha grows. Powers of the 8 reconstruction values come
from a tiny lookup table, rectangle sums from 4 integral terms in double
precision, and the alpha-th root from binary search over a fine power grid,
so evaluating a window costs O(K) regardless of its area.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import kernels
from .actmap import DEFAULT_QUANT, ActivationMap, ImageMeta, QuantizationParams
from .errors import InvalidInputError

ROOT_GRID_STEP = 2.0**-8
ROOT_GRID_MAX = 128.0


@dataclass(frozen=True)
class PoolingParams:
    """Generalized-mean exponent; alpha=1 degenerates to sum-pooling."""

    alpha: float = 10.0

    def __post_init__(self):
        if not self.alpha >= 1.0:
            raise InvalidInputError("alpha must be >= 1")


@dataclass(frozen=True, order=True)
class Region:
    """Inclusive rectangle in feature-map cell coordinates."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x0 < 0 or self.y0 < 0 or self.x0 > self.x1 or self.y0 > self.y1:
            raise InvalidInputError(f"degenerate region {self!r}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)


def _check_region(region: Region, width: int, height: int) -> None:
    if region.x1 >= width or region.y1 >= height:
        raise InvalidInputError(f"{region!r} outside a {width}x{height} map")


class PowerLut:
    """Power and root tables for one exponent.

    ``level_powers`` holds v^alpha for the 8 reconstruction values and feeds
    integral construction. ``root_values``/``root_powers`` form a strictly
    increasing grid t, t^alpha with t stepped by 2^-8 over [0, 128]; the
    alpha-th root of a sum is the grid point whose power is nearest (ties
    toward the larger value), with direct exponentiation past the grid end.
    """

    __slots__ = ("alpha", "level_powers", "root_values", "root_powers")

    def __init__(self, alpha: float, params: QuantizationParams = DEFAULT_QUANT):
        if not alpha >= 1.0:
            raise InvalidInputError("alpha must be >= 1")
        self.alpha = float(alpha)
        self.level_powers = params.reconstruction_table() ** self.alpha
        n = int(round(ROOT_GRID_MAX / ROOT_GRID_STEP)) + 1
        self.root_values = np.arange(n, dtype=np.float64) * ROOT_GRID_STEP
        self.root_powers = self.root_values**self.alpha
        if not np.isfinite(self.root_powers[-1]):
            raise InvalidInputError(
                f"alpha={alpha} overflows double precision on [0, {ROOT_GRID_MAX}]"
            )

    def root(self, sums):
        return kernels.apply_root(sums, self.root_values, self.root_powers, self.alpha)


@lru_cache(maxsize=32)
def power_lut(alpha: float, params: QuantizationParams = DEFAULT_QUANT) -> PowerLut:
    return PowerLut(alpha, params)


@dataclass
class IntegralStack:
    """Per-channel integral images of alpha-th powers, plus provenance."""

    table: np.ndarray  # (H+1, W+1, K) float64
    alpha: float
    lut: PowerLut
    meta: ImageMeta | None = None

    @property
    def height(self) -> int:
        return self.table.shape[0] - 1

    @property
    def width(self) -> int:
        return self.table.shape[1] - 1

    @property
    def channels(self) -> int:
        return self.table.shape[2]


def build_integral(source, params: PoolingParams = PoolingParams()) -> IntegralStack:
    """Cumulative tables of v^alpha for an ActivationMap or a raw (H, W, K)
    non-negative tensor (the dense mode used by the approximation profiles)."""
    if isinstance(source, ActivationMap):
        lut = power_lut(params.alpha, source.params)
        powers = lut.level_powers[source.levels]
        meta = source.meta
    else:
        lut = power_lut(params.alpha)
        values = np.asarray(source, dtype=np.float64)
        if values.ndim != 3 or values.size == 0:
            raise InvalidInputError("raw tensor must be a non-empty (H, W, K) array")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise InvalidInputError("raw tensor must be finite and non-negative")
        powers = values**params.alpha
        meta = None
    table = kernels.build_integral(np.ascontiguousarray(powers))
    return IntegralStack(table=table, alpha=params.alpha, lut=lut, meta=meta)


def mac(amap: ActivationMap) -> np.ndarray:
    """Per-channel maximum over the whole map (raw, non-negative)."""
    recon = amap.params.reconstruction_table()
    return recon[amap.levels.max(axis=(0, 1))]


def regional_max(amap: ActivationMap, region: Region) -> np.ndarray:
    """Exact per-channel maximum over one rectangle."""
    _check_region(region, amap.width, amap.height)
    block = amap.levels[region.y0 : region.y1 + 1, region.x0 : region.x1 + 1, :]
    return amap.params.reconstruction_table()[block.max(axis=(0, 1))]


def approx_max(stack: IntegralStack, region: Region, channel: int) -> float:
    """Generalized-mean estimate of one channel's maximum over a region."""
    _check_region(region, stack.width, stack.height)
    if not 0 <= channel < stack.channels:
        raise InvalidInputError(f"channel {channel} outside 0..{stack.channels - 1}")
    regs = np.array([region.as_tuple()], dtype=np.int64)
    sums = kernels.region_sums(stack.table[:, :, channel : channel + 1], regs)
    return float(stack.lut.root(sums[0, 0]))


def approx_regional_vector(stack: IntegralStack, region: Region) -> np.ndarray:
    """Approximate regional feature vector: one root per channel."""
    _check_region(region, stack.width, stack.height)
    regs = np.array([region.as_tuple()], dtype=np.int64)
    sums = kernels.region_sums(stack.table, regs)[0]
    return stack.lut.root(sums)


def _dense_values(source) -> np.ndarray:
    if isinstance(source, ActivationMap):
        return source.dequantize()
    values = np.asarray(source, dtype=np.float64)
    if values.ndim != 3 or values.size == 0:
        raise InvalidInputError("raw tensor must be a non-empty (H, W, K) array")
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise InvalidInputError("raw tensor must be finite and non-negative")
    return values


def _column_sweeps(values: np.ndarray, powers: np.ndarray):
    """Yield (width, column power sums, column maxima) for every x-span.

    Both (H, K) buffers accumulate in place; consumers must use them before
    advancing the generator.
    """
    h, w, k = values.shape
    for x0 in range(w):
        col_s = np.zeros((h, k))
        col_m = np.zeros((h, k))
        for x1 in range(x0, w):
            col_s += powers[:, x1, :]
            np.maximum(col_m, values[:, x1, :], out=col_m)
            yield x1 - x0 + 1, col_s, col_m


@dataclass(frozen=True)
class ErrorProfileRow:
    region_size: int
    alpha: float
    mean_abs_error: float


def approximation_error_profile(maps, alphas) -> list[ErrorProfileRow]:
    """Mean |approx - exact| per channel, bucketed by region cell count.

    Evaluates every rectangular region of every map. The estimate is
    computed directly from the per-cell powers (not through an integral
    table), with the sum referenced to the region maximum, so a size-1
    region has error exactly 0 and the error is non-increasing in alpha.
    """
    if not maps:
        raise InvalidInputError("need at least one map")
    alphas = [float(a) for a in alphas]
    for a in alphas:
        if not a >= 1.0:
            raise InvalidInputError("alpha must be >= 1")
    sums: dict[float, dict[int, float]] = {a: {} for a in alphas}
    counts: dict[float, dict[int, int]] = {a: {} for a in alphas}
    for source in maps:
        values = _dense_values(source)
        h, w, k = values.shape
        cells = h * w
        for alpha in alphas:
            powers = values**alpha
            inv = 1.0 / alpha
            bucket_sum = np.zeros(cells + 1)
            bucket_cnt = np.zeros(cells + 1, dtype=np.int64)
            for width, col_s, col_m in _column_sweeps(values, powers):
                for y0 in range(h):
                    s = np.add.accumulate(col_s[y0:], axis=0)
                    f = np.maximum.accumulate(col_m[y0:], axis=0)
                    fp = f**alpha
                    with np.errstate(invalid="ignore", divide="ignore"):
                        ratio = np.where(fp > 0.0, s / fp, 1.0)
                    err = f * (ratio**inv - 1.0)  # >= 0: ratio >= 1 by construction
                    sizes = width * np.arange(1, h - y0 + 1)
                    np.add.at(bucket_sum, sizes, err.sum(axis=1))
                    np.add.at(bucket_cnt, sizes, k)
            target_s = sums[alpha]
            target_c = counts[alpha]
            for size in np.flatnonzero(bucket_cnt):
                size = int(size)
                target_s[size] = target_s.get(size, 0.0) + float(bucket_sum[size])
                target_c[size] = target_c.get(size, 0) + int(bucket_cnt[size])
    rows = []
    for alpha in alphas:
        for size in sorted(counts[alpha]):
            rows.append(
                ErrorProfileRow(size, alpha, sums[alpha][size] / counts[alpha][size])
            )
    rows.sort(key=lambda r: (r.region_size, r.alpha))
    return rows


def write_error_profile_csv(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region_size", "alpha", "mean_abs_error"])
        for row in rows:
            writer.writerow([row.region_size, row.alpha, f"{row.mean_abs_error:.12g}"])


@dataclass(frozen=True)
class CosineStats:
    mean: float
    minimum: float
    regions: int


def approximation_cosine_stats(maps, alpha: float = 10.0) -> CosineStats:
    """Cosine between exact and approximate regional vectors over every
    rectangle of every map. All-zero regions count as cosine 1 (both vectors
    vanish together)."""
    if not maps:
        raise InvalidInputError("need at least one map")
    if not alpha >= 1.0:
        raise InvalidInputError("alpha must be >= 1")
    inv = 1.0 / alpha
    total = 0.0
    count = 0
    minimum = np.inf
    for source in maps:
        values = _dense_values(source)
        h = values.shape[0]
        powers = values**alpha
        for _, col_s, col_m in _column_sweeps(values, powers):
            for y0 in range(h):
                s = np.add.accumulate(col_s[y0:], axis=0)
                f = np.maximum.accumulate(col_m[y0:], axis=0)
                approx = s**inv
                num = np.einsum("ij,ij->i", f, approx)
                den = np.linalg.norm(f, axis=1) * np.linalg.norm(approx, axis=1)
                with np.errstate(invalid="ignore", divide="ignore"):
                    cos = np.where(den > 0.0, num / den, 1.0)
                total += float(cos.sum())
                count += cos.size
                minimum = min(minimum, float(cos.min()))
    return CosineStats(mean=total / count, minimum=minimum, regions=count)
