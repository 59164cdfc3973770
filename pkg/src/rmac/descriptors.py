"""Descriptor post-processing and aggregation.

Global and regional max-pooled vectors become comparable signatures through
the normalize -> whiten -> normalize pipeline. The regional variant sums the
whitened region vectors over the sampling grid and normalizes once more, so
the final dimensionality stays equal to the channel count.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .actmap import ActivationMap
from .errors import (
    DimensionMismatchError,
    FormatError,
    InsufficientDataError,
    InvalidInputError,
    ZeroVectorError,
)
from .grid import RegionGridParams, region_grid
from .pooling import IntegralStack, Region, approx_regional_vector, mac, regional_max

PCA_MAGIC = b"PCA1"

EIGENVALUE_FLOOR_RATIO = 1e-10


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Unit-norm copy; rejects the zero vector (an empty activation map)."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ZeroVectorError("cannot normalize a zero vector")
    return v / norm


@dataclass(frozen=True)
class PcaModel:
    """Mean and whitening projection (rows ordered by descending eigenvalue)."""

    mean: np.ndarray
    projection: np.ndarray
    source_tag: str = ""

    @property
    def dim(self) -> int:
        return len(self.mean)

    @classmethod
    def identity(cls, dim: int, source_tag: str = "identity") -> "PcaModel":
        return cls(np.zeros(dim), np.eye(dim), source_tag)

    def save(self, path) -> None:
        k = self.dim
        with Path(path).open("wb") as fh:
            fh.write(PCA_MAGIC)
            fh.write(struct.pack("<H", k))
            fh.write(np.ascontiguousarray(self.mean, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.projection, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "PcaModel":
        data = Path(path).read_bytes()
        if len(data) < 6 or data[:4] != PCA_MAGIC:
            raise FormatError(f"not a PCA model file: {path}", 0)
        (k,) = struct.unpack_from("<H", data, 4)
        expected = 6 + 8 * k + 8 * k * k
        if len(data) != expected:
            raise FormatError(
                f"PCA file length {len(data)} != expected {expected} for K={k}", 6
            )
        mean = np.frombuffer(data, dtype="<f8", count=k, offset=6).copy()
        projection = (
            np.frombuffer(data, dtype="<f8", count=k * k, offset=6 + 8 * k)
            .reshape(k, k)
            .copy()
        )
        return cls(mean, projection, source_tag=str(path))


def learn_pca(samples, source_tag: str = "", dim: int | None = None) -> PcaModel:
    """Whitening transform from descriptor samples (rows).

    Eigenvalues are floored at EIGENVALUE_FLOOR_RATIO times the largest one
    before the inverse square root, so rank-deficient desk-scale sets do not
    produce infinities. ``dim`` optionally keeps only the leading components;
    the dropped rows are zeroed rather than removed, so the projection (and
    its file form) stays K x K and downstream descriptors keep dimension K.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError("need at least 2 sample vectors")
    mean = x.mean(axis=0)
    cov = np.cov(x, rowvar=False)
    cov = np.atleast_2d(cov)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    if eigvals[0] <= 0.0:
        raise InsufficientDataError("samples have no variance in any direction")
    floored = np.maximum(eigvals, eigvals[0] * EIGENVALUE_FLOOR_RATIO)
    projection = (eigvecs / np.sqrt(floored)).T
    if dim is not None:
        if not 1 <= dim <= projection.shape[0]:
            raise InvalidInputError(f"dim must be in 1..{projection.shape[0]}")
        projection = projection.copy()
        projection[dim:, :] = 0.0
    return PcaModel(mean=mean, projection=projection, source_tag=source_tag)


def whiten(v: np.ndarray, model: PcaModel) -> np.ndarray:
    """Projection of the centered vector(s): rows map K -> K."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.dim:
        raise DimensionMismatchError(
            f"vector dim {v.shape[-1]} != model dim {model.dim}"
        )
    return (v - model.mean) @ model.projection.T


def whitened_mac(amap: ActivationMap, model: PcaModel) -> np.ndarray:
    """Global signature: max-pool, normalize, whiten, normalize."""
    return l2_normalize(whiten(l2_normalize(mac(amap)), model))


def _aggregate(vectors: list[np.ndarray], dim: int) -> np.ndarray:
    if not vectors:
        raise ZeroVectorError("all regions pooled to zero")
    acc = np.zeros(dim)
    for vec in vectors:
        acc += vec
    return l2_normalize(acc)


def aggregate_regions(amap: ActivationMap, regions, model: PcaModel) -> np.ndarray:
    """Sum of whitened regional vectors, final-normalized.

    Regions are processed in sorted coordinate order, so the result is
    bit-identical under any permutation of the input list. Regions whose
    exact maximum vector is all zero contribute nothing.
    """
    pieces = []
    for region in sorted(regions):
        vec = regional_max(amap, region)
        if not vec.any():
            continue
        pieces.append(l2_normalize(whiten(l2_normalize(vec), model)))
    return _aggregate(pieces, model.dim)


def rmac(amap: ActivationMap, model: PcaModel, grid_params: RegionGridParams = RegionGridParams()) -> np.ndarray:
    """Multi-region signature over the sampling grid (exact pooling)."""
    regions = region_grid(amap.width, amap.height, grid_params)
    return aggregate_regions(amap, regions, model)


def regional_vectors(amap: ActivationMap, grid_params: RegionGridParams = RegionGridParams()) -> np.ndarray:
    """Stacked unit regional vectors (for whitening-corpus collection).

    All-zero regions are dropped; may return fewer rows than grid regions.
    """
    rows = []
    for region in region_grid(amap.width, amap.height, grid_params):
        vec = regional_max(amap, region)
        if vec.any():
            rows.append(l2_normalize(vec))
    return np.array(rows).reshape(-1, amap.channels)


def whitened_mac_region(stack: IntegralStack, region: Region, model: PcaModel) -> np.ndarray:
    """Whitened MAC of one rectangle via integral pooling (re-ranking path)."""
    return l2_normalize(whiten(l2_normalize(approx_regional_vector(stack, region)), model))


def rmac_region(
    stack: IntegralStack,
    region: Region,
    model: PcaModel,
    grid_params: RegionGridParams = RegionGridParams(),
) -> np.ndarray:
    """Multi-region signature of one rectangle via integral pooling.

    The sampling grid is generated inside the rectangle's extent and each
    sub-region is pooled approximately, which is what makes re-scoring a
    detected window cheap at query time.
    """
    pieces = []
    for sub in sorted(region_grid(region.width, region.height, grid_params)):
        shifted = Region(
            sub.x0 + region.x0, sub.y0 + region.y0, sub.x1 + region.x0, sub.y1 + region.y0
        )
        vec = approx_regional_vector(stack, shifted)
        if not vec.any():
            continue
        pieces.append(l2_normalize(whiten(l2_normalize(vec), model)))
    return _aggregate(pieces, model.dim)
