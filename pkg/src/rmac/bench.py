"""Throughput measurements, including the compiled-vs-numpy kernel comparison."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .actmap import ActivationMap
from .descriptors import l2_normalize
from .localize import SearchParams
from .pooling import PoolingParams, mac, power_lut


@dataclass(frozen=True)
class BenchRow:
    backend: str
    integral_ms: float
    filter_vps: float
    aml_windows_per_s: float
    exhaustive_windows_per_s: float
    # data-dependent outputs of the measured work; timing-free, so two runs
    # on the same corpus must produce identical fingerprints
    fingerprint: tuple = ()


def _time(fn, *args):
    start = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - start


def bench_backend(
    backend_name: str,
    amaps: list[ActivationMap],
    vectors: np.ndarray,
    params: SearchParams = SearchParams(),
    repeats: int = 3,
) -> BenchRow:
    """Measure one kernel backend on real maps and a descriptor matrix."""
    backend = kernels.get_backend(backend_name)
    lut = power_lut(params.alpha)
    alpha = params.alpha

    powers = [lut.level_powers[m.levels] for m in amaps]
    t0 = time.perf_counter()
    for _ in range(repeats):
        tables = [backend.build_integral(np.ascontiguousarray(p)) for p in powers]
    integral_ms = (time.perf_counter() - t0) / (repeats * len(amaps)) * 1e3

    q = l2_normalize(mac(amaps[0]))
    table = tables[0]
    best, dt = _time(
        backend.exhaustive_search, table, q, lut.root_values, lut.root_powers, alpha
    )
    exhaustive_wps = best[5] / dt if dt > 0 else float("inf")

    aspect = amaps[0].width / amaps[0].height
    t0 = time.perf_counter()
    aml_windows = 0
    aml_results = []
    for table in tables:
        out = backend.grid_search(
            table, q, lut.root_values, lut.root_powers, alpha,
            params.step, aspect / params.aspect_threshold, aspect * params.aspect_threshold,
        )
        aml_windows += out[5]
        aml_results.append(out[:5])
    aml_dt = time.perf_counter() - t0
    aml_wps = aml_windows / aml_dt if aml_dt > 0 else float("inf")

    qv = vectors[0]
    t0 = time.perf_counter()
    loops = max(1, 200_000 // max(1, len(vectors)))
    for _ in range(loops):
        scores = np.zeros(len(vectors))
        for i in range(vectors.shape[1]):
            scores += vectors[:, i] * qv[i]
    filter_dt = time.perf_counter() - t0
    filter_vps = loops * len(vectors) / filter_dt if filter_dt > 0 else float("inf")

    return BenchRow(
        backend=backend_name,
        integral_ms=integral_ms,
        filter_vps=filter_vps,
        aml_windows_per_s=aml_wps,
        exhaustive_windows_per_s=exhaustive_wps,
        fingerprint=(tuple(best), tuple(aml_results), aml_windows),
    )


def run_benchmark(
    amaps: list[ActivationMap],
    vectors: np.ndarray,
    params: SearchParams = SearchParams(),
    backends: list[str] | None = None,
) -> list[BenchRow]:
    if backends is None:
        backends = kernels.available_backends()
    return [bench_backend(name, amaps, vectors, params) for name in backends]
