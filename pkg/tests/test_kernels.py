"""Compiled and numpy backends must agree: bit-exact on quantized maps,
within float rounding on raw tensors."""

import math

import numpy as np
import pytest

from rmac import kernels
from rmac.pooling import power_lut

from conftest import random_map, random_raw

HAVE_FAST = "cython" in kernels.available_backends()

pytestmark = pytest.mark.skipif(not HAVE_FAST, reason="compiled backend not built")


@pytest.fixture(scope="module")
def backends():
    return kernels.get_backend("numpy"), kernels.get_backend("cython")


def _tables(rng, quantized=True):
    lut = power_lut(10.0)
    if quantized:
        amap = random_map(rng, 14, 11, 6, density=0.5)
        powers = np.ascontiguousarray(lut.level_powers[amap.levels])
    else:
        powers = np.ascontiguousarray(random_raw(rng, 14, 11, 6) ** 10.0)
    return powers, lut


class TestParityQuantized:
    def test_integral_bit_equal(self, backends, rng):
        ref, fast = backends
        powers, _ = _tables(rng)
        assert np.array_equal(ref.build_integral(powers), fast.build_integral(powers))

    def test_region_sums_bit_equal(self, backends, rng):
        ref, fast = backends
        powers, _ = _tables(rng)
        table = ref.build_integral(powers)
        regions = np.array(
            [[0, 0, 13, 10], [2, 1, 5, 5], [7, 7, 7, 7], [0, 10, 13, 10]], dtype=np.int64
        )
        assert np.array_equal(ref.region_sums(table, regions), fast.region_sums(table, regions))

    def test_roots_bit_equal(self, backends, rng):
        ref, fast = backends
        _, lut = _tables(rng)
        sums = np.concatenate([
            rng.uniform(0, 130, 200) ** 10.0,
            [0.0, lut.root_powers[-1], lut.root_powers[-1] * 1.5],
        ])
        a = ref.apply_root(sums, lut.root_values, lut.root_powers, 10.0)
        b = fast.apply_root(sums, lut.root_values, lut.root_powers, 10.0)
        assert np.array_equal(a, b)

    def test_roots_identity_at_alpha_one(self, backends, rng):
        ref, fast = backends
        lut = power_lut(1.0)
        sums = rng.uniform(0, 1e6, 50)
        assert np.array_equal(ref.apply_root(sums, lut.root_values, lut.root_powers, 1.0), sums)
        assert np.array_equal(fast.apply_root(sums, lut.root_values, lut.root_powers, 1.0), sums)

    def test_scores_bit_equal(self, backends, rng):
        ref, fast = backends
        powers, lut = _tables(rng)
        table = ref.build_integral(powers)
        q = rng.random(6)
        q /= np.linalg.norm(q)
        regions = np.array(
            [[x0, y0, x1, y1]
             for x0 in range(0, 14, 3) for x1 in range(x0, 14, 2)
             for y0 in range(0, 11, 3) for y1 in range(y0, 11, 2)],
            dtype=np.int64,
        )
        a = ref.score_regions(table, q, regions, lut.root_values, lut.root_powers, 10.0)
        b = fast.score_regions(table, q, regions, lut.root_values, lut.root_powers, 10.0)
        assert np.array_equal(a, b)

    def test_exhaustive_identical(self, backends, rng):
        ref, fast = backends
        for _ in range(5):
            powers, lut = _tables(rng)
            table = ref.build_integral(powers)
            q = rng.random(6)
            q /= np.linalg.norm(q)
            a = ref.exhaustive_search(table, q, lut.root_values, lut.root_powers, 10.0)
            b = fast.exhaustive_search(table, q, lut.root_values, lut.root_powers, 10.0)
            assert a == b

    def test_grid_and_refine_identical(self, backends, rng):
        ref, fast = backends
        powers, lut = _tables(rng)
        table = ref.build_integral(powers)
        q = rng.random(6)
        q /= np.linalg.norm(q)
        for band in [(0.5, 2.0), (0.0, math.inf), (40.0, 50.0)]:
            a = ref.grid_search(table, q, lut.root_values, lut.root_powers, 10.0, 3, *band)
            b = fast.grid_search(table, q, lut.root_values, lut.root_powers, 10.0, 3, *band)
            assert a == b
            if a[6]:
                seed = a[:4]
                ra = ref.refine_search(table, q, lut.root_values, lut.root_powers, 10.0, seed, a[4], 3, 5)
                rb = fast.refine_search(table, q, lut.root_values, lut.root_powers, 10.0, seed, a[4], 3, 5)
                assert ra == rb


class TestParityRaw:
    def test_integral_close_on_raw(self, backends, rng):
        ref, fast = backends
        powers, _ = _tables(rng, quantized=False)
        a = ref.build_integral(powers)
        b = fast.build_integral(powers)
        assert np.allclose(a, b, rtol=1e-12, atol=0.0)

    def test_scores_close_on_raw(self, backends, rng):
        ref, fast = backends
        powers, lut = _tables(rng, quantized=False)
        table = ref.build_integral(powers)
        q = rng.random(6)
        q /= np.linalg.norm(q)
        regions = np.array([[0, 0, 13, 10], [3, 2, 9, 8]], dtype=np.int64)
        a = ref.score_regions(table, q, regions, lut.root_values, lut.root_powers, 10.0)
        b = fast.score_regions(table, q, regions, lut.root_values, lut.root_powers, 10.0)
        assert np.allclose(a, b, rtol=1e-9)


class TestScoreOne:
    def test_matches_score_regions(self, backends, rng):
        ref, fast = backends
        powers, lut = _tables(rng)
        table = ref.build_integral(powers)
        q = rng.random(6)
        q /= np.linalg.norm(q)
        region = (2, 3, 9, 8)
        arr = np.array([region], dtype=np.int64)
        expected = ref.score_regions(table, q, arr, lut.root_values, lut.root_powers, 10.0)[0]
        assert ref.score_one(table, q, region, lut.root_values, lut.root_powers, 10.0) == expected
        assert fast.score_one(table, q, region, lut.root_values, lut.root_powers, 10.0) == expected
