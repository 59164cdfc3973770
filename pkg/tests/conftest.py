"""Shared fixtures: random quantized maps, raw tensors, planted-object suites."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from rmac.actmap import ActivationMap, ImageMeta
from rmac.pooling import Region


def random_map(rng, width, height, channels, density=0.3, max_level=7, image_scale=32, tag="") -> ActivationMap:
    """Sparse random quantized map; levels uniform in 1..max_level."""
    levels = rng.integers(1, max_level + 1, size=(height, width, channels))
    levels[rng.random((height, width, channels)) >= density] = 0
    meta = ImageMeta(tag or f"synthetic-{rng.integers(1 << 30)}", width * image_scale, height * image_scale)
    return ActivationMap(levels.astype(np.uint8), meta)


def random_raw(rng, width, height, channels, zero_fraction=0.81, high=151.0) -> np.ndarray:
    """Dense raw tensor: the stated fraction of zeros, the rest uniform in [0, high]."""
    values = rng.uniform(0.0, high, size=(height, width, channels))
    values[rng.random((height, width, channels)) < zero_fraction] = 0.0
    return values


@dataclass(frozen=True)
class PlantedPair:
    query_map: ActivationMap
    target_map: ActivationMap
    planted: Region


def _border_ring(width, height) -> list[tuple[int, int]]:
    ring = [(x, 0) for x in range(width)]
    ring += [(width - 1, y) for y in range(1, height)]
    ring += [(x, height - 1) for x in range(width - 2, -1, -1)]
    ring += [(0, y) for y in range(height - 2, 0, -1)]
    return ring


def make_pattern(rng, width, height, channels) -> np.ndarray:
    """Block whose per-channel peaks sit spread around its border.

    Mimics conv activations of an object: each filter peaks somewhere else,
    so only windows spanning the whole block reproduce the max-pooled
    signature. Low-level filler inside keeps partial windows unattractive.
    """
    pattern = np.zeros((height, width, channels), dtype=np.uint8)
    filler = rng.integers(1, 3, size=(height, width, channels))
    filler[rng.random((height, width, channels)) >= 0.4] = 0
    pattern[:, :, :] = filler
    # diverse ceilings: a near-uniform signature would let any clutter
    # window match the query direction regardless of its magnitude
    ceilings = rng.permutation(np.tile(np.arange(2, 8), channels // 6 + 1)[:channels])
    ring = _border_ring(width, height)
    spots = [ring[(j * len(ring)) // channels] for j in range(channels)]
    for i, (x, y) in enumerate(spots):
        pattern[y, x, :] = 0  # the peak cell fires its own channel only
        pattern[y, x, i] = ceilings[i]
    return pattern


def planted_pair(rng, channels=8, target_w=30, target_h=22, clutter_density=0.07) -> PlantedPair:
    """A channel-signature pattern pasted into low-level background dust.

    The query map is the pattern itself (a pre-cropped query); the target
    holds the same pattern at a random offset. The dust keeps the score
    landscape strict (shedding background cells always pays) without
    offering competitive directions of its own.
    """
    pw = int(rng.integers(6, 13))
    ph = int(rng.integers(6, 13))
    pattern = make_pattern(rng, pw, ph, channels)
    clutter = rng.integers(1, 3, size=(target_h, target_w, channels))
    clutter[rng.random((target_h, target_w, channels)) >= clutter_density] = 0
    x0 = int(rng.integers(0, target_w - pw + 1))
    y0 = int(rng.integers(0, target_h - ph + 1))
    clutter[y0 : y0 + ph, x0 : x0 + pw, :] = pattern
    qmeta = ImageMeta("query", pw * 32, ph * 32)
    tmeta = ImageMeta("target", target_w * 32, target_h * 32)
    return PlantedPair(
        query_map=ActivationMap(pattern, qmeta),
        target_map=ActivationMap(clutter.astype(np.uint8), tmeta),
        planted=Region(x0, y0, x0 + pw - 1, y0 + ph - 1),
    )


@dataclass(frozen=True)
class PlantedCorpus:
    """Retrieval suite: named database maps, query maps, and ground truth."""

    database: dict[str, ActivationMap]
    queries: dict[str, ActivationMap]
    positives: dict[str, frozenset[str]]
    junk: dict[str, frozenset[str]]


def _clutter_map(rng, width, height, channels, distractors=14) -> np.ndarray:
    """Low-level dust plus a handful of strong single-channel cells.

    The strong cells pollute the global max-pooled signature (so plain
    filtering is imperfect) without forming a coherent window.
    """
    clutter = rng.integers(1, 3, size=(height, width, channels))
    clutter[rng.random((height, width, channels)) >= 0.07] = 0
    for _ in range(distractors):
        x = int(rng.integers(0, width))
        y = int(rng.integers(0, height))
        clutter[y, x, int(rng.integers(0, channels))] = int(rng.integers(4, 8))
    return clutter


def planted_corpus(
    rng,
    n_database=60,
    n_planted=10,
    n_queries=5,
    channels=16,
    target_w=24,
    target_h=18,
) -> PlantedCorpus:
    """One object, several query views of it, several database occurrences.

    Mirrors the buildings protocol: the queries are crops of a master
    pattern, every database map embedding that pattern is a positive for
    every query, and a couple of clutter maps per query are labeled junk.
    """
    master_w, master_h = 12, 10
    master = make_pattern(rng, master_w, master_h, channels)

    queries = {}
    for qi in range(n_queries):
        if qi == 0:
            crop = master
        else:
            cw = int(rng.integers(8, master_w))
            ch = int(rng.integers(7, master_h))
            cx = int(rng.integers(0, master_w - cw + 1))
            cy = int(rng.integers(0, master_h - ch + 1))
            crop = master[cy : cy + ch, cx : cx + cw, :]
        name = f"q{qi}"
        queries[name] = ActivationMap(
            crop.copy(), ImageMeta(name, crop.shape[1] * 32, crop.shape[0] * 32)
        )

    database = {}
    planted_names = set()
    for di in range(n_database):
        clutter = _clutter_map(rng, target_w, target_h, channels)
        name = f"db{di:03d}"
        if di < n_planted:
            x0 = int(rng.integers(0, target_w - master_w + 1))
            y0 = int(rng.integers(0, target_h - master_h + 1))
            clutter[y0 : y0 + master_h, x0 : x0 + master_w, :] = master
            planted_names.add(name)
        database[name] = ActivationMap(
            clutter.astype(np.uint8), ImageMeta(name, target_w * 32, target_h * 32)
        )

    clutter_only = sorted(n for n in database if n not in planted_names)
    positives = {q: frozenset(planted_names) for q in queries}
    junk = {}
    for qi, qname in enumerate(sorted(queries)):
        junk[qname] = frozenset(clutter_only[2 * qi : 2 * qi + 2])
    return PlantedCorpus(database=database, queries=queries, positives=positives, junk=junk)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
