"""Pure-numpy reference implementation of the hot kernels.

Determinism contract shared with the compiled backend: channel reductions
accumulate sequentially in channel order, rectangle sums evaluate the four
integral terms in a fixed association, and the search comparator breaks
score ties by (smaller area, smaller y0, smaller x0). For quantized maps
the per-cell powers share a common binary factor, so every partial sum is
exactly representable and the two backends agree bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

NAME = "numpy"

_CHUNK = 1 << 18


def build_integral(powers: np.ndarray) -> np.ndarray:
    """(H, W, K) per-cell powers -> (H+1, W+1, K) exclusive prefix sums."""
    h, w, k = powers.shape
    table = np.zeros((h + 1, w + 1, k), dtype=np.float64)
    acc = np.cumsum(powers, axis=0, dtype=np.float64)
    acc = np.cumsum(acc, axis=1)
    table[1:, 1:, :] = acc
    return table


def region_sums(table: np.ndarray, regions: np.ndarray) -> np.ndarray:
    """Four-term rectangle sums for (n, 4) int regions [x0, y0, x1, y1]."""
    x0 = regions[:, 0]
    y0 = regions[:, 1]
    x1 = regions[:, 2] + 1
    y1 = regions[:, 3] + 1
    s = table[y1, x1] - table[y0, x1] - table[y1, x0] + table[y0, x0]
    np.maximum(s, 0.0, out=s)  # cancellation guard for raw-valued tensors
    return s


def apply_root(sums, root_values: np.ndarray, root_powers: np.ndarray, alpha: float):
    """Alpha-th root via the power grid: identity at alpha=1, nearest-power
    grid point inside [0, 128], direct exponentiation beyond the grid."""
    arr = np.asarray(sums, dtype=np.float64)
    shape = arr.shape
    flat_s = np.ascontiguousarray(arr).ravel()
    if alpha == 1.0:
        return flat_s.copy().reshape(shape)
    flat_out = np.zeros_like(flat_s)
    pos = flat_s > 0.0
    inside = pos & (flat_s <= root_powers[-1])
    beyond = pos & ~inside
    if np.any(inside):
        sv = flat_s[inside]
        idx = np.searchsorted(root_powers, sv, side="left")
        np.clip(idx, 1, len(root_powers) - 1, out=idx)
        lower = root_powers[idx - 1]
        upper = root_powers[idx]
        take_upper = (upper - sv) <= (sv - lower)  # ties toward the larger value
        flat_out[inside] = np.where(take_upper, root_values[idx], root_values[idx - 1])
    if np.any(beyond):
        # libm pow, element by element: numpy's vectorized pow rounds
        # differently and would break bit-parity with the compiled backend
        inv = 1.0 / alpha
        vals = flat_s[beyond]
        flat_out[beyond] = np.fromiter(
            (math.pow(v, inv) for v in vals), dtype=np.float64, count=len(vals)
        )
    return flat_out.reshape(shape)


def score_regions(
    table: np.ndarray,
    q: np.ndarray,
    regions: np.ndarray,
    root_values: np.ndarray,
    root_powers: np.ndarray,
    alpha: float,
) -> np.ndarray:
    """Cosine of the approximate regional vector against a unit query."""
    roots = apply_root(region_sums(table, regions), root_values, root_powers, alpha)
    n, k = roots.shape
    num = np.zeros(n)
    den = np.zeros(n)
    for i in range(k):  # sequential channel order: bit-compatible with _fast
        ri = roots[:, i]
        num += ri * q[i]
        den += ri * ri
    scores = np.zeros(n)
    nz = den > 0.0
    scores[nz] = num[nz] / np.sqrt(den[nz])
    return scores


def _better(score, area, y0, x0, y1, x1, best) -> bool:
    # total order: score desc, then smaller area, top-most, left-most,
    # then (y1, x1) so equal-area shape ties are unambiguous
    cand = (-score, area, y0, x0, y1, x1)
    incumbent = (-best[0], best[1], best[2], best[3], best[4], best[5])
    return cand < incumbent


def _fold_batch(regions, scores, best):
    """Fold one scored batch into the running (score, area, y0, x0, y1, x1, region)."""
    top = scores.max()
    cand = np.flatnonzero(scores == top)
    areas = (regions[cand, 2] - regions[cand, 0] + 1) * (regions[cand, 3] - regions[cand, 1] + 1)
    order = np.lexsort(
        (regions[cand, 2], regions[cand, 3], regions[cand, 0], regions[cand, 1], areas)
    )
    pick = cand[order[0]]
    area = int(areas[order[0]])
    x0, y0, x1, y1 = (int(v) for v in regions[pick])
    if best is None or _better(top, area, y0, x0, y1, x1, best):
        return (float(top), area, y0, x0, y1, x1, (x0, y0, x1, y1))
    return best


def _all_region_batches(w: int, h: int):
    ypairs = np.array([(y0, y1) for y0 in range(h) for y1 in range(y0, h)], dtype=np.int64)
    xpairs = [(x0, x1) for x0 in range(w) for x1 in range(x0, w)]
    step = max(1, _CHUNK // len(ypairs))
    ny = len(ypairs)
    for i in range(0, len(xpairs), step):
        xa = np.array(xpairs[i : i + step], dtype=np.int64)
        n = len(xa) * ny
        regions = np.empty((n, 4), dtype=np.int64)
        regions[:, 0] = np.repeat(xa[:, 0], ny)
        regions[:, 2] = np.repeat(xa[:, 1], ny)
        regions[:, 1] = np.tile(ypairs[:, 0], len(xa))
        regions[:, 3] = np.tile(ypairs[:, 1], len(xa))
        yield regions


def exhaustive_search(table, q, root_values, root_powers, alpha):
    """Global argmax over every rectangle. Returns (x0, y0, x1, y1, score, windows)."""
    h = table.shape[0] - 1
    w = table.shape[1] - 1
    best = None
    windows = 0
    for regions in _all_region_batches(w, h):
        scores = score_regions(table, q, regions, root_values, root_powers, alpha)
        windows += len(regions)
        best = _fold_batch(regions, scores, best)
    x0, y0, x1, y1 = best[6]
    return x0, y0, x1, y1, best[0], windows


def _grid_candidates(w: int, h: int, step: int, aspect_min: float, aspect_max: float):
    out = []
    for width in range(step, w + 1, step):
        for height in range(step, h + 1, step):
            aspect = width / height
            if aspect < aspect_min or aspect > aspect_max:
                continue
            for x0 in range(0, w - width + 1, step):
                for y0 in range(0, h - height + 1, step):
                    out.append((x0, y0, x0 + width - 1, y0 + height - 1))
    return np.array(out, dtype=np.int64).reshape(-1, 4)


def grid_search(table, q, root_values, root_powers, alpha, step, aspect_min, aspect_max):
    """Step-sampled window scan with an aspect-ratio band on width/height.

    Returns (x0, y0, x1, y1, score, windows, found). ``found`` is False when
    the band (or the step grid itself) leaves nothing to evaluate.
    """
    h = table.shape[0] - 1
    w = table.shape[1] - 1
    regions = _grid_candidates(w, h, step, aspect_min, aspect_max)
    if len(regions) == 0:
        return 0, 0, 0, 0, 0.0, 0, False
    best = None
    windows = 0
    for i in range(0, len(regions), _CHUNK):
        batch = regions[i : i + _CHUNK]
        scores = score_regions(table, q, batch, root_values, root_powers, alpha)
        windows += len(batch)
        best = _fold_batch(batch, scores, best)
    x0, y0, x1, y1 = best[6]
    return x0, y0, x1, y1, best[0], windows, True


def refine_search(table, q, root_values, root_powers, alpha, region, seed_score, max_delta, max_rounds):
    """Coordinate descent on (x0, y0, x1, y1), one coordinate at a time.

    Each coordinate tries offsets up to +/-max_delta and keeps the strict
    argmax (ties keep the incumbent, then the smaller offset, negative
    first). Stops after max_rounds full cycles or a cycle with no change.
    Returns (x0, y0, x1, y1, score, evaluations).
    """
    h = table.shape[0] - 1
    w = table.shape[1] - 1
    cur = [int(v) for v in region]
    cur_score = float(seed_score)
    deltas = [sign * mag for mag in range(1, max_delta + 1) for sign in (-1, 1)]
    evals = 0
    for _ in range(max_rounds):
        changed = False
        for coord in range(4):
            base = cur[coord]
            best_val = base
            for d in deltas:
                cand = cur.copy()
                cand[coord] = base + d
                if not (0 <= cand[0] <= cand[2] < w and 0 <= cand[1] <= cand[3] < h):
                    continue
                arr = np.array([cand], dtype=np.int64)
                s = float(score_regions(table, q, arr, root_values, root_powers, alpha)[0])
                evals += 1
                if s > cur_score:
                    cur_score = s
                    best_val = cand[coord]
            if best_val != base:
                cur[coord] = best_val
                changed = True
        if not changed:
            break
    return cur[0], cur[1], cur[2], cur[3], cur_score, evals


def score_one(table, q, region, root_values, root_powers, alpha) -> float:
    """Score a single (x0, y0, x1, y1) rectangle."""
    arr = np.asarray([region], dtype=np.int64)
    return float(score_regions(table, q, arr, root_values, root_powers, alpha)[0])
