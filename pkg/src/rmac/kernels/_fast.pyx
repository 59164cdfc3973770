# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementation of the hot kernels.

Mirrors _ref.py operation for operation: sequential channel reductions,
the same four-term association for rectangle sums, the same nearest-power
root selection, and the same total tie-break order, so the two backends
return identical results on quantized maps.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport pow, sqrt

cnp.import_array()

NAME = "cython"


def build_integral(cnp.ndarray[cnp.float64_t, ndim=3] powers):
    """(H, W, K) per-cell powers -> (H+1, W+1, K) exclusive prefix sums."""
    cdef Py_ssize_t h = powers.shape[0]
    cdef Py_ssize_t w = powers.shape[1]
    cdef Py_ssize_t k = powers.shape[2]
    out = np.zeros((h + 1, w + 1, k), dtype=np.float64)
    cdef double[:, :, ::1] table = out
    cdef double[:, :, :] p = powers
    cdef Py_ssize_t x, y, i
    # column pass then row pass: matches cumsum(axis=0) followed by cumsum(axis=1)
    for y in range(h):
        for x in range(w):
            for i in range(k):
                table[y + 1, x + 1, i] = table[y, x + 1, i] + p[y, x, i]
    for y in range(1, h + 1):
        for x in range(2, w + 1):
            for i in range(k):
                table[y, x, i] = table[y, x, i] + table[y, x - 1, i]
    return out


cdef inline double _rect_sum(double[:, :, :] table, Py_ssize_t x0, Py_ssize_t y0,
                             Py_ssize_t x1, Py_ssize_t y1, Py_ssize_t i) noexcept nogil:
    cdef double s = (
        table[y1 + 1, x1 + 1, i]
        - table[y0, x1 + 1, i]
        - table[y1 + 1, x0, i]
        + table[y0, x0, i]
    )
    if s < 0.0:
        s = 0.0
    return s


cdef inline double _root_one(double s, double[::1] rv, double[::1] rp,
                             double inv_alpha) noexcept nogil:
    cdef Py_ssize_t n = rp.shape[0]
    cdef Py_ssize_t lo, hi, mid
    cdef double lower, upper
    if s <= 0.0:
        return 0.0
    if s > rp[n - 1]:
        return pow(s, inv_alpha)
    # first index with rp[idx] >= s (numpy searchsorted side="left")
    lo = 0
    hi = n
    while lo < hi:
        mid = (lo + hi) >> 1
        if rp[mid] < s:
            lo = mid + 1
        else:
            hi = mid
    if lo < 1:
        lo = 1
    lower = rp[lo - 1]
    upper = rp[lo]
    if (upper - s) <= (s - lower):  # ties toward the larger value
        return rv[lo]
    return rv[lo - 1]


def region_sums(double[:, :, :] table, cnp.ndarray[cnp.int64_t, ndim=2] regions):
    """Four-term rectangle sums for (n, 4) int regions [x0, y0, x1, y1]."""
    cdef Py_ssize_t n = regions.shape[0]
    cdef Py_ssize_t k = table.shape[2]
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef long long[:, :] r = regions
    cdef Py_ssize_t j, i
    for j in range(n):
        for i in range(k):
            o[j, i] = _rect_sum(table, r[j, 0], r[j, 1], r[j, 2], r[j, 3], i)
    return out


def apply_root(sums, double[::1] root_values, double[::1] root_powers, double alpha):
    """Alpha-th root via the power grid; identity at alpha=1."""
    arr = np.asarray(sums, dtype=np.float64)
    shape = arr.shape
    flat = np.ascontiguousarray(arr).ravel()
    if alpha == 1.0:
        return flat.copy().reshape(shape)
    out = np.zeros_like(flat)
    cdef double[::1] flat_in = flat
    cdef double[::1] flat_out = out
    cdef double inv_alpha = 1.0 / alpha
    cdef Py_ssize_t j
    for j in range(flat_in.shape[0]):
        flat_out[j] = _root_one(flat_in[j], root_values, root_powers, inv_alpha)
    return out.reshape(shape)


cdef double _score_window(double[:, :, :] table, double[::1] q,
                          Py_ssize_t x0, Py_ssize_t y0, Py_ssize_t x1, Py_ssize_t y1,
                          double[::1] rv, double[::1] rp,
                          double alpha, double inv_alpha) noexcept nogil:
    cdef Py_ssize_t k = table.shape[2]
    cdef double num = 0.0
    cdef double den = 0.0
    cdef double s, root
    cdef Py_ssize_t i
    for i in range(k):
        s = _rect_sum(table, x0, y0, x1, y1, i)
        if alpha == 1.0:
            root = s
        else:
            root = _root_one(s, rv, rp, inv_alpha)
        num += root * q[i]
        den += root * root
    if den > 0.0:
        return num / sqrt(den)
    return 0.0


def score_regions(double[:, :, :] table, double[::1] q,
                  cnp.ndarray[cnp.int64_t, ndim=2] regions,
                  double[::1] root_values, double[::1] root_powers, double alpha):
    """Cosine of the approximate regional vector against a unit query."""
    cdef Py_ssize_t n = regions.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef long long[:, :] r = regions
    cdef double inv_alpha = 1.0 / alpha
    cdef Py_ssize_t j
    for j in range(n):
        o[j] = _score_window(table, q, r[j, 0], r[j, 1], r[j, 2], r[j, 3],
                             root_values, root_powers, alpha, inv_alpha)
    return out


def score_one(double[:, :, :] table, double[::1] q, region,
              double[::1] root_values, double[::1] root_powers, double alpha):
    cdef Py_ssize_t x0 = region[0]
    cdef Py_ssize_t y0 = region[1]
    cdef Py_ssize_t x1 = region[2]
    cdef Py_ssize_t y1 = region[3]
    return _score_window(table, q, x0, y0, x1, y1, root_values, root_powers,
                         alpha, 1.0 / alpha)


cdef struct Best:
    double score
    Py_ssize_t area
    Py_ssize_t x0
    Py_ssize_t y0
    Py_ssize_t x1
    Py_ssize_t y1
    bint valid


cdef inline void _consider(Best* best, double score, Py_ssize_t x0, Py_ssize_t y0,
                           Py_ssize_t x1, Py_ssize_t y1) noexcept nogil:
    # total order: score desc, area asc, y0, x0, y1, x1
    cdef Py_ssize_t area = (x1 - x0 + 1) * (y1 - y0 + 1)
    cdef bint take = 0
    if not best.valid:
        take = 1
    elif score != best.score:
        take = score > best.score
    elif area != best.area:
        take = area < best.area
    elif y0 != best.y0:
        take = y0 < best.y0
    elif x0 != best.x0:
        take = x0 < best.x0
    elif y1 != best.y1:
        take = y1 < best.y1
    else:
        take = x1 < best.x1
    if take:
        best.score = score
        best.area = area
        best.x0 = x0
        best.y0 = y0
        best.x1 = x1
        best.y1 = y1
        best.valid = 1


def exhaustive_search(double[:, :, :] table, double[::1] q,
                      double[::1] root_values, double[::1] root_powers, double alpha):
    """Global argmax over every rectangle. Returns (x0, y0, x1, y1, score, windows)."""
    cdef Py_ssize_t h = table.shape[0] - 1
    cdef Py_ssize_t w = table.shape[1] - 1
    cdef double inv_alpha = 1.0 / alpha
    cdef Best best
    best.valid = 0
    cdef Py_ssize_t windows = 0
    cdef Py_ssize_t x0, y0, x1, y1
    cdef double s
    with nogil:
        for x0 in range(w):
            for x1 in range(x0, w):
                for y0 in range(h):
                    for y1 in range(y0, h):
                        s = _score_window(table, q, x0, y0, x1, y1,
                                          root_values, root_powers, alpha, inv_alpha)
                        _consider(&best, s, x0, y0, x1, y1)
                        windows += 1
    return best.x0, best.y0, best.x1, best.y1, best.score, windows


def grid_search(double[:, :, :] table, double[::1] q,
                double[::1] root_values, double[::1] root_powers, double alpha,
                Py_ssize_t step, double aspect_min, double aspect_max):
    """Step-sampled scan with an aspect band. Returns (..., score, windows, found)."""
    cdef Py_ssize_t h = table.shape[0] - 1
    cdef Py_ssize_t w = table.shape[1] - 1
    cdef double inv_alpha = 1.0 / alpha
    cdef Best best
    best.valid = 0
    cdef Py_ssize_t windows = 0
    cdef Py_ssize_t width, height, x0, y0
    cdef double aspect, s
    with nogil:
        width = step
        while width <= w:
            height = step
            while height <= h:
                aspect = (<double> width) / (<double> height)
                if aspect_min <= aspect <= aspect_max:
                    x0 = 0
                    while x0 <= w - width:
                        y0 = 0
                        while y0 <= h - height:
                            s = _score_window(table, q, x0, y0, x0 + width - 1,
                                              y0 + height - 1, root_values, root_powers,
                                              alpha, inv_alpha)
                            _consider(&best, s, x0, y0, x0 + width - 1, y0 + height - 1)
                            windows += 1
                            y0 += step
                        x0 += step
                height += step
            width += step
    if not best.valid:
        return 0, 0, 0, 0, 0.0, 0, False
    return best.x0, best.y0, best.x1, best.y1, best.score, windows, True


def refine_search(double[:, :, :] table, double[::1] q,
                  double[::1] root_values, double[::1] root_powers, double alpha,
                  region, double seed_score, Py_ssize_t max_delta, Py_ssize_t max_rounds):
    """Coordinate descent identical to the reference backend.

    Offsets are tried in order (-1, 1, -2, 2, ...); only a strictly better
    score moves a coordinate, so ties keep the incumbent, then the smaller
    offset, negative first. Returns (x0, y0, x1, y1, score, evaluations).
    """
    cdef Py_ssize_t h = table.shape[0] - 1
    cdef Py_ssize_t w = table.shape[1] - 1
    cdef double inv_alpha = 1.0 / alpha
    cdef Py_ssize_t cur[4]
    cur[0] = region[0]
    cur[1] = region[1]
    cur[2] = region[2]
    cur[3] = region[3]
    cdef double cur_score = seed_score
    cdef Py_ssize_t evals = 0
    cdef Py_ssize_t round_i, coord, mag, sign, base, best_val, cand_val
    cdef Py_ssize_t cand[4]
    cdef bint changed
    cdef double s
    with nogil:
        for round_i in range(max_rounds):
            changed = 0
            for coord in range(4):
                base = cur[coord]
                best_val = base
                for mag in range(1, max_delta + 1):
                    for sign in range(2):
                        cand_val = base - mag if sign == 0 else base + mag
                        cand[0] = cur[0]
                        cand[1] = cur[1]
                        cand[2] = cur[2]
                        cand[3] = cur[3]
                        cand[coord] = cand_val
                        if cand[0] < 0 or cand[1] < 0:
                            continue
                        if cand[0] > cand[2] or cand[1] > cand[3]:
                            continue
                        if cand[2] >= w or cand[3] >= h:
                            continue
                        s = _score_window(table, q, cand[0], cand[1], cand[2], cand[3],
                                          root_values, root_powers, alpha, inv_alpha)
                        evals += 1
                        if s > cur_score:
                            cur_score = s
                            best_val = cand_val
                if best_val != base:
                    cur[coord] = best_val
                    changed = 1
            if not changed:
                break
    return cur[0], cur[1], cur[2], cur[3], cur_score, evals
