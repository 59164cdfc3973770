"""Kernel backend selection.

The hot loops (integral construction, rectangle sums, window scoring and
search) exist twice: a Cython extension (``_fast``) and a pure-numpy
reference (``_ref``). The compiled backend is preferred when importable;
set ``RMAC_BACKEND=numpy`` or ``RMAC_BACKEND=cython`` to force one.

Both follow the same determinism contract (sequential channel reductions,
fixed four-term association, identical tie-breaks), so swapping backends
never changes results on quantized maps and stays within float rounding
on raw-valued tensors.
"""

from __future__ import annotations

import os

from . import _ref

_names = (
    "build_integral",
    "region_sums",
    "apply_root",
    "score_regions",
    "score_one",
    "exhaustive_search",
    "grid_search",
    "refine_search",
)


def _load_fast():
    from . import _fast

    return _fast


_requested = os.environ.get("RMAC_BACKEND", "auto").strip().lower()
if _requested in ("", "auto"):
    try:
        _impl = _load_fast()
    except ImportError:
        _impl = _ref
elif _requested in ("cython", "fast", "compiled"):
    _impl = _load_fast()
elif _requested in ("numpy", "python", "ref"):
    _impl = _ref
else:
    raise RuntimeError(f"unknown RMAC_BACKEND value {_requested!r}")

BACKEND = _impl.NAME


def get_backend(name: str):
    """Fetch a backend module by name ("numpy" or "cython"), for benchmarks."""
    if name == "numpy":
        return _ref
    if name == "cython":
        return _load_fast()
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> list[str]:
    names = ["numpy"]
    try:
        _load_fast()
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


build_integral = _impl.build_integral
region_sums = _impl.region_sums
apply_root = _impl.apply_root
score_regions = _impl.score_regions
score_one = _impl.score_one
exhaustive_search = _impl.exhaustive_search
grid_search = _impl.grid_search
refine_search = _impl.refine_search
