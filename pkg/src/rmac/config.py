"""Run configuration: plain key=value files, flag overrides, thread caps."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidInputError

THREADS_ENV = "RMAC_THREADS"


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings for a batch command."""

    activations: Path | None = None
    index_path: Path | None = None
    pca_path: Path | None = None
    gt_dir: Path | None = None
    kind: str = "mac"
    scales: int = 3
    alpha: float = 10.0
    step: int = 3
    aspect: float = 1.1
    shortlist: int = 1000
    qe_top: int = 5
    threads: int | None = None


def parse_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blanks ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise InvalidInputError(f"{path}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def resolve_threads(requested: int | None = None) -> int:
    """Worker count: the request (or CPU count), capped by RMAC_THREADS."""
    count = requested if requested and requested > 0 else (os.cpu_count() or 1)
    cap = os.environ.get(THREADS_ENV, "").strip()
    if cap:
        try:
            cap_value = int(cap)
        except ValueError as exc:
            raise InvalidInputError(f"{THREADS_ENV} must be an integer, got {cap!r}") from exc
        if cap_value >= 1:
            count = min(count, cap_value)
    return max(1, count)
