"""Database filtering, localization-based re-ranking, and query expansion.

The filtering stage ranks every indexed image by the dot product of unit
global descriptors. Re-ranking re-scores a short-list: for each candidate
the best-matching window is found in its activation map, the window is
described with the same descriptor kind as the index (pooled through the
integral tables), and the short-list is reordered by that similarity.
Query expansion then re-queries with the normalized mean of the query and
its top-ranked descriptors.
"""

from __future__ import annotations

import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actmap import ActivationMap, ImageMeta, load_actmap
from .config import resolve_threads
from .descriptors import (
    PcaModel,
    l2_normalize,
    rmac_region,
    whitened_mac_region,
)
from .errors import DimensionMismatchError, FormatError, InvalidInputError, ZeroVectorError
from .grid import RegionGridParams
from .localize import (
    DetectionResult,
    SearchParams,
    detect_aml,
    detect_exhaustive,
    iou,
    pixel_box_to_feature,
)
from .pooling import PoolingParams, Region, build_integral, mac

DESC_MAGIC = b"DSC1"

KIND_MAC = "mac"
KIND_RMAC = "rmac"


@dataclass(frozen=True)
class RerankParams:
    """Short-list size, expansion depth, and the window-search settings."""

    shortlist: int = 1000
    qe_top: int = 5
    search: SearchParams = SearchParams()
    qe_exclude_self: bool = True

    def __post_init__(self):
        if self.shortlist < 1:
            raise InvalidInputError("shortlist must be >= 1")
        if not 0 <= self.qe_top <= self.shortlist:
            raise InvalidInputError("qe_top must be in 0..shortlist")


@dataclass(frozen=True)
class IndexEntry:
    image_id: str
    vector: np.ndarray
    actmap_path: Path | None = None


class Index:
    """Immutable collection of (id, unit descriptor, activation path)."""

    def __init__(
        self,
        entries: list[IndexEntry],
        kind: str = KIND_MAC,
        pca: PcaModel | None = None,
        grid_params: RegionGridParams = RegionGridParams(),
    ):
        if kind not in (KIND_MAC, KIND_RMAC):
            raise InvalidInputError(f"unknown descriptor kind {kind!r}")
        ids = [e.image_id for e in entries]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("duplicate image ids in index")
        dims = {len(e.vector) for e in entries}
        if len(dims) > 1:
            raise DimensionMismatchError(f"mixed descriptor dims {sorted(dims)}")
        self.entries = list(entries)
        self.kind = kind
        self.pca = pca
        self.grid_params = grid_params
        self._by_id = {e.image_id: e for e in entries}
        self._matrix = (
            np.stack([np.asarray(e.vector, dtype=np.float64) for e in entries])
            if entries
            else np.zeros((0, 0))
        )

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]

    def entry(self, image_id: str) -> IndexEntry:
        return self._by_id[image_id]

    def save_descriptors(self, path) -> None:
        with Path(path).open("wb") as fh:
            fh.write(DESC_MAGIC)
            fh.write(struct.pack("<HI", self.dim, len(self.entries)))
            for e in self.entries:
                ident = e.image_id.encode("utf-8")
                fh.write(struct.pack("<H", len(ident)))
                fh.write(ident)
                fh.write(np.asarray(e.vector, dtype="<f4").tobytes())

    @classmethod
    def load_descriptors(
        cls,
        path,
        actmap_dir=None,
        kind: str = KIND_MAC,
        pca: PcaModel | None = None,
        grid_params: RegionGridParams = RegionGridParams(),
    ) -> "Index":
        data = Path(path).read_bytes()
        if len(data) < 10 or data[:4] != DESC_MAGIC:
            raise FormatError(f"not a descriptor index file: {path}", 0)
        k, count = struct.unpack_from("<HI", data, 4)
        offset = 10
        entries = []
        root = Path(actmap_dir) if actmap_dir is not None else None
        for _ in range(count):
            if len(data) < offset + 2:
                raise FormatError("truncated entry header", offset)
            (idlen,) = struct.unpack_from("<H", data, offset)
            offset += 2
            end = offset + idlen + 4 * k
            if len(data) < end:
                raise FormatError("truncated entry payload", offset)
            ident = data[offset : offset + idlen].decode("utf-8")
            vec = np.frombuffer(data, dtype="<f4", count=k, offset=offset + idlen)
            amap_path = root / f"{ident}.actmap" if root is not None else None
            entries.append(IndexEntry(ident, vec.astype(np.float64), amap_path))
            offset = end
        if offset != len(data):
            raise FormatError(f"{len(data) - offset} trailing bytes", offset)
        return cls(entries, kind=kind, pca=pca, grid_params=grid_params)


@dataclass
class RankedList:
    """Ordered (image_id, score) pairs with optional per-item detections."""

    items: list[tuple[str, float]]
    provenance: str = "filtered"
    detections: dict[str, DetectionResult] = field(default_factory=dict)
    flags: dict[str, str] = field(default_factory=dict)

    def ids(self) -> list[str]:
        return [i for i, _ in self.items]


def _sorted_block(pairs: list[tuple[str, float]]) -> list[tuple[str, float]]:
    return sorted(pairs, key=lambda p: (-p[1], p[0]))


def filter_rank(index: Index, query_desc: np.ndarray) -> RankedList:
    """Rank the whole database by dot product with a unit query descriptor."""
    q = np.asarray(query_desc, dtype=np.float64)
    if q.ndim != 1 or len(q) != index.dim:
        raise DimensionMismatchError(f"query dim {q.shape} != index dim {index.dim}")
    m = index._matrix
    scores = np.zeros(len(index))
    for i in range(index.dim):  # fixed reduction order keeps runs bit-identical
        scores += m[:, i] * q[i]
    pairs = [(e.image_id, float(s)) for e, s in zip(index.entries, scores)]
    return RankedList(items=_sorted_block(pairs), provenance="filtered")


def _describe_window(index: Index, stack, region: Region) -> np.ndarray:
    if index.pca is None:
        raise InvalidInputError("re-ranking needs the index's whitening model")
    if index.kind == KIND_RMAC:
        return rmac_region(stack, region, index.pca, index.grid_params)
    return whitened_mac_region(stack, region, index.pca)


def rerank_aml(
    index: Index,
    query_map: ActivationMap,
    query_desc: np.ndarray,
    shortlist: RankedList,
    params: RerankParams = RerankParams(),
    threads: int | None = None,
) -> RankedList:
    """Re-score the top of a filtered ranking by localized similarity.

    ``query_map`` must hold the cropped query region's activations. Each
    short-listed image gets the best-matching window for the query's unit
    MAC; the window is then described like the index (whitened max-pooled
    vector, or the multi-region signature of the window) and the block is
    reordered by the new scores. Items whose activation file is missing
    keep their filtered score and are flagged.
    """
    q = l2_normalize(mac(query_map))
    aspect = query_map.width / query_map.height
    n = min(params.shortlist, len(shortlist.items))
    head = shortlist.items[:n]
    tail = shortlist.items[n:]
    pool_params = PoolingParams(params.search.alpha)

    def rescore(item: tuple[str, float]):
        image_id, old_score = item
        entry = index.entry(image_id)
        if entry.actmap_path is None or not Path(entry.actmap_path).exists():
            return image_id, old_score, None, "missing-actmap"
        amap = load_actmap(entry.actmap_path)
        stack = build_integral(amap, pool_params)
        detection = detect_aml(stack, q, aspect, params.search)
        try:
            window_desc = _describe_window(index, stack, detection.region)
            score = float(np.dot(query_desc, window_desc))
        except ZeroVectorError:
            score = 0.0
        return image_id, score, detection, None

    workers = resolve_threads(threads)
    if workers > 1 and len(head) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(rescore, head))
    else:
        results = [rescore(item) for item in head]

    detections = dict(shortlist.detections)
    flags = dict(shortlist.flags)
    block = []
    for image_id, score, detection, flag in results:
        block.append((image_id, score))
        if detection is not None:
            detections[image_id] = detection
        if flag:
            flags[image_id] = flag
    return RankedList(
        items=_sorted_block(block) + tail,
        provenance="reranked",
        detections=detections,
        flags=flags,
    )


def query_expand(
    index: Index,
    query_desc: np.ndarray,
    reranked: RankedList,
    params: RerankParams = RerankParams(),
    query_id: str | None = None,
) -> RankedList:
    """Re-query with the normalized mean of the query and its top results.

    The expansion pool is the first ``qe_top`` ranked ids (skipping the
    query's own image when ``qe_exclude_self``); only the top short-list
    block is re-scored, the tail keeps its order.
    """
    if not reranked.items:
        raise InvalidInputError("ranked list is empty")
    q = np.asarray(query_desc, dtype=np.float64)
    pool_ids = []
    for image_id, _ in reranked.items:
        if params.qe_exclude_self and query_id is not None and image_id == query_id:
            continue
        pool_ids.append(image_id)
        if len(pool_ids) == params.qe_top:
            break
    stacked = [q] + [np.asarray(index.entry(i).vector, dtype=np.float64) for i in pool_ids]
    expanded = l2_normalize(np.mean(stacked, axis=0))
    n = min(params.shortlist, len(reranked.items))
    block = [
        (image_id, float(np.dot(expanded, index.entry(image_id).vector)))
        for image_id, _ in reranked.items[:n]
    ]
    return RankedList(
        items=_sorted_block(block) + reranked.items[n:],
        provenance="qe",
        detections=dict(reranked.detections),
        flags=dict(reranked.flags),
    )


# ---------------------------------------------------------------------------
# Evaluation protocols


@dataclass(frozen=True)
class QueryGroundTruth:
    positives: frozenset[str]
    junk: frozenset[str] = frozenset()
    query_image_id: str | None = None
    box: tuple[int, int, int, int] | None = None


def average_precision(ranked_ids, positives, junk=()) -> float:
    """Mean precision at each positive's rank, junk removed beforehand.

    Positives missing from the ranking contribute zero. Raises on an empty
    positive set.
    """
    positives = set(positives)
    junk = set(junk)
    if not positives:
        raise InvalidInputError("query has no positives")
    hits = 0
    rank = 0
    total = 0.0
    for image_id in ranked_ids:
        if image_id in junk:
            continue
        rank += 1
        if image_id in positives:
            hits += 1
            total += hits / rank
    return total / len(positives)


@dataclass(frozen=True)
class MapReport:
    mean: float
    per_query: dict[str, float]


def evaluate_map(runs: dict[str, RankedList], ground_truth: dict[str, QueryGroundTruth]) -> MapReport:
    """Mean average precision over queries; zero-positive queries are
    excluded with a warning."""
    per_query = {}
    for query_id, ranked in runs.items():
        gt = ground_truth[query_id]
        if not gt.positives:
            warnings.warn(f"query {query_id!r} has no positives; skipped", RuntimeWarning)
            continue
        per_query[query_id] = average_precision(ranked.ids(), gt.positives, gt.junk)
    if not per_query:
        raise InvalidInputError("no evaluable queries")
    return MapReport(mean=sum(per_query.values()) / len(per_query), per_query=per_query)


@dataclass(frozen=True)
class GroupMember:
    image_id: str
    actmap_path: Path
    box: tuple[int, int, int, int]  # inclusive pixel rectangle


@dataclass(frozen=True)
class IouReport:
    mean_iou: dict[str, float]
    pairs: int
    # windows evaluated relative to the exhaustive scan, per variant
    windows_fraction: dict[str, float] = field(default_factory=dict)


def evaluate_iou_protocol(
    groups: dict[str, list[GroupMember]],
    search: SearchParams = SearchParams(),
    variants: tuple[str, ...] = ("exhaustive", "aml"),
) -> IouReport:
    """Cross-match every ordered pair inside each group.

    One member acts as the query (its activation map cropped to its ground
    truth box, projected to feature cells); detection runs on the other
    member's full map and the detected pixel box is compared to that
    member's annotation. Groups with fewer than two members are skipped.
    """
    totals = {v: 0.0 for v in variants}
    window_counts = {v: 0 for v in variants}
    exhaustive_windows = 0
    pairs = 0
    for members in groups.values():
        if len(members) < 2:
            continue
        maps = {m.image_id: load_actmap(m.actmap_path) for m in members}
        for qm in members:
            qmap_full = maps[qm.image_id]
            crop = pixel_box_to_feature(qm.box, qmap_full.meta, qmap_full.width, qmap_full.height)
            sub = qmap_full.levels[crop.y0 : crop.y1 + 1, crop.x0 : crop.x1 + 1, :]
            if not sub.any():
                continue
            qmeta = ImageMeta(
                f"{qm.image_id}#crop",
                max(qm.box[2] - qm.box[0] + 1, sub.shape[1]),
                max(qm.box[3] - qm.box[1] + 1, sub.shape[0]),
            )
            qmap = ActivationMap(sub, qmeta, qmap_full.params)
            q = l2_normalize(mac(qmap))
            aspect = qmap.width / qmap.height
            for tm in members:
                if tm.image_id == qm.image_id:
                    continue
                tmap = maps[tm.image_id]
                stack = build_integral(tmap, PoolingParams(search.alpha))
                truth = Region(*tm.box)
                exhaustive_windows += (
                    tmap.width * (tmap.width + 1) // 2 * (tmap.height * (tmap.height + 1) // 2)
                )
                for variant in variants:
                    if variant == "exhaustive":
                        det = detect_exhaustive(stack, q)
                    elif variant == "aml":
                        det = detect_aml(stack, q, aspect, search)
                    else:
                        raise InvalidInputError(f"unknown variant {variant!r}")
                    totals[variant] += iou(Region(*det.image_box), truth)
                    window_counts[variant] += det.windows_evaluated
                pairs += 1
    if pairs == 0:
        raise InvalidInputError("no evaluable pairs (all groups smaller than 2)")
    return IouReport(
        mean_iou={v: totals[v] / pairs for v in variants},
        pairs=pairs,
        windows_fraction={v: window_counts[v] / exhaustive_windows for v in variants},
    )


# ---------------------------------------------------------------------------
# External text formats


def save_ranked_list(ranked: RankedList, path) -> None:
    """One line per item: rank, id, score, and the detected pixel box when
    present, tab-separated."""
    lines = []
    for rank, (image_id, score) in enumerate(ranked.items, start=1):
        line = f"{rank}\t{image_id}\t{score:.8f}"
        det = ranked.detections.get(image_id)
        if det is not None and det.image_box is not None:
            line += "\t%d,%d,%d,%d" % det.image_box
        lines.append(line)
    Path(path).write_text("\n".join(lines) + "\n")


def _read_id_list(path: Path) -> frozenset[str]:
    if not path.exists():
        return frozenset()
    return frozenset(line.strip() for line in path.read_text().splitlines() if line.strip())


def load_ground_truth(gt_dir) -> dict[str, QueryGroundTruth]:
    """Oxford-style ground truth directory.

    For each query name Q there is ``Q_query.txt`` ("image_id x0 y0 x1 y1"
    in pixels) plus optional ``Q_good.txt``, ``Q_ok.txt`` (both positive)
    and ``Q_junk.txt`` files with one image id per line.
    """
    gt_dir = Path(gt_dir)
    queries = sorted(gt_dir.glob("*_query.txt"))
    if not queries:
        raise InvalidInputError(f"no *_query.txt files under {gt_dir}")
    out = {}
    for qfile in queries:
        name = qfile.name[: -len("_query.txt")]
        fields = qfile.read_text().split()
        if len(fields) != 5:
            raise FormatError(f"{qfile}: expected 'image_id x0 y0 x1 y1'")
        image_id = fields[0]
        box = tuple(int(round(float(v))) for v in fields[1:])
        out[name] = QueryGroundTruth(
            positives=_read_id_list(gt_dir / f"{name}_good.txt")
            | _read_id_list(gt_dir / f"{name}_ok.txt"),
            junk=_read_id_list(gt_dir / f"{name}_junk.txt"),
            query_image_id=image_id,
            box=box,  # type: ignore[arg-type]
        )
    return out
