"""Command-line surface tying the pipeline together.

Subcommands: ``actmap validate|import``, ``pca learn``, ``index build``,
``query``, ``localize``, ``regions dump``, ``eval map|iou``, ``bench``.
A plain key=value file passed as ``--config`` supplies defaults; explicit
flags win. RMAC_THREADS caps worker counts without changing any output.
"""

from __future__ import annotations

import functools
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import kernels
from .actmap import ImageMeta, inspect, load_actmap, quantize, save_actmap
from .bench import run_benchmark
from .config import parse_config_file, resolve_threads
from .descriptors import PcaModel, l2_normalize, learn_pca, regional_vectors, rmac, whitened_mac
from .errors import RmacError
from .grid import RegionGridParams, region_grid
from .localize import SearchParams, detect_aml, detect_exhaustive
from .pooling import PoolingParams, build_integral, mac
from .retrieval import (
    GroupMember,
    Index,
    IndexEntry,
    RerankParams,
    evaluate_iou_protocol,
    evaluate_map,
    filter_rank,
    load_ground_truth,
    query_expand,
    rerank_aml,
    save_ranked_list,
)

_STAGES = ("filter", "aml", "qe")


def _fail_on_rmac_error(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except RmacError as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="key = value defaults file; flags override.")
@click.pass_context
def main(ctx, config_path):
    """Particular-object retrieval over quantized activation maps."""
    if config_path:
        defaults = parse_config_file(config_path)
        # apply the flat key set to every (sub)command; unknown keys are ignored
        nested = dict(defaults)
        for group_name in ("actmap", "pca", "index", "regions", "eval"):
            nested[group_name] = {
                sub: dict(defaults) for sub in ("validate", "import", "learn", "build", "dump", "map", "iou")
            }
        ctx.default_map = nested


# ---------------------------------------------------------------------------
# actmap


@main.group()
def actmap():
    """Activation-map file utilities."""


@actmap.command("validate")
@click.argument("files", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@_fail_on_rmac_error
def actmap_validate(files):
    """Check files against the binary layout and print a summary."""
    for path in files:
        stats = inspect(Path(path).read_bytes())
        click.echo(
            f"{path}: W={stats.width} H={stats.height} K={stats.channels} "
            f"image={stats.image_width}x{stats.image_height} id={stats.image_id!r} "
            f"nnz={stats.nnz} sparsity={stats.sparsity * 100:.2f}% "
            f"escape_bytes={stats.escape_bytes} file_bytes={stats.total_bytes}"
        )


@actmap.command("import")
@click.argument("files", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--image-size", default=None, help="WxH pixel size for raw .npy inputs (default: feature dims).")
@_fail_on_rmac_error
def actmap_import(files, out_dir, image_size):
    """Validate .actmap files or quantize raw .npy (H, W, K) tensors into the store."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pixel_dims = None
    if image_size:
        try:
            w_px, h_px = (int(v) for v in image_size.lower().split("x"))
        except ValueError:
            raise click.ClickException(f"--image-size must look like 1024x768, got {image_size!r}")
        pixel_dims = (w_px, h_px)
    for path in files:
        path = Path(path)
        if path.suffix == ".npy":
            raw = np.load(path)
            h, w = raw.shape[0], raw.shape[1]
            meta = ImageMeta(path.stem, *(pixel_dims or (w, h)))
            amap = quantize(raw, meta)
            target = out / f"{path.stem}.actmap"
            save_actmap(amap, target)
            click.echo(f"{path} -> {target}: quantized {w}x{h}x{amap.channels}, "
                       f"sparsity {amap.sparsity * 100:.2f}%")
        else:
            data = path.read_bytes()
            stats = inspect(data)
            target = out / path.name
            if target.resolve() != path.resolve():
                target.write_bytes(data)
            click.echo(f"{path} -> {target}: valid, {stats.width}x{stats.height}x{stats.channels}, "
                       f"sparsity {stats.sparsity * 100:.2f}%")


# ---------------------------------------------------------------------------
# pca / index


def _collect_actmaps(activations) -> list[Path]:
    paths = sorted(Path(activations).glob("*.actmap"))
    if not paths:
        raise click.ClickException(f"no .actmap files under {activations}")
    return paths


def _descriptor(amap, kind, model, grid_params):
    if kind == "rmac":
        return rmac(amap, model, grid_params)
    return whitened_mac(amap, model)


@main.group()
def pca():
    """Whitening model management."""


@pca.command("learn")
@click.option("--activations", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--kind", type=click.Choice(["mac", "rmac"]), default="mac", show_default=True)
@click.option("--scales", type=int, default=3, show_default=True)
@click.option("--dim", type=int, default=None,
              help="keep only this many leading components (storage stays K x K).")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@_fail_on_rmac_error
def pca_learn(activations, kind, scales, dim, out_path):
    """Learn the whitening transform from a held-out corpus.

    MAC indices train on unit global vectors; multi-region indices train on
    the unit regional vectors pooled from every map.
    """
    grid_params = RegionGridParams(num_scales=scales)
    rows = []
    for path in _collect_actmaps(activations):
        amap = load_actmap(path)
        if kind == "rmac":
            vecs = regional_vectors(amap, grid_params)
            if len(vecs):
                rows.append(vecs)
        else:
            vec = mac(amap)
            if vec.any():
                rows.append(l2_normalize(vec)[None, :])
    if not rows:
        raise click.ClickException("corpus produced no non-zero descriptors")
    samples = np.vstack(rows)
    model = learn_pca(samples, source_tag=str(activations), dim=dim)
    model.save(out_path)
    click.echo(f"learned whitening on {len(samples)} vectors (K={model.dim}) -> {out_path}")


@main.group()
def index():
    """Descriptor index management."""


@index.command("build")
@click.option("--activations", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--pca", "pca_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", type=click.Choice(["mac", "rmac"]), default="mac", show_default=True)
@click.option("--scales", type=int, default=3, show_default=True)
@click.option("--threads", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@_fail_on_rmac_error
def index_build(activations, pca_path, kind, scales, threads, out_path):
    """Compute one unit descriptor per database map and write the index."""
    model = PcaModel.load(pca_path)
    grid_params = RegionGridParams(num_scales=scales)
    paths = _collect_actmaps(activations)

    def job(path: Path) -> IndexEntry:
        amap = load_actmap(path)
        vec = _descriptor(amap, kind, model, grid_params)
        return IndexEntry(path.stem, vec.astype(np.float32), path)

    workers = resolve_threads(threads)
    if workers > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(job, paths))
    else:
        entries = [job(p) for p in paths]
    idx = Index(entries, kind=kind, pca=model, grid_params=grid_params)
    idx.save_descriptors(out_path)
    click.echo(f"indexed {len(entries)} maps (kind={kind}, K={idx.dim}) -> {out_path}")


# ---------------------------------------------------------------------------
# query / localize / regions


def _parse_box(text):
    try:
        x0, y0, x1, y1 = (int(v) for v in text.split(","))
    except ValueError:
        raise click.ClickException(f"box must be x0,y0,x1,y1 integers, got {text!r}")
    return x0, y0, x1, y1


@main.command()
@click.option("--index", "index_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--pca", "pca_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--activations", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--kind", type=click.Choice(["mac", "rmac"]), default="mac", show_default=True)
@click.option("--scales", type=int, default=3, show_default=True)
@click.option("--query", "query_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--crop", default=None, help="x0,y0,x1,y1 crop applied in feature-map cells.")
@click.option("--stages", default="filter", show_default=True,
              help="comma list from filter,aml,qe (in pipeline order).")
@click.option("-N", "--shortlist", type=int, default=1000, show_default=True)
@click.option("--qe-top", type=int, default=5, show_default=True)
@click.option("--qe-exclude-self/--qe-include-self", default=True, show_default=True)
@click.option("--alpha", type=float, default=10.0, show_default=True)
@click.option("--step", type=int, default=3, show_default=True)
@click.option("--aspect", type=float, default=1.1, show_default=True)
@click.option("--threads", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@_fail_on_rmac_error
def query(index_path, pca_path, activations, kind, scales, query_path, crop, stages,
          shortlist, qe_top, qe_exclude_self, alpha, step, aspect, threads, out_path):
    """Run filter [+ AML re-ranking] [+ query expansion] and write a ranked list."""
    stage_list = [s.strip() for s in stages.split(",") if s.strip()]
    for s in stage_list:
        if s not in _STAGES:
            raise click.ClickException(f"unknown stage {s!r}; choose from {', '.join(_STAGES)}")
    if stage_list != [s for s in _STAGES if s in stage_list]:
        raise click.ClickException("stages must appear in pipeline order: filter,aml,qe")
    model = PcaModel.load(pca_path)
    grid_params = RegionGridParams(num_scales=scales)
    idx = Index.load_descriptors(index_path, actmap_dir=activations, kind=kind,
                                 pca=model, grid_params=grid_params)
    qmap = load_actmap(query_path)
    if crop:
        click.echo("note: cropping in feature-map cells; extraction-time image "
                   "cropping is the faithful protocol", err=True)
        from .pooling import Region

        box = Region(*_parse_box(crop))
        sub = qmap.levels[box.y0 : box.y1 + 1, box.x0 : box.x1 + 1, :]
        from .actmap import ActivationMap

        qmap = ActivationMap(sub, ImageMeta(qmap.meta.image_id + "#crop",
                                            qmap.meta.image_width, qmap.meta.image_height),
                             qmap.params)
    query_desc = _descriptor(qmap, kind, model, grid_params)
    search = SearchParams(step=step, aspect_threshold=aspect, alpha=alpha)
    params = RerankParams(shortlist=shortlist, qe_top=qe_top, search=search,
                          qe_exclude_self=qe_exclude_self)

    t0 = time.perf_counter()
    ranked = filter_rank(idx, query_desc)
    filter_ms = (time.perf_counter() - t0) * 1e3
    click.echo(f"filter: {len(idx)} vectors in {filter_ms:.2f} ms", err=True)
    if "aml" in stage_list:
        t0 = time.perf_counter()
        ranked = rerank_aml(idx, qmap, query_desc, ranked, params, threads=threads)
        n = min(shortlist, len(idx))
        rerank_ms = (time.perf_counter() - t0) * 1e3
        click.echo(f"aml: re-ranked {n} images in {rerank_ms:.1f} ms "
                   f"({rerank_ms / max(1, n):.1f} ms/image)", err=True)
    if "qe" in stage_list:
        ranked = query_expand(idx, query_desc, ranked, params, query_id=qmap.meta.image_id)
    save_ranked_list(ranked, out_path)
    click.echo(f"wrote {len(ranked.items)} results ({ranked.provenance}) -> {out_path}")


@main.command()
@click.option("--query", "query_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--target", "target_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--alpha", type=float, default=10.0, show_default=True)
@click.option("--step", type=int, default=3, show_default=True)
@click.option("--aspect", type=float, default=1.1, show_default=True)
@click.option("--exhaustive", is_flag=True, help="scan every window instead of the sampled search.")
@_fail_on_rmac_error
def localize(query_path, target_path, alpha, step, aspect, exhaustive):
    """Locate the query object inside a target activation map."""
    qmap = load_actmap(query_path)
    tmap = load_actmap(target_path)
    q = l2_normalize(mac(qmap))
    stack = build_integral(tmap, PoolingParams(alpha))
    if exhaustive:
        det = detect_exhaustive(stack, q)
    else:
        det = detect_aml(stack, q, qmap.width / qmap.height,
                         SearchParams(step=step, aspect_threshold=aspect, alpha=alpha))
    r = det.region
    click.echo(f"region: {r.x0},{r.y0},{r.x1},{r.y1}")
    if det.image_box is not None:
        click.echo("image_box: %d,%d,%d,%d" % det.image_box)
    click.echo(f"score: {det.score:.8f}")
    click.echo(f"windows_evaluated: {det.windows_evaluated}")
    if det.aspect_fallback:
        click.echo("aspect_fallback: true")


@main.group()
def regions():
    """Sampling-grid utilities."""


@regions.command("dump")
@click.option("--w", "width", required=True, type=int)
@click.option("--h", "height", required=True, type=int)
@click.option("--scales", type=int, default=3, show_default=True)
@_fail_on_rmac_error
def regions_dump(width, height, scales):
    """Print the grid as CSV (scale-major, row-major order)."""
    click.echo("x0,y0,x1,y1")
    for r in region_grid(width, height, RegionGridParams(num_scales=scales)):
        click.echo(f"{r.x0},{r.y0},{r.x1},{r.y1}")


# ---------------------------------------------------------------------------
# eval / bench


@main.group(name="eval")
def eval_group():
    """Evaluation protocols."""


@eval_group.command("map")
@click.option("--gt-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--ranked-dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="directory of <query>.txt ranked lists")
@_fail_on_rmac_error
def eval_map(gt_dir, ranked_dir):
    """Mean average precision with junk removal; CSV on stdout."""
    from .retrieval import RankedList

    gt = load_ground_truth(gt_dir)
    runs = {}
    for name in sorted(gt):
        path = Path(ranked_dir) / f"{name}.txt"
        if not path.exists():
            raise click.ClickException(f"missing ranked list {path}")
        items = []
        for line in path.read_text().splitlines():
            fields = line.split("\t")
            items.append((fields[1], float(fields[2])))
        runs[name] = RankedList(items=items)
    report = evaluate_map(runs, gt)
    click.echo("query,ap")
    for name in sorted(report.per_query):
        click.echo(f"{name},{report.per_query[name]:.6f}")
    click.echo(f"mAP,{report.mean:.6f}")


@eval_group.command("iou")
@click.option("--activations", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--groups", "groups_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="TSV: group_name image_id x0 y0 x1 y1 (pixel box)")
@click.option("--alpha", type=float, default=10.0, show_default=True)
@click.option("--step", type=int, default=3, show_default=True)
@click.option("--aspect", type=float, default=1.1, show_default=True)
@_fail_on_rmac_error
def eval_iou(activations, groups_path, alpha, step, aspect):
    """Cross-matched localization accuracy per group; CSV on stdout."""
    groups: dict[str, list[GroupMember]] = {}
    for lineno, line in enumerate(Path(groups_path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 6:
            raise click.ClickException(f"{groups_path}:{lineno}: expected 6 fields")
        name, image_id = fields[0], fields[1]
        box = tuple(int(v) for v in fields[2:])
        groups.setdefault(name, []).append(
            GroupMember(image_id, Path(activations) / f"{image_id}.actmap", box)  # type: ignore[arg-type]
        )
    report = evaluate_iou_protocol(
        groups, SearchParams(step=step, aspect_threshold=aspect, alpha=alpha)
    )
    click.echo("variant,mean_iou,percent_windows,pairs")
    for variant in sorted(report.mean_iou):
        click.echo(
            f"{variant},{report.mean_iou[variant]:.6f},"
            f"{report.windows_fraction[variant] * 100:.3f},{report.pairs}"
        )


@main.command()
@click.option("--activations", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--limit", type=int, default=8, show_default=True, help="maps to benchmark")
@click.option("--compare-backends", is_flag=True, help="benchmark every available kernel backend")
@click.option("--alpha", type=float, default=10.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="RNG seed for synthetic filter vectors")
@_fail_on_rmac_error
def bench(activations, limit, compare_backends, alpha, seed):
    """Kernel and filtering throughput on a corpus."""
    paths = _collect_actmaps(activations)[:limit]
    amaps = [load_actmap(p) for p in paths]
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((max(1000, len(paths)), amaps[0].channels))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    backends = None if compare_backends else [kernels.BACKEND]
    rows = run_benchmark(amaps, vectors, SearchParams(alpha=alpha), backends)
    click.echo("backend,integral_ms_per_map,filter_vectors_per_s,aml_windows_per_s,exhaustive_windows_per_s")
    for row in rows:
        click.echo(
            f"{row.backend},{row.integral_ms:.3f},{row.filter_vps:.0f},"
            f"{row.aml_windows_per_s:.0f},{row.exhaustive_windows_per_s:.0f}"
        )


if __name__ == "__main__":
    sys.exit(main())
