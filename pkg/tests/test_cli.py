"""Command-line surface: validation, import, index, query, eval, bench."""

from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from rmac.actmap import ActivationMap, ImageMeta, load_actmap, save_actmap
from rmac.cli import main

from conftest import _clutter_map, planted_corpus, random_map

DATA = Path(__file__).parent / "data"


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def corpus_dirs(tmp_path_factory):
    """Planted corpus, held-out whitening maps, and queries on disk."""
    rng = np.random.default_rng(7)
    corpus = planted_corpus(rng)
    root = tmp_path_factory.mktemp("corpus")
    db = root / "db"
    held = root / "held"
    queries = root / "queries"
    for d in (db, held, queries):
        d.mkdir()
    for name, amap in corpus.database.items():
        save_actmap(amap, db / f"{name}.actmap")
    for i in range(30):
        amap = ActivationMap(
            _clutter_map(rng, 24, 18, 16).astype(np.uint8),
            ImageMeta(f"held{i}", 24 * 32, 18 * 32),
        )
        save_actmap(amap, held / f"held{i}.actmap")
    for name, amap in corpus.queries.items():
        save_actmap(amap, queries / f"{name}.actmap")
    return root, corpus


class TestActmapCommands:
    def test_validate_golden(self, runner):
        result = runner.invoke(main, ["actmap", "validate", str(DATA / "golden_4x3x2.actmap")])
        assert result.exit_code == 0
        assert "W=4 H=3 K=2" in result.output
        assert "nnz=4" in result.output

    def test_validate_corrupt_magic_fails(self, runner, tmp_path):
        bad = tmp_path / "bad.actmap"
        bad.write_bytes(b"XXXX" + bytes(30))
        result = runner.invoke(main, ["actmap", "validate", str(bad)])
        assert result.exit_code != 0

    def test_import_dense_npy_roundtrip(self, runner, tmp_path, rng):
        raw = rng.uniform(0, 150, size=(3, 4, 2))
        np.save(tmp_path / "dense.npy", raw)
        out = tmp_path / "store"
        result = runner.invoke(
            main,
            ["actmap", "import", "--out-dir", str(out), "--image-size", "128x96",
             str(tmp_path / "dense.npy")],
        )
        assert result.exit_code == 0, result.output
        amap = load_actmap(out / "dense.actmap")
        assert (amap.width, amap.height, amap.channels) == (4, 3, 2)
        assert amap.meta == ImageMeta("dense", 128, 96)
        from rmac.actmap import quantize

        assert amap == quantize(raw, ImageMeta("dense", 128, 96))

    def test_import_existing_actmap_copies(self, runner, tmp_path):
        out = tmp_path / "store"
        result = runner.invoke(
            main, ["actmap", "import", "--out-dir", str(out), str(DATA / "golden_4x3x2.actmap")]
        )
        assert result.exit_code == 0
        assert (out / "golden_4x3x2.actmap").read_bytes() == (DATA / "golden_4x3x2.actmap").read_bytes()

    def test_import_corrupt_fails(self, runner, tmp_path):
        bad = tmp_path / "bad.actmap"
        bad.write_bytes(b"AMP1" + bytes(10))
        result = runner.invoke(main, ["actmap", "import", "--out-dir", str(tmp_path / "o"), str(bad)])
        assert result.exit_code != 0


class TestIndexPipeline:
    def test_pca_learn_and_index_build(self, runner, corpus_dirs, tmp_path):
        root, corpus = corpus_dirs
        pca_path = tmp_path / "model.pca"
        result = runner.invoke(
            main, ["pca", "learn", "--activations", str(root / "held"), "--out", str(pca_path)]
        )
        assert result.exit_code == 0, result.output
        index_path = tmp_path / "db.dsc"
        result = runner.invoke(
            main,
            ["index", "build", "--activations", str(root / "db"), "--pca", str(pca_path),
             "--out", str(index_path)],
        )
        assert result.exit_code == 0, result.output
        assert "indexed 60 maps" in result.output

        # rebuilding is byte-identical
        again = tmp_path / "db2.dsc"
        runner.invoke(
            main,
            ["index", "build", "--activations", str(root / "db"), "--pca", str(pca_path),
             "--out", str(again)],
        )
        assert index_path.read_bytes() == again.read_bytes()

        # a multi-region index differs from the global-max one
        rmac_path = tmp_path / "db_rmac.dsc"
        result = runner.invoke(
            main,
            ["index", "build", "--activations", str(root / "db"), "--pca", str(pca_path),
             "--kind", "rmac", "--out", str(rmac_path)],
        )
        assert result.exit_code == 0, result.output
        assert rmac_path.read_bytes() != index_path.read_bytes()

    def test_missing_pca_fails(self, runner, corpus_dirs, tmp_path):
        root, _ = corpus_dirs
        result = runner.invoke(
            main,
            ["index", "build", "--activations", str(root / "db"),
             "--pca", str(tmp_path / "absent.pca"), "--out", str(tmp_path / "x.dsc")],
        )
        assert result.exit_code != 0


@pytest.fixture(scope="module")
def built_index(tmp_path_factory, corpus_dirs):
    root, corpus = corpus_dirs
    out = tmp_path_factory.mktemp("index")
    runner = CliRunner()
    pca_path = out / "model.pca"
    assert runner.invoke(
        main, ["pca", "learn", "--activations", str(root / "held"), "--out", str(pca_path)]
    ).exit_code == 0
    index_path = out / "db.dsc"
    assert runner.invoke(
        main,
        ["index", "build", "--activations", str(root / "db"), "--pca", str(pca_path),
         "--out", str(index_path)],
    ).exit_code == 0
    return pca_path, index_path


class TestQueryCommand:
    def test_filter_stage_matches_library(self, runner, corpus_dirs, built_index, tmp_path):
        root, corpus = corpus_dirs
        pca_path, index_path = built_index
        out = tmp_path / "ranked.txt"
        result = runner.invoke(
            main,
            ["query", "--index", str(index_path), "--pca", str(pca_path),
             "--activations", str(root / "db"), "--query", str(root / "queries" / "q0.actmap"),
             "--stages", "filter", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        lines = out.read_text().splitlines()
        assert len(lines) == 60

        from rmac.descriptors import PcaModel, whitened_mac
        from rmac.retrieval import Index, filter_rank

        model = PcaModel.load(pca_path)
        index = Index.load_descriptors(index_path, actmap_dir=root / "db", pca=model)
        qdesc = whitened_mac(load_actmap(root / "queries" / "q0.actmap"), model)
        expected = filter_rank(index, qdesc)
        got = [line.split("\t")[1] for line in lines]
        assert got == expected.ids()

    def test_full_pipeline_writes_boxes(self, runner, corpus_dirs, built_index, tmp_path):
        root, _ = corpus_dirs
        pca_path, index_path = built_index
        out = tmp_path / "ranked_full.txt"
        result = runner.invoke(
            main,
            ["query", "--index", str(index_path), "--pca", str(pca_path),
             "--activations", str(root / "db"), "--query", str(root / "queries" / "q1.actmap"),
             "--stages", "filter,aml,qe", "-N", "20", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        first = out.read_text().splitlines()[0].split("\t")
        assert len(first) == 4  # rank, id, score, pixel box
        assert len(first[3].split(",")) == 4

    def test_bad_stage_order_rejected(self, runner, corpus_dirs, built_index, tmp_path):
        root, _ = corpus_dirs
        pca_path, index_path = built_index
        result = runner.invoke(
            main,
            ["query", "--index", str(index_path), "--pca", str(pca_path),
             "--activations", str(root / "db"), "--query", str(root / "queries" / "q0.actmap"),
             "--stages", "aml,filter", "--out", str(tmp_path / "x.txt")],
        )
        assert result.exit_code != 0

    def test_feature_space_crop_warns(self, runner, corpus_dirs, built_index, tmp_path):
        root, _ = corpus_dirs
        pca_path, index_path = built_index
        result = runner.invoke(
            main,
            ["query", "--index", str(index_path), "--pca", str(pca_path),
             "--activations", str(root / "db"), "--query", str(root / "queries" / "q0.actmap"),
             "--crop", "0,0,5,5", "--stages", "filter", "--out", str(tmp_path / "c.txt")],
        )
        assert result.exit_code == 0, result.output
        assert "feature-map cells" in result.output


class TestLocalizeCommand:
    def test_outputs_fields(self, runner, corpus_dirs):
        root, corpus = corpus_dirs
        planted_id = sorted(corpus.positives["q0"])[0]
        result = runner.invoke(
            main,
            ["localize", "--query", str(root / "queries" / "q0.actmap"),
             "--target", str(root / "db" / f"{planted_id}.actmap")],
        )
        assert result.exit_code == 0, result.output
        assert "region:" in result.output
        assert "image_box:" in result.output
        assert "score:" in result.output
        assert "windows_evaluated:" in result.output


class TestRegionsCommand:
    def test_square_three_scales(self, runner):
        result = runner.invoke(main, ["regions", "dump", "--w", "12", "--h", "12"])
        assert result.exit_code == 0
        lines = result.output.strip().splitlines()
        assert lines[0] == "x0,y0,x1,y1"
        assert len(lines) == 1 + 14


class TestEvalCommands:
    def test_eval_map_matches_expected(self, runner, tmp_path):
        gt = tmp_path / "gt"
        gt.mkdir()
        (gt / "one_query.txt").write_text("queryimg 0 0 10 10\n")
        (gt / "one_good.txt").write_text("pos\n")
        (gt / "one_junk.txt").write_text("junky\n")
        ranked = tmp_path / "ranked"
        ranked.mkdir()
        (ranked / "one.txt").write_text("1\tjunky\t0.9\n2\tneg\t0.8\n3\tpos\t0.7\n")
        result = runner.invoke(main, ["eval", "map", "--gt-dir", str(gt), "--ranked-dir", str(ranked)])
        assert result.exit_code == 0, result.output
        assert "one,0.500000" in result.output
        assert "mAP,0.500000" in result.output

    def test_eval_map_empty_ground_truth_fails_cleanly(self, runner, tmp_path):
        gt = tmp_path / "gt"
        gt.mkdir()
        ranked = tmp_path / "ranked"
        ranked.mkdir()
        result = runner.invoke(main, ["eval", "map", "--gt-dir", str(gt), "--ranked-dir", str(ranked)])
        assert result.exit_code != 0

    def test_eval_iou_runs(self, runner, tmp_path, rng):
        from conftest import make_pattern

        amap_dir = tmp_path / "maps"
        amap_dir.mkdir()
        pattern = make_pattern(rng, 10, 8, 8)
        amap = ActivationMap(pattern, ImageMeta("m", 320, 256))
        save_actmap(amap, amap_dir / "m0.actmap")
        save_actmap(amap, amap_dir / "m1.actmap")
        groups = tmp_path / "groups.tsv"
        groups.write_text("g m0 0 0 319 255\ng m1 0 0 319 255\n")
        result = runner.invoke(
            main, ["eval", "iou", "--activations", str(amap_dir), "--groups", str(groups)]
        )
        assert result.exit_code == 0, result.output
        assert "exhaustive,1.000000,100.000,2" in result.output
        aml_line = [l for l in result.output.splitlines() if l.startswith("aml,")][0]
        assert float(aml_line.split(",")[2]) < 100.0  # %W column


class TestBenchCommand:
    def test_runs_to_completion(self, runner, corpus_dirs):
        root, _ = corpus_dirs
        result = runner.invoke(main, ["bench", "--activations", str(root / "db"), "--limit", "2"])
        assert result.exit_code == 0, result.output
        lines = result.output.strip().splitlines()
        assert lines[0].startswith("backend,")
        assert len(lines) == 2

    def test_compare_backends(self, runner, corpus_dirs):
        from rmac import kernels

        root, _ = corpus_dirs
        result = runner.invoke(
            main, ["bench", "--activations", str(root / "db"), "--limit", "2", "--compare-backends"]
        )
        assert result.exit_code == 0, result.output
        lines = result.output.strip().splitlines()
        assert len(lines) == 1 + len(kernels.available_backends())


class TestConfigFile:
    def test_config_supplies_defaults_flags_override(self, runner, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# defaults\nscales = 2\n")
        result = runner.invoke(main, ["--config", str(cfg), "regions", "dump", "--w", "12", "--h", "12"])
        assert result.exit_code == 0, result.output
        assert len(result.output.strip().splitlines()) == 1 + 5  # scales 2: 1 + 4
        result = runner.invoke(
            main, ["--config", str(cfg), "regions", "dump", "--w", "12", "--h", "12", "--scales", "3"]
        )
        assert len(result.output.strip().splitlines()) == 1 + 14
