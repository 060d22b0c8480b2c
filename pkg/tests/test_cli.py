"""End-to-end CLI behavior: pipelines, exit codes, config precedence, manifests."""

import json
from pathlib import Path

import pytest

from conftest import small_synth_spec
from partgraph.cli import run, run_from_manifest
from partgraph.graph import load_graph_file
from partgraph.manifest import read_manifest, sha256_file
from partgraph.metrics import read_pgm
from partgraph.synthgen import save_spec


def hash_tree(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): sha256_file(p)
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
        and not p.name.endswith(".manifest.json")
    }


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One small synth+learn+infer pipeline shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    spec = small_synth_spec(images=8)
    spec_path = root / "spec.yaml"
    save_spec(spec, spec_path)
    data = root / "data"
    graph_path = root / "g.egraph"
    results = root / "results"
    assert run(["synth", "--spec", str(spec_path), "--out", str(data)]) == 0
    assert run([
        "learn", "--fmaps", str(data), "--out", str(graph_path),
        "--nodes-per-channel", "4", "4", "--max-parents", "3",
        "--iterations", "4", "--candidate-pool", "16", "--seed", "11",
    ]) == 0
    assert run([
        "infer", "--graph", str(graph_path), "--fmaps", str(data),
        "--out", str(results),
    ]) == 0
    return {
        "root": root, "spec": spec_path, "data": data,
        "graph": graph_path, "results": results,
    }


class TestPipeline:
    def test_one_result_per_image(self, workspace):
        results = sorted(workspace["results"].glob("*.result.yaml"))
        assert len(results) == 8

    def test_learn_defaults_follow_reference_protocol(self, workspace, tmp_path):
        out = tmp_path / "defaults.egraph"
        assert run([
            "learn", "--fmaps", str(workspace["data"]), "--out", str(out),
            "--nodes-per-channel", "2", "--seed", "3",
        ]) == 0
        hp = load_graph_file(out).hyperparams
        assert (hp.tau, hp.max_parents, hp.iterations, hp.beta) == (0.1, 15, 20, 1.0)

    def test_infer_accepts_explicit_file_list(self, workspace, tmp_path):
        files = sorted(str(p) for p in workspace["data"].glob("img0000_L*.fmap"))
        out = tmp_path / "single"
        assert run(["infer", "--graph", str(workspace["graph"]),
                    "--fmaps", *files, "--out", str(out)]) == 0
        assert (out / "img0000.result.yaml").is_file()

    def test_trace_file_emitted(self, workspace):
        trace = Path(str(workspace["graph"]) + ".trace.tsv")
        lines = trace.read_text().splitlines()
        assert lines[0] == "layer_index\titeration\tlog_likelihood"
        assert len(lines) > 2

    def test_heatmap_pgm(self, workspace, tmp_path):
        result = sorted(workspace["results"].glob("*.result.yaml"))[0]
        out = tmp_path / "h.pgm"
        assert run([
            "heatmap", "--graph", str(workspace["graph"]), "--result", str(result),
            "--layer", "0", "--raster", "56x48", "--out", str(out), "--no-figure",
        ]) == 0
        raster = read_pgm(out)
        assert raster.shape == (48, 56)
        assert raster.max() == 255

    def test_instability_report(self, workspace, tmp_path):
        out = tmp_path / "instab.tsv"
        assert run([
            "instability", "--results", str(workspace["results"]),
            "--landmarks", str(workspace["data"] / "landmarks.yaml"),
            "--out", str(out), "--no-figure",
        ]) == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("node\tcombined")
        assert len(lines) > 1

    def test_figures_written_on_report_path(self, workspace, tmp_path):
        out = tmp_path / "instab.tsv"
        assert run([
            "instability", "--results", str(workspace["results"]),
            "--landmarks", str(workspace["data"] / "landmarks.yaml"),
            "--out", str(out),
        ]) == 0
        assert (tmp_path / "instab.tsv.png").is_file()

    def test_no_subcommand_mutates_inputs(self, workspace):
        before = hash_tree(workspace["data"])
        # the fixture already ran learn+infer over these inputs
        assert hash_tree(workspace["data"]) == before


class TestDeterminism:
    def test_repeated_pipeline_identical_bytes(self, workspace, tmp_path):
        second = tmp_path / "second"
        assert run([
            "synth", "--spec", str(workspace["spec"]), "--out",
            str(second / "data"), "--jobs", "3",
        ]) == 0
        assert run([
            "learn", "--fmaps", str(second / "data"), "--out",
            str(second / "g.egraph"),
            "--nodes-per-channel", "4", "4", "--max-parents", "3",
            "--iterations", "4", "--candidate-pool", "16", "--seed", "11",
        ]) == 0
        assert run([
            "infer", "--graph", str(second / "g.egraph"), "--fmaps",
            str(second / "data"), "--out", str(second / "results"), "--jobs", "3",
        ]) == 0
        first_root = workspace["root"]
        for rel in ["data", "results"]:
            assert hash_tree(first_root / rel) == hash_tree(second / rel)
        assert sha256_file(workspace["graph"]) == sha256_file(second / "g.egraph")


class TestErrors:
    def test_unknown_flag_usage_error(self, capsys):
        with pytest.raises(SystemExit) as err:
            run(["learn", "--bogus", "x"])
        assert err.value.code == 2

    def test_missing_file_io_error(self, tmp_path):
        code = run([
            "infer", "--graph", str(tmp_path / "nope.egraph"),
            "--fmaps", str(tmp_path), "--out", str(tmp_path / "r"),
        ])
        assert code == 3

    def test_schema_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.egraph"
        bad.write_text("schema: wrong/1\n")
        (tmp_path / "d").mkdir()
        code = run([
            "infer", "--graph", str(bad), "--fmaps", str(tmp_path / "d"),
            "--out", str(tmp_path / "r"),
        ])
        assert code == 4
        line = capsys.readouterr().err.strip().splitlines()[-1]
        assert line.startswith("partgraph-error\tcode=4")

    def test_bad_config_key_rejected(self, workspace, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("bogus_key: 1\n")
        code = run([
            "learn", "--fmaps", str(workspace["data"]),
            "--out", str(tmp_path / "g.egraph"), "--config", str(cfg),
        ])
        assert code == 4


class TestConfigFile:
    def test_precedence_flags_over_file_over_defaults(self, workspace, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(
            "tau: 0.25\niterations: 2\nnodes_per_channel: [2]\nseed: 9\n"
        )
        out = tmp_path / "g.egraph"
        assert run([
            "learn", "--fmaps", str(workspace["data"]), "--out", str(out),
            "--config", str(cfg), "--tau", "0.5",
        ]) == 0
        hp = load_graph_file(out).hyperparams
        assert hp.tau == 0.5          # flag wins over file
        assert hp.iterations == 2     # file wins over default (20)
        assert hp.max_parents == 15   # default preserved


class TestManifests:
    def test_manifest_written_with_digests(self, workspace):
        manifest = read_manifest(workspace["results"] / "manifest.json")
        assert manifest["subcommand"] == "infer"
        assert manifest["version"]
        assert manifest["inputs"] and manifest["outputs"]
        some_output = next(iter(manifest["outputs"]))
        assert manifest["outputs"][some_output] == sha256_file(some_output)

    def test_rerun_from_manifest_reproduces_outputs(self, workspace):
        manifest_path = Path(str(workspace["graph"]) + ".manifest.json")
        before = {
            p: sha256_file(p) for p in read_manifest(manifest_path)["outputs"]
        }
        run_from_manifest(manifest_path)
        after = {p: sha256_file(p) for p in before}
        assert before == after
