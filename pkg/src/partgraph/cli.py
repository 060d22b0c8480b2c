"""Command-line entry point wiring the modules into reproducible pipelines.

Subcommands: synth, learn, infer, instability, heatmap, patches, aog-build,
aog-localize, aog-eval.  Flags mirror config field names 1:1; a YAML config
file may supply any of them (precedence: flags > file > defaults).  Every
run writes a manifest (config echo, input/output digests, tool version)
beside its outputs.  Exit codes: 2 usage, 3 missing/unreadable inputs,
4 schema/validation/config errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, InputError, MetricError, ParseError, ValidationError
from .fmap import load_fmap, save_fmap
from .graph import NodeId, load_graph_file, save_graph_file
from .inference import infer_image, load_result, save_result
from .learner import LearnConfig, learn_graph
from .manifest import read_manifest, write_manifest
from .metrics import (
    location_instability,
    raw_filter_peak_baseline,
    render_heatmap,
    render_heatmap_u8,
    top_patches,
    write_pgm,
)
from .synthgen import (
    generate,
    load_landmarks,
    load_spec,
    save_landmarks,
    save_truth,
)
from .textio import load_yaml, write_tsv
from .aog import (
    build_aog,
    evaluate_localization,
    load_annotations,
    load_aog,
    load_predictions,
    localize,
    save_aog,
    save_predictions,
)

log = logging.getLogger("partgraph.cli")

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SCHEMA = 4


# ---------------------------------------------------------------------------
# option plumbing


def _add(parser, name, **kwargs):
    """Optional flag whose absence is detectable (default None) for merging."""
    kwargs.setdefault("default", None)
    parser.add_argument(name, **kwargs)


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """flags > config file > defaults."""
    cfg = dict(defaults)
    file_values = {}
    if getattr(args, "config", None):
        loaded = load_yaml(args.config)
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {args.config} must hold a mapping")
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        file_values = loaded
    cfg.update(file_values)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    missing = [k for k, v in cfg.items() if v is None]
    if missing:
        raise ConfigError(f"missing required option(s): {sorted(missing)}")
    return cfg


def _require_file(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{what} not found: {path}")
    return path


def _require_dir(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise InputError(f"{what} not found: {path}")
    return path


def _fmap_paths(sources) -> list[Path]:
    """Expand directories and file paths into a sorted .fmap file list."""
    if isinstance(sources, (str, Path)):
        sources = [sources]
    files: set[Path] = set()
    for source in sources:
        path = Path(source)
        if path.is_dir():
            files.update(path.glob("*.fmap"))
        elif path.is_file():
            files.add(path)
        else:
            raise InputError(f"feature-map source not found: {path}")
    if not files:
        raise InputError(f"no .fmap files under {list(map(str, sources))}")
    return sorted(files)


def _discover_fmaps(sources) -> dict[str, dict[int, object]]:
    """Group .fmap files (from directories and/or file paths) by (image, layer)."""
    grouped: dict[str, dict[int, object]] = {}
    for path in _fmap_paths(sources):
        fmap = load_fmap(path)
        layers = grouped.setdefault(fmap.image_id, {})
        if fmap.layer_index in layers:
            raise InputError(
                f"duplicate feature map for image {fmap.image_id!r} "
                f"layer {fmap.layer_index}"
            )
        layers[fmap.layer_index] = fmap
    return grouped


def _jobs(cfg: dict) -> int:
    jobs = int(cfg.get("jobs") or 0)
    return jobs if jobs > 0 else (os.cpu_count() or 1)


def _parallel_map(fn, keys, jobs: int) -> dict:
    """Run fn over keys; assembly is keyed, so results ignore worker order."""
    keys = sorted(keys)
    if jobs <= 1:
        return {k: fn(k) for k in keys}
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        values = pool.map(fn, keys)
        return dict(zip(keys, values))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: dict) -> None:
    spec_path = _require_file(cfg["spec"], "synth spec")
    spec = load_spec(spec_path)
    if cfg.get("seed", -1) >= 0:
        spec.seed = int(cfg["seed"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    fmaps, truth = generate(spec)
    outputs = []

    def render(image_id: str) -> list[Path]:
        written = []
        for layer_index, fmap in sorted(fmaps[image_id].items()):
            path = out / f"{image_id}_L{layer_index}.fmap"
            save_fmap(fmap, path)
            written.append(path)
        return written

    per_image = _parallel_map(render, fmaps.keys(), _jobs(cfg))
    for image_id in sorted(per_image):
        outputs.extend(per_image[image_id])
    truth_path = out / "truth.yaml"
    save_truth(truth, truth_path)
    landmarks_path = out / "landmarks.yaml"
    save_landmarks(truth.landmark_view(), landmarks_path)
    outputs.extend([truth_path, landmarks_path])
    write_manifest(out / "manifest.json", "synth", cfg, [spec_path], outputs)


def _learn_config(cfg: dict) -> LearnConfig:
    return LearnConfig(
        tau=float(cfg["tau"]),
        max_parents=int(cfg["max_parents"]),
        iterations=int(cfg["iterations"]),
        beta=float(cfg["beta"]),
        nodes_per_channel=tuple(int(v) for v in cfg["nodes_per_channel"]),
        sigma2_init=float(cfg["sigma2_init"]),
        sigma2_floor=float(cfg["sigma2_floor"]),
        eta=float(cfg["eta"]),
        candidate_pool=int(cfg["candidate_pool"]),
        seed=int(cfg["seed"]),
        mode=str(cfg["mode"]),
    )


def cmd_learn(cfg: dict) -> None:
    inputs = _fmap_paths(cfg["fmaps"])
    fmaps = _discover_fmaps(cfg["fmaps"])
    config = _learn_config(cfg)
    result = learn_graph(fmaps, config)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_graph_file(result.graph, out)
    trace_path = out.with_suffix(out.suffix + ".trace.tsv")
    rows = []
    for layer_index in sorted(result.traces):
        for iteration, value in enumerate(result.traces[layer_index]):
            rows.append([layer_index, iteration, float(value)])
    write_tsv(trace_path, ["layer_index", "iteration", "log_likelihood"], rows)
    write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "learn", cfg, inputs, [out, trace_path],
    )


def cmd_infer(cfg: dict) -> None:
    graph = load_graph_file(_require_file(cfg["graph"], "graph file"))
    sources = _fmap_paths(cfg["fmaps"])
    fmaps = _discover_fmaps(cfg["fmaps"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)

    def run(image_id: str) -> Path:
        result = infer_image(graph, fmaps[image_id])
        path = out / f"{image_id}.result.yaml"
        save_result(result, path)
        return path

    produced = _parallel_map(run, fmaps.keys(), _jobs(cfg))
    outputs = [produced[k] for k in sorted(produced)]
    inputs = [Path(cfg["graph"])] + sources
    write_manifest(out / "manifest.json", "infer", cfg, inputs, outputs)


def _load_results_dir(directory: Path) -> dict[str, object]:
    files = sorted(directory.glob("*.result.yaml"))
    if not files:
        raise InputError(f"no *.result.yaml files in {directory}")
    results = {}
    for path in files:
        result = load_result(path)
        results[result.image_id] = result
    return results


def cmd_instability(cfg: dict) -> None:
    results_dir = _require_dir(cfg["results"], "results directory")
    results = _load_results_dir(results_dir)
    landmarks = load_landmarks(_require_file(cfg["landmarks"], "landmarks file"))
    dims = {
        image_id: (r.image_width_px, r.image_height_px)
        for image_id, r in results.items()
    }
    top_n = int(cfg["top_n"])
    maps = {image_id: r.assignment_map() for image_id, r in results.items()}
    node_ids = sorted({node for m in maps.values() for node in m})
    rows, figure_rows = [], []
    landmark_names = sorted({n for marks in landmarks.values() for n in marks})
    for node_id in node_ids:
        assignments = {}
        for image_id, amap in maps.items():
            entry = amap.get(node_id)
            if entry is not None:
                assignments[image_id] = (entry.position, entry.score)
        try:
            report = location_instability(
                assignments, landmarks, dims, top_n_images=top_n,
                node_label=str(node_id),
            )
        except MetricError as exc:
            log.warning("skipping %s: %s", node_id, exc)
            continue
        rows.append(
            [str(node_id), report.combined]
            + [report.per_landmark.get(n, float("nan")) for n in landmark_names]
            + [len(report.images_used), ",".join(report.images_used)]
        )
        figure_rows.append((str(node_id), report.combined))
    baseline_combined: dict[int, float] = {}
    if cfg.get("baseline_fmaps"):
        by_image = _discover_fmaps(cfg["baseline_fmaps"])
        layer_pick = int(cfg["baseline_layer"])
        maps = {i: layers[layer_pick] for i, layers in by_image.items()}
        peaks = raw_filter_peak_baseline(maps)
        for channel in sorted(peaks):
            try:
                report = location_instability(
                    peaks[channel], landmarks, dims, top_n_images=top_n,
                    node_label=f"filter:{layer_pick}:{channel}",
                )
            except MetricError as exc:
                log.warning("skipping baseline channel %d: %s", channel, exc)
                continue
            baseline_combined[channel] = report.combined
            rows.append(
                [f"filter:{layer_pick}:{channel}", report.combined]
                + [report.per_landmark.get(n, float("nan")) for n in landmark_names]
                + [len(report.images_used), ",".join(report.images_used)]
            )
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tsv(
        out,
        ["node", "combined"] + [f"std_{n}" for n in landmark_names]
        + ["images_used", "images"],
        rows,
    )
    outputs = [out]
    if cfg["figure"]:
        from .figures import plot_instability

        figure_path = out.with_suffix(out.suffix + ".png")
        plot_instability(figure_rows, baseline_combined or None, figure_path)
        outputs.append(figure_path)
    inputs = sorted(results_dir.glob("*.result.yaml")) + [Path(cfg["landmarks"])]
    write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "instability", cfg, inputs, outputs,
    )


def cmd_heatmap(cfg: dict) -> None:
    graph = load_graph_file(_require_file(cfg["graph"], "graph file"))
    result = load_result(_require_file(cfg["result"], "inference result"))
    layer_pos = int(cfg["layer"])
    if not (0 <= layer_pos < len(result.layers)):
        raise InputError(f"layer {layer_pos} out of range")
    sigma_lookup = {n.id: n.sigma2 for n in graph.layers[layer_pos].nodes}
    assignments = [
        (a.position, a.score, sigma_lookup[a.node])
        for a in result.layers[layer_pos].assignments
        if a.node in sigma_lookup
    ]
    try:
        width, height = (int(v) for v in str(cfg["raster"]).lower().split("x"))
    except ValueError as exc:
        raise ConfigError(f"raster must be WIDTHxHEIGHT, got {cfg['raster']!r}") from exc
    canvas = render_heatmap(
        assignments, height, width, top_fraction=float(cfg["fraction"])
    )
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(render_heatmap_u8(canvas), out)
    outputs = [out]
    if cfg["figure"]:
        from .figures import plot_heatmap

        figure_path = out.with_suffix(out.suffix + ".png")
        plot_heatmap(canvas, figure_path)
        outputs.append(figure_path)
    write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "heatmap", cfg, [Path(cfg["graph"]), Path(cfg["result"])], outputs,
    )


def cmd_patches(cfg: dict) -> None:
    results_dir = _require_dir(cfg["results"], "results directory")
    results = _load_results_dir(results_dir)
    node_id = NodeId.parse(str(cfg["node"]))
    assignments, dims = {}, {}
    for image_id, result in results.items():
        entry = result.assignment_map().get(node_id)
        if entry is None:
            continue
        assignments[image_id] = (entry.position, entry.score)
        dims[image_id] = (result.image_width_px, result.image_height_px)
    if not assignments:
        raise InputError(f"node {node_id} absent from every result")
    boxes = top_patches(
        assignments, dims,
        fraction=float(cfg["fraction"]), patch_px=int(cfg["patch_px"]),
    )
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tsv(
        out,
        ["image_id", "x0", "y0", "x1", "y1"],
        [[image_id, *box] for image_id, box in boxes],
    )
    outputs = [out]
    if cfg["figure"]:
        from .figures import plot_patch_scores

        rows = [(image_id, assignments[image_id][1]) for image_id, _ in boxes]
        figure_path = out.with_suffix(out.suffix + ".png")
        plot_patch_scores(rows, figure_path)
        outputs.append(figure_path)
    write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "patches", cfg, sorted(results_dir.glob("*.result.yaml")), outputs,
    )


def cmd_aog_build(cfg: dict) -> None:
    results_dir = _require_dir(cfg["results"], "results directory")
    results = _load_results_dir(results_dir)
    annotations = load_annotations(_require_file(cfg["annotations"], "annotations"))
    aog = build_aog(
        annotations, results,
        retrieval_k=int(cfg["retrieval_k"]),
        sigma_retrieve=float(cfg["sigma_retrieve"]),
    )
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_aog(aog, out)
    inputs = sorted(results_dir.glob("*.result.yaml")) + [Path(cfg["annotations"])]
    write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"), "aog-build", cfg, inputs, [out]
    )


def cmd_aog_localize(cfg: dict) -> None:
    aog = load_aog(_require_file(cfg["aog"], "AOG file"))
    results_dir = _require_dir(cfg["results"], "results directory")
    results = _load_results_dir(results_dir)
    predictions = {
        image_id: localize(aog, result) for image_id, result in results.items()
    }
    dims = {
        image_id: (r.image_width_px, r.image_height_px)
        for image_id, r in results.items()
    }
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_predictions(aog.part, predictions, dims, out)
    inputs = [Path(cfg["aog"])] + sorted(results_dir.glob("*.result.yaml"))
    write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "aog-localize", cfg, inputs, [out],
    )


def cmd_aog_eval(cfg: dict) -> None:
    part, predictions, dims = load_predictions(
        _require_file(cfg["pred"], "predictions file")
    )
    part = cfg.get("part") or part
    landmarks = load_landmarks(_require_file(cfg["truth"], "truth landmarks"))
    truth = {}
    for image_id in predictions:
        marks = landmarks.get(image_id, {})
        if part not in marks:
            raise InputError(f"image {image_id!r} lacks a {part!r} landmark")
        truth[image_id] = marks[part]
    mean = evaluate_localization(predictions, truth, dims)
    from .metrics import normalized_distance

    rows, distances = [], []
    for image_id in sorted(predictions):
        pred = predictions[image_id]
        if pred.ok:
            d = normalized_distance(pred.position, truth[image_id], *dims[image_id])
        else:
            d = 1.0
        distances.append(d)
        rows.append([image_id, d, int(pred.ok), pred.template if pred.ok else -1])
    median = float(np.median(distances))
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tsv(out, ["image_id", "normalized_distance", "ok", "template"], rows)
    print(f"mean_normalized_distance={mean:.6f}")
    print(f"median_normalized_distance={median:.6f}")
    outputs = [out]
    if cfg["figure"]:
        from .figures import plot_distance_histogram

        figure_path = out.with_suffix(out.suffix + ".png")
        plot_distance_histogram(distances, figure_path)
        outputs.append(figure_path)
    write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "aog-eval", cfg, [Path(cfg["pred"]), Path(cfg["truth"])], outputs,
    )


# ---------------------------------------------------------------------------
# parser


_LEARN_DEFAULTS = {
    "fmaps": None,
    "out": None,
    "tau": 0.1,
    "max_parents": 15,
    "iterations": 20,
    "beta": 1.0,
    "nodes_per_channel": [20],
    "sigma2_init": 0.0625,
    "sigma2_floor": 1e-4,
    "eta": 1e-3,
    "candidate_pool": 100,
    "seed": 0,
    "mode": "closed_form",
}

_DEFAULTS: dict[str, dict] = {
    "synth": {"spec": None, "out": None, "seed": -1, "jobs": 0},
    "learn": dict(_LEARN_DEFAULTS),
    "infer": {"graph": None, "fmaps": None, "out": None, "jobs": 0},
    "instability": {
        "results": None, "landmarks": None, "out": None, "top_n": 20,
        "baseline_fmaps": "", "baseline_layer": 0, "figure": True,
    },
    "heatmap": {
        "graph": None, "result": None, "layer": 0, "raster": "224x224",
        "fraction": 0.5, "out": None, "figure": True,
    },
    "patches": {
        "results": None, "node": None, "fraction": 0.3, "patch_px": 70,
        "out": None, "figure": True,
    },
    "aog-build": {
        "results": None, "annotations": None, "retrieval_k": None,
        "sigma_retrieve": 0.3, "out": None,
    },
    "aog-localize": {"aog": None, "results": None, "out": None},
    "aog-eval": {
        "pred": None, "truth": None, "part": "", "out": None, "figure": True,
    },
}

_HANDLERS = {
    "synth": cmd_synth,
    "learn": cmd_learn,
    "infer": cmd_infer,
    "instability": cmd_instability,
    "heatmap": cmd_heatmap,
    "patches": cmd_patches,
    "aog-build": cmd_aog_build,
    "aog-localize": cmd_aog_localize,
    "aog-eval": cmd_aog_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partgraph",
        description="Learn part-pattern graphs from feature maps, run inference, "
        "evaluate stability, and transfer patterns to few-shot localization.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="render synthetic feature maps with truth")
    _add(p, "--spec", help="synth spec YAML")
    _add(p, "--out", help="output directory")
    _add(p, "--seed", type=int, help="override the spec's seed")
    _add(p, "--jobs", type=int, help="parallel workers (default: cores)")

    p = sub.add_parser("learn", help="fit a graph from .fmap files")
    _add(p, "--fmaps", nargs="+", help=".fmap files and/or directories of them")
    _add(p, "--out", help="output .egraph path")
    _add(p, "--tau", type=float, help="noise-component score")
    _add(p, "--max-parents", type=int, help="parents per node")
    _add(p, "--iterations", type=int, help="EM iterations per layer")
    _add(p, "--beta", type=float, help="entity-count scale")
    _add(p, "--nodes-per-channel", type=int, nargs="+",
         help="patterns per filter, one value per layer (or one for all)")
    _add(p, "--sigma2-init", type=float, help="initial spatial variance")
    _add(p, "--sigma2-floor", type=float, help="variance lower bound")
    _add(p, "--eta", type=float, help="gradient-mode step size")
    _add(p, "--candidate-pool", type=int, help="edge-candidate prefilter size")
    _add(p, "--seed", type=int, help="rng seed")
    _add(p, "--mode", choices=["closed_form", "gradient"], help="position update")

    p = sub.add_parser("infer", help="assign graph nodes on new images")
    _add(p, "--graph", help=".egraph file")
    _add(p, "--fmaps", nargs="+", help=".fmap files and/or directories of them")
    _add(p, "--out", help="output directory for result YAMLs")
    _add(p, "--jobs", type=int, help="parallel workers (default: cores)")

    p = sub.add_parser("instability", help="location-instability report")
    _add(p, "--results", help="directory of *.result.yaml")
    _add(p, "--landmarks", help="landmarks YAML")
    _add(p, "--out", help="output TSV")
    _add(p, "--top-n", type=int, help="images per node (by score)")
    _add(p, "--baseline-fmaps", help="fmap dir for the raw-filter-peak baseline")
    _add(p, "--baseline-layer", type=int, help="layer_index for the baseline")
    _add(p, "--figure", action=argparse.BooleanOptionalAction,
         help="write a PNG beside the TSV")

    p = sub.add_parser("heatmap", help="pattern-distribution graymap for one image")
    _add(p, "--graph", help=".egraph file")
    _add(p, "--result", help="one *.result.yaml")
    _add(p, "--layer", type=int, help="graph layer position (0 = bottom)")
    _add(p, "--raster", help="WIDTHxHEIGHT, e.g. 224x224")
    _add(p, "--fraction", type=float, help="top fraction of patterns by score")
    _add(p, "--out", help="output .pgm")
    _add(p, "--figure", action=argparse.BooleanOptionalAction,
         help="write a PNG beside the PGM")

    p = sub.add_parser("patches", help="top-energy patch boxes for one node")
    _add(p, "--results", help="directory of *.result.yaml")
    _add(p, "--node", help="node id as layer:channel:slot")
    _add(p, "--fraction", type=float, help="energy fraction")
    _add(p, "--patch-px", type=int, help="square patch side in pixels")
    _add(p, "--out", help="output TSV")
    _add(p, "--figure", action=argparse.BooleanOptionalAction,
         help="write a PNG beside the TSV")

    p = sub.add_parser("aog-build", help="build a part AOG from annotations")
    _add(p, "--results", help="directory of *.result.yaml")
    _add(p, "--annotations", help="annotations YAML (one per template)")
    _add(p, "--retrieval-k", type=int, help="patterns retrieved per template")
    _add(p, "--sigma-retrieve", type=float, help="retrieval Gaussian width")
    _add(p, "--out", help="output .aog")

    p = sub.add_parser("aog-localize", help="localize the part on new images")
    _add(p, "--aog", help=".aog file")
    _add(p, "--results", help="directory of *.result.yaml")
    _add(p, "--out", help="output predictions YAML")

    p = sub.add_parser("aog-eval", help="score predictions against truth")
    _add(p, "--pred", help="predictions YAML")
    _add(p, "--truth", help="landmarks YAML with the true part positions")
    _add(p, "--part", help="landmark name (default: the predictions' part)")
    _add(p, "--out", help="output TSV")
    _add(p, "--figure", action=argparse.BooleanOptionalAction,
         help="write a PNG beside the TSV")

    for sp in sub.choices.values():
        _add(sp, "--config", help="YAML file supplying any of the flags")
    return parser


def run(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args, _DEFAULTS[args.subcommand])
        _HANDLERS[args.subcommand](cfg)
        return 0
    except (ParseError, ValidationError, ConfigError, MetricError) as exc:
        kind = type(exc).__name__
        print(
            f"partgraph-error\tcode={EXIT_SCHEMA}\tkind={kind}\tmessage={exc}",
            file=sys.stderr,
        )
        return EXIT_SCHEMA
    except (InputError, FileNotFoundError, OSError) as exc:
        kind = type(exc).__name__
        print(
            f"partgraph-error\tcode={EXIT_IO}\tkind={kind}\tmessage={exc}",
            file=sys.stderr,
        )
        return EXIT_IO


def run_from_manifest(path: str | Path) -> int:
    """Re-run a recorded command; outputs land on the recorded paths."""
    doc = read_manifest(path)
    subcommand = doc["subcommand"]
    if subcommand not in _HANDLERS:
        raise ConfigError(f"manifest names unknown subcommand {subcommand!r}")
    _HANDLERS[subcommand](doc["config"])
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
