"""Command-line pipeline: render | index | classify | evaluate | bench.

One JSON config file with sections scene / encoder / classifier / paths
drives everything; a few flags (--seed, --k, --threads) override file values.
Exit codes: 0 success, 1 user or data error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from . import bench as bench_mod
from .camera import CameraPose, PerturbationSpec
from .encoder import EncoderError, EncoderManifest, load_manifest, make_encoder, preprocess
from .evaluate import (
    DatasetError,
    evaluate,
    load_dataset,
    report_csv,
    report_json,
)
from .geometry import MeshError, load_mesh
from .imageio import ImageDecodeError, load_png, save_png
from .knn import BatchClassifyError, ClassifierConfig, classify
from .rasterize import RenderConfig, render
from .store import IndexFormatError, ReferenceIndex, load_index
from .synth import RoiError, reference_poses


class ConfigError(ValueError):
    """Malformed or incomplete pipeline configuration."""


USER_ERRORS = (
    ConfigError,
    MeshError,
    RoiError,
    IndexFormatError,
    EncoderError,
    ImageDecodeError,
    DatasetError,
    BatchClassifyError,
    ValueError,
    OSError,
)


def _load_config(path: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    raw["_dir"] = Path(path).parent
    return raw


def _section(config: dict, name: str) -> dict:
    if name not in config:
        raise ConfigError(f"config is missing the {name!r} section")
    section = config[name]
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return section


def _resolve(config: dict, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else config["_dir"] / p


def _path_entry(config: dict, key: str) -> Path:
    paths = _section(config, "paths")
    if key not in paths:
        raise ConfigError(f"config is missing paths.{key}")
    return _resolve(config, paths[key])


def _scene(config: dict, seed_override: int | None):
    scene = _section(config, "scene")
    try:
        classes = scene["classes"]
        cam = scene.get("camera", {})
        pert = dict(scene.get("perturbation", {}))
        rend = dict(scene.get("render", {}))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"scene section malformed: {exc}") from exc
    if not isinstance(classes, dict) or not classes:
        raise ConfigError("scene.classes must map class names to mesh entries")

    meshes = {}
    albedo = {}
    for label, entry in classes.items():
        if isinstance(entry, str):
            entry = {"mesh": entry}
        if "mesh" not in entry:
            raise ConfigError(f"scene.classes.{label}: missing mesh path")
        mesh_path = _resolve(config, entry["mesh"])
        if not mesh_path.is_file():
            raise ConfigError(f"scene.classes.{label}: mesh file not found: {mesh_path}")
        meshes[label] = load_mesh(mesh_path)
        if "albedo" in entry:
            albedo[label] = tuple(entry["albedo"])

    base = CameraPose(
        position=tuple(cam.get("position", (0.0, -2.5, 0.8))),
        target=tuple(cam.get("target", (0.0, 0.0, 0.0))),
        up=tuple(cam.get("up", (0.0, 0.0, 1.0))),
        vertical_fov=float(cam.get("vertical_fov", 40.0)),
    )
    if seed_override is not None:
        pert["seed"] = seed_override
    spec = PerturbationSpec(
        max_yaw=float(pert.get("max_yaw", 0.0)),
        max_pitch=float(pert.get("max_pitch", 0.0)),
        max_roll=float(pert.get("max_roll", 0.0)),
        distance_jitter=float(pert.get("distance_jitter", 0.0)),
        seed=int(pert.get("seed", 0)),
    )
    rc_kwargs = {}
    for key in (
        "width",
        "height",
        "images_per_class",
        "ambient",
        "roi_min_fraction",
    ):
        if key in rend:
            rc_kwargs[key] = rend[key]
    for key in ("background_color", "light_direction", "albedo_default"):
        if key in rend:
            rc_kwargs[key] = tuple(rend[key])
    render_config = RenderConfig(albedo=albedo, **rc_kwargs)
    return meshes, base, spec, render_config


def _encoder_manifest(config: dict) -> EncoderManifest:
    section = _section(config, "encoder")
    if "manifest" in section:
        return load_manifest(_resolve(config, section["manifest"]))
    kwargs = dict(section)
    if "model_path" in kwargs and kwargs["model_path"]:
        kwargs["model_path"] = str(_resolve(config, kwargs["model_path"]))
    return EncoderManifest(**kwargs)


def _classifier_config(config: dict, k_override: int | None) -> ClassifierConfig:
    section = config.get("classifier", {})
    k = k_override if k_override is not None else int(section.get("k", 5))
    return ClassifierConfig(k=k)


def cmd_render(args) -> int:
    config = _load_config(args.config)
    meshes, base, spec, render_config = _scene(config, args.seed)
    out_dir = _path_entry(config, "reference_dir")

    draws = reference_poses(meshes, base, spec, render_config)
    entries = []
    for draw in draws:
        image = render(meshes[draw.label], draw.pose, render_config, draw.label)
        image.seed = draw.seed
        rel = f"{draw.label}/{draw.draw_index:03d}_{draw.seed:016x}.png"
        save_png(image, out_dir / rel)
        entries.append(
            {
                "file": rel,
                "label": draw.label,
                "draw_index": draw.draw_index,
                "stream_seed": draw.seed,
                "attempts": draw.attempts,
                "roi": draw.roi,
                "pose": {
                    "position": list(draw.pose.position),
                    "target": list(draw.pose.target),
                    "up": list(draw.pose.up),
                    "vertical_fov": draw.pose.vertical_fov,
                },
            }
        )
    manifest = {
        "seed": spec.seed,
        "width": render_config.width,
        "height": render_config.height,
        "images_per_class": render_config.images_per_class,
        "roi_min_fraction": render_config.roi_min_fraction,
        "images": entries,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"rendered {len(entries)} images ({len(meshes)} classes) -> {out_dir}")
    return 0


def cmd_index(args) -> int:
    config = _load_config(args.config)
    manifest = _encoder_manifest(config)
    ref_dir = _path_entry(config, "reference_dir")
    index_path = _path_entry(config, "index")
    if not ref_dir.is_dir():
        raise ConfigError(f"paths.reference_dir does not exist: {ref_dir}")

    dataset = load_dataset(ref_dir)
    backend = make_encoder(manifest)
    index = ReferenceIndex()
    for path, label in dataset.items:
        embedding = backend.encode(preprocess(load_png(path), manifest))
        index.add(embedding, label, source=str(path.relative_to(ref_dir)))
    index.save(index_path)
    stats = index.stats()
    print(f"indexed {stats['count']} references (dim {stats['dim']}) -> {index_path}")
    for label in sorted(stats["labels"]):
        print(f"  {label}: {stats['labels'][label]}")
    return 0


def _existing_index_path(config: dict) -> Path:
    path = _path_entry(config, "index")
    if not path.is_file():
        raise ConfigError(f"paths.index: index file not found: {path}")
    return path


def cmd_classify(args) -> int:
    config = _load_config(args.config)
    manifest = _encoder_manifest(config)
    cls_config = _classifier_config(config, args.k)
    index = load_index(_existing_index_path(config))
    backend = make_encoder(manifest)

    embedding = backend.encode(preprocess(load_png(args.image), manifest))
    prediction = classify(embedding, index, cls_config)

    if args.json:
        doc = {
            "label": prediction.label,
            "votes": prediction.votes,
            "margin": prediction.margin,
            "effective_k": prediction.effective_k,
            "neighbors": [
                {"id": n.id, "label": n.label, "similarity": n.similarity}
                for n in prediction.neighbors
            ],
        }
        print(json.dumps(doc, indent=2))
    else:
        print(f"label: {prediction.label}")
        votes = " ".join(f"{l}={c}" for l, c in sorted(prediction.votes.items()))
        print(f"votes: {votes}  (k={prediction.effective_k})")
        for rank, n in enumerate(prediction.neighbors, start=1):
            print(f"  rank {rank}: id={n.id} label={n.label} similarity={n.similarity:.6f}")
        print(f"margin: {prediction.margin:.6f}")
    return 0


def cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    manifest = _encoder_manifest(config)
    cls_config = _classifier_config(config, args.k)
    index = load_index(_existing_index_path(config))
    report_dir = _path_entry(config, "report_dir")

    dataset = load_dataset(args.dataset)
    report = evaluate(
        dataset, index, manifest, cls_config, permissive=args.permissive, workers=args.threads
    )

    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / "report.json").write_text(report_json(report))
    (report_dir / "report.csv").write_text(report_csv(report))
    if args.json:
        print(report_json(report), end="")
    else:
        for label in report.confusion.labels:
            m = report.per_class[label]
            print(
                f"  {label}: precision={m.precision:.4f} recall={m.recall:.4f} f1={m.f1:.4f}"
            )
        print(f"macro-F1: {report.macro_f1:.4f} ({report.item_count} items)")
    return 0


def cmd_bench(args) -> int:
    index = load_index(args.index) if args.index else None
    result = bench_mod.run_bench(
        args.records, args.dim, args.queries, k=args.k or 5, seed=args.seed or 0, index=index
    )
    if not result.oracle_ok:
        print("error: fast search disagreed with the brute-force oracle", file=sys.stderr)
        return 1
    print(f"index: n={result.n} dim={result.dim} k={result.k}")
    print(f"oracle check: OK ({min(bench_mod.ORACLE_SAMPLE, result.queries)} queries)")
    print(f"throughput: {result.queries_per_second:,.0f} queries/s over {result.queries} queries")
    print(
        f"latency: p50={result.latency_p50_ms:.3f}ms "
        f"p90={result.latency_p90_ms:.3f}ms p99={result.latency_p99_ms:.3f}ms"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refsearch",
        description="Render synthetic references, index their embeddings, "
        "classify and evaluate query images by cosine-similarity vote.",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the scene seed")
    parser.add_argument("--k", type=int, default=None, help="override the classifier k")
    parser.add_argument("--threads", type=int, default=None, help="worker threads for batch steps")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render the labeled reference image set")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("index", help="embed reference images into a persisted index")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("classify", help="classify one image against the index")
    p.add_argument("--config", required=True)
    p.add_argument("image")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("evaluate", help="score a labeled dataset, write JSON/CSV reports")
    p.add_argument("--config", required=True)
    p.add_argument("dataset")
    p.add_argument("--json", action="store_true")
    p.add_argument("--permissive", action="store_true", help="skip undecodable images")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("bench", help="measure top-k search throughput on random data")
    p.add_argument("-n", "--records", type=int, required=True)
    p.add_argument("-d", "--dim", type=int, required=True)
    p.add_argument("-q", "--queries", type=int, required=True)
    p.add_argument("--index", default=None, help="reuse an existing index file instead of random data")
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
