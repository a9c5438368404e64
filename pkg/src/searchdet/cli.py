"""Command-line entry points: retrieve, detect, eval, ablate, stability, cache.

Flag values override the config file, which overrides built-in defaults.
Exit codes: 0 success, 2 config problems, 3 retrieval, 4 backends,
5 evaluation/dataset, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

from .config import RunConfig
from .errors import (
    BackendError,
    ConfigError,
    EvaluationError,
    PipelineError,
    RetrievalError,
    SearchDetError,
    ValidationError,
)

EXIT_CODES = {
    ConfigError: 2,
    RetrievalError: 3,
    BackendError: 4,
    ValidationError: 5,
    EvaluationError: 5,
}


def _exit_code(exc: BaseException) -> int:
    seen = set()
    cursor: BaseException | None = exc
    while cursor is not None and id(cursor) not in seen:
        seen.add(id(cursor))
        for etype, code in EXIT_CODES.items():
            if isinstance(cursor, etype):
                return code
        cursor = cursor.__cause__
    return 1


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or YAML config file with RunConfig fields")
    p.add_argument("--n-pos", type=int, choices=range(1, 11), metavar="1..10")
    p.add_argument("--n-neg", type=int, choices=range(0, 11), metavar="0..10")
    p.add_argument("--no-negatives", action="store_true", default=None)
    p.add_argument("--pooling", choices=("attention", "mean"))
    p.add_argument("--no-heatmap", action="store_true", default=None)
    p.add_argument("--heatmap-quantile", type=float)
    p.add_argument("--dominance", type=float)
    p.add_argument("--sigma-mult", type=float)
    p.add_argument("--distance", choices=("normalized", "raw"))
    p.add_argument("--dedupe-iou", type=float)
    p.add_argument("--manifest")
    p.add_argument("--cache-dir")
    p.add_argument("--backend", choices=("real", "fixture"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--context-hint")
    p.add_argument("--fixture-embeddings", help="fixture embedding JSON (fixture backend)")
    p.add_argument("--fixture-masks", help="fixture mask directory (fixture backend)")
    p.add_argument("--engine-dir", help="offline search engine root (folder per query)")
    p.add_argument("--workers", type=int)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {
        "n_pos": args.n_pos,
        "n_neg": args.n_neg,
        "pooling": args.pooling,
        "heatmap_quantile": args.heatmap_quantile,
        "dominance": args.dominance,
        "sigma_mult": args.sigma_mult,
        "distance": args.distance,
        "dedupe_iou": args.dedupe_iou,
        "manifest": args.manifest,
        "cache_dir": args.cache_dir,
        "backend": args.backend,
        "seed": args.seed,
        "out_dir": args.out_dir,
        "context_hint": args.context_hint,
        "fixture_embeddings": args.fixture_embeddings,
        "fixture_masks": args.fixture_masks,
        "engine_dir": args.engine_dir,
        "workers": args.workers,
    }
    if args.no_negatives:
        overrides["use_negatives"] = False
    if args.no_heatmap:
        overrides["use_heatmap"] = False
    return RunConfig.from_sources(args.config, **overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="searchdet",
        description="training-free open-vocabulary detection from web exemplars",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("retrieve", help="fetch and pin exemplar images for a label")
    p.add_argument("--label", required=True)
    p.add_argument("--pin", help="also copy the manifest to this path")
    p.add_argument("--refresh", action="store_true", help="ignore the warm cache")
    _add_config_flags(p)

    p = sub.add_parser("detect", help="detect one label in one image")
    p.add_argument("--label", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--overlay", action="store_true", help="write a heatmap overlay PNG")
    p.add_argument("--debug-dump", action="store_true", help="write selection internals JSON")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate on a COCO-format dataset")
    p.add_argument("--dataset", required=True, help="COCO annotation JSON")
    p.add_argument("--images-root", help="base dir for image paths (default: dataset dir)")
    p.add_argument("--context-hints", help="JSON file mapping category name to context hint")
    p.add_argument("--ablate", choices=("all",), help="run the full ablation grid instead")
    p.add_argument("--include-masks", action="store_true")
    _add_config_flags(p)

    p = sub.add_parser("ablate", help="run the ablation grid on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--images-root")
    p.add_argument("--context-hints")
    _add_config_flags(p)

    p = sub.add_parser("stability", help="mAP vs exemplar count on the synthetic benchmark")
    p.add_argument("--counts", default="1-10", help="count range, e.g. 1-10 or 1,3,5")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--benchmark-seed", type=int, default=0)
    _add_config_flags(p)

    p = sub.add_parser("cache", help="inspect or clear the retrieval cache")
    p.add_argument("action", choices=("inspect", "clear"))
    p.add_argument("--yes", action="store_true", help="confirm clearing")
    _add_config_flags(p)

    return parser


def _cmd_retrieve(args) -> int:
    from .pipeline import build_llm_client, build_search_engine
    from .retrieval import LabelQuery, fetch_exemplars, pin_manifest, query_cache_dir

    config = _config_from_args(args)
    query = LabelQuery(label=args.label, context_hint=config.context_hint)
    exemplars = fetch_exemplars(
        query,
        n_pos=config.n_pos,
        n_neg=config.n_neg if config.use_negatives else 0,
        engine=build_search_engine(config),
        cache_dir=config.cache_dir,
        llm=build_llm_client(config),
        negative_query_count=config.negative_query_count,
        download_workers=config.download_workers,
        refresh=args.refresh,
    )
    set_dir = query_cache_dir(config.cache_dir, query)
    print(f"label: {exemplars.label}")
    print(f"positives: {len(exemplars.positives)}  negatives: {len(exemplars.negatives)}")
    print(f"negative queries: {', '.join(exemplars.negative_queries) or '(none)'}")
    print(f"manifest: {set_dir / 'manifest.json'}")
    if args.pin:
        pin_manifest(exemplars, args.pin)
        print(f"pinned: {args.pin}")
    return 0


def _cmd_detect(args) -> int:
    from .pipeline import run_detect

    config = _config_from_args(args)
    out_dir = Path(config.out_dir)
    result = run_detect(
        args.image,
        args.label,
        config,
        out_dir=out_dir,
        write_overlay=args.overlay,
        debug_dump=args.debug_dump,
    )
    print(f"{len(result.detections)} detection(s) -> {out_dir / 'detections.json'}")
    for det in result.detections:
        print(f"  bbox={det.bbox} score={det.score:.4f}")
    return 0


def _load_context_hints(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ConfigError("context-hints file must map category names to hints")
    return {str(k): str(v) for k, v in doc.items()}


def _dataset_runner(args, config: RunConfig):
    from .evaluation import load_ground_truth
    from .images import Raster
    from .pipeline import build_embedding_backend, build_llm_client, build_search_engine, build_segmentation_backend
    from .retrieval import LabelQuery, fetch_exemplars

    gt = load_ground_truth(args.dataset)
    images_root = Path(args.images_root or Path(args.dataset).parent)
    hints = _load_context_hints(getattr(args, "context_hints", None))

    embedder = build_embedding_backend(config)
    segmenter = build_segmentation_backend(config)
    engine = build_search_engine(config)
    llm = build_llm_client(config)

    def image_loader(image_id: int) -> Raster:
        return Raster.from_file(images_root / gt.images[image_id].path)

    def exemplar_provider(name: str):
        query = LabelQuery(label=name, context_hint=hints.get(name, config.context_hint))
        exemplars = fetch_exemplars(
            query,
            n_pos=config.n_pos,
            n_neg=config.n_neg if config.use_negatives else 0,
            engine=engine,
            cache_dir=config.cache_dir,
            llm=llm,
            negative_query_count=config.negative_query_count,
            download_workers=config.download_workers,
        )
        return exemplars.load_positives(), exemplars.load_negatives()

    return gt, image_loader, exemplar_provider, embedder, segmenter


def _write_report(run, gt, out_dir: Path, config: RunConfig) -> None:
    from .experiments import plot_pr_curves
    from .pipeline import canonical_json

    out_dir.mkdir(parents=True, exist_ok=True)
    doc = run.report.to_dict()
    doc["incomplete"] = run.incomplete
    doc["errors"] = {str(k): v for k, v in sorted(run.errors.items())}
    doc["config_sha256"] = config.config_hash()
    (out_dir / "report.json").write_text(canonical_json(doc))
    (out_dir / "report.csv").write_text(run.report.to_csv())
    (out_dir / "detections.json").write_text(canonical_json(run.detections))
    plot_pr_curves(run.report, gt, out_dir / "pr_curves.png")


def _cmd_eval(args) -> int:
    from .experiments import ABLATIONS, ablation_table, evaluate_dataset

    config = _config_from_args(args)
    gt, image_loader, exemplar_provider, embedder, segmenter = _dataset_runner(args, config)
    out_dir = Path(config.out_dir)

    if getattr(args, "ablate", None) == "all" or args.command == "ablate":
        reports = {}
        for name, overrides in ABLATIONS.items():
            run = evaluate_dataset(
                gt, image_loader, exemplar_provider, embedder, segmenter,
                config.replace(**overrides),
            )
            reports[name] = run.report
            _write_report(run, gt, out_dir / name, config.replace(**overrides))
        table = ablation_table(reports)
        (out_dir / "ablations.txt").write_text(table + "\n")
        print(table)
        return 0

    run = evaluate_dataset(
        gt, image_loader, exemplar_provider, embedder, segmenter, config,
        include_masks=getattr(args, "include_masks", False),
    )
    _write_report(run, gt, out_dir, config)
    print(f"map50={run.report.map50:.4f} map5095={run.report.map5095:.4f}")
    if run.incomplete:
        print("warning: run interrupted; report marked incomplete", file=sys.stderr)
    return 0


def _parse_counts(spec: str) -> list[int]:
    if "-" in spec and "," not in spec:
        lo, hi = spec.split("-", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in spec.split(",") if x.strip()]


def _cmd_stability(args) -> int:
    from .experiments import plot_similarity_matrix, plot_stability_curve, save_json, stability_study
    from .synthetic import generate_benchmark

    config = _config_from_args(args)
    bench = generate_benchmark(args.benchmark_seed)
    report = stability_study(
        bench, config, counts=_parse_counts(args.counts), repeats=args.repeats,
        base_seed=config.seed,
    )
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_json(report.to_dict(), out_dir / "stability.json")
    plot_stability_curve(report, out_dir / "stability_curve.png")
    if report.similarity_matrix is not None:
        plot_similarity_matrix(report.similarity_matrix, out_dir / "similarity_matrix.png")
    print(f"spearman rho = {report.spearman_rho:.4f} -> {out_dir / 'stability.json'}")
    return 0


def _cmd_cache(args) -> int:
    from .retrieval.manifest import MANIFEST_NAME

    config = _config_from_args(args)
    root = Path(config.cache_dir)
    if args.action == "inspect":
        if not root.exists():
            print(f"cache {root} is empty")
            return 0
        total = 0
        for manifest in sorted(root.glob(f"*/{MANIFEST_NAME}")):
            doc = json.loads(manifest.read_text())
            n_files = len(list(manifest.parent.iterdir())) - 1
            total += 1
            print(
                f"{doc['label']!r}: {len(doc['positives'])} pos, {len(doc['negatives'])} neg, "
                f"{n_files} files, engine={doc['engine_id']}, fetched {doc['fetched_at']}"
            )
        print(f"{total} cached quer{'y' if total == 1 else 'ies'} under {root}")
        return 0
    if not args.yes:
        print("refusing to clear without --yes", file=sys.stderr)
        return 2
    if root.exists():
        shutil.rmtree(root)
    print(f"cleared {root}")
    return 0


COMMANDS = {
    "retrieve": _cmd_retrieve,
    "detect": _cmd_detect,
    "eval": _cmd_eval,
    "ablate": _cmd_eval,
    "stability": _cmd_stability,
    "cache": _cmd_cache,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SearchDetError as exc:
        stage = f" [{exc.stage}]" if isinstance(exc, PipelineError) else ""
        print(f"error{stage}: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
