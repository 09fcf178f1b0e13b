"""Operator entry points: index, search, serve, simulate, eval, tile.

Machine-readable output goes to stdout (JSON, or CSV where noted), all
diagnostics to stderr. Exit codes: 0 success, 1 domain error, 2 usage.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ENV_CONFIG, load_config
from .errors import NeedleError


def _emit(obj, as_json: bool) -> None:
    print(json.dumps(obj, indent=None if as_json else 2, sort_keys=True))


def _load_engine(args):
    from .engine import RetrievalEngine

    config = load_config(args.config)
    return RetrievalEngine(config)


def cmd_index(args) -> int:
    engine = _load_engine(args)
    summary = engine.index_dataset(force=args.force)
    _emit(
        {
            "images": summary.images,
            "tiles": summary.tiles,
            "stores": summary.stores,
            "errors": summary.errors,
        },
        args.json,
    )
    return 0 if not summary.errors else 1


def cmd_search(args) -> int:
    from .generation import QuerySpec

    if not args.text.strip():
        print("error: query text is empty", file=sys.stderr)
        return 2
    engine = _load_engine(args)
    spec = QuerySpec(query_id="cli", text=args.text, topic=args.topic, k=args.k)
    outcome = engine.search(spec)
    _emit(outcome.to_json_dict(), args.json)
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    engine = _load_engine(args)
    listen = args.listen or engine.config.listen
    print(f"serving on {listen}", file=sys.stderr)
    serve(engine, listen)
    return 0


def cmd_simulate_concentration(args) -> int:
    from .simlab.concentration import CSV_HEADER, concentration_trial

    report = concentration_trial(
        m=args.m,
        gamma=args.gamma,
        delta_true=args.delta,
        trials=args.trials,
        seed=args.seed,
    )
    if args.json:
        _emit(
            {
                "m": report.m,
                "gamma": report.gamma,
                "delta": report.delta_true,
                "trials": report.trials,
                "empirical_prob": report.empirical_prob,
                "bound": report.chernoff_bound,
            },
            True,
        )
    else:
        print(CSV_HEADER)
        print(report.csv_row())
    return 0


def cmd_eval(args) -> int:
    from .simlab.evaluate import EvalSettings, run_synthetic_eval

    settings = EvalSettings(
        world_seed=args.world_seed,
        n_items=args.items,
        n_concepts=args.concepts,
        sigma=args.sigma,
        n_queries=args.queries,
        k=args.k,
    )
    report = run_synthetic_eval(settings, workdir=args.workdir)
    _emit(report, args.json)
    return 0


def cmd_tile(args) -> int:
    from .tiling import (
        TilingConfig,
        build_manifest,
        detect_objects,
        load_image,
        manifest_to_json,
        render_tile_overlay,
        smart_tile,
    )
    from .wire import encode_png

    raster = load_image(args.image)
    config = TilingConfig(d=args.d, min_size=args.min_size, aspect_limit=args.aspect_limit)
    objects = detect_objects(raster)
    h, w = raster.shape[:2]
    tileset = smart_tile((w, h), objects, config, image_id=Path(args.image).stem)
    manifest = manifest_to_json(build_manifest([(0, tileset)]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    (out / f"{stem}_tiles.png").write_bytes(encode_png(render_tile_overlay(raster, tileset)))
    (out / f"{stem}_tiles.json").write_text(json.dumps(manifest, indent=2) + "\n")
    _emit(manifest, args.json)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="needle",
        description="Guide-image Monte Carlo retrieval engine",
    )
    parser.add_argument("--config", help=f"config TOML path (default: ${ENV_CONFIG})")
    parser.add_argument("--json", action="store_true", help="force JSON on stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="tile, embed, and index the dataset")
    p.add_argument("dataset", nargs="?", default="default", help="dataset label")
    p.add_argument("--force", action="store_true", help="rebuild an existing index")
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("search", help="run one query (no guide review)")
    p.add_argument("text")
    p.add_argument("--topic", default="general")
    p.add_argument("--k", type=int, default=60)
    p.add_argument(
        "--feedback",
        choices=["off"],
        default="off",
        help="guide review requires the web UI; the CLI is non-interactive",
    )
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--listen", help="host:port (default from config)")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("simulate", help="statistical harnesses")
    sim_sub = p.add_subparsers(dest="simulation", required=True)
    pc = sim_sub.add_parser("concentration", help="deviation frequency vs the analytic bound")
    pc.add_argument("--m", type=int, required=True)
    pc.add_argument("--gamma", type=float, required=True)
    pc.add_argument("--delta", type=float, required=True)
    pc.add_argument("--trials", type=int, default=10000)
    pc.add_argument("--seed", type=int, default=0)
    pc.set_defaults(fn=cmd_simulate_concentration)

    p = sub.add_parser("eval", help="synthetic-world retrieval quality report")
    p.add_argument("--world-seed", type=int, default=7)
    p.add_argument("--items", type=int, default=1000)
    p.add_argument("--concepts", type=int, default=10)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--queries", type=int, default=50)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--workdir", help="keep artifacts here instead of a temp dir")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("tile", help="write a tile-boundary overlay and manifest")
    p.add_argument("image")
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--min-size", type=int, default=224)
    p.add_argument("--aspect-limit", type=float, default=3.0)
    p.set_defaults(fn=cmd_tile)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NeedleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
