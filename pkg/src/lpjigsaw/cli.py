"""Command-line interface: scramble, solve, eval, bench.

All flags can also be supplied from a JSON or TOML config file via
``--config``; explicit command-line flags override config values. Exit
codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import assembly as asm_mod
from . import ingest, metrics, postprocess
from .compat import DistanceTable, build_distance_table
from .core import Assembly

USAGE_ERROR = 1
DATA_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        sys.exit_code_message = message
        print(f"error: {message}", file=sys.stderr)
        sys.exit(USAGE_ERROR)


def _load_config(path: str) -> dict:
    text = Path(path).read_text()
    if path.endswith(".json"):
        return json.loads(text)
    try:
        import tomllib  # py311+
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(text)


def build_parser() -> tuple[_Parser, list[argparse.ArgumentParser]]:
    parser = _Parser(prog="lpjigsaw", description=__doc__)
    parser.add_argument("--config", help="JSON or TOML file with default flag values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scramble", help="cut an image into a scrambled bundle")
    p.add_argument("image")
    p.add_argument("outdir")
    p.add_argument("--piece-px", type=int, default=28)
    p.add_argument("--type", dest="puzzle_type", type=int, choices=(1, 2), default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--crop", action="store_true", help="center-crop to a piece multiple")
    p.add_argument("--no-truth", action="store_true", help="do not write truth.json")

    p = sub.add_parser("solve", help="solve a bundle directory")
    p.add_argument("bundle")
    p.add_argument("--out", default=None, help="output directory (default: bundle dir)")
    p.add_argument("--variant", choices=("free", "constrained", "hybrid"), default="hybrid")
    p.add_argument("--max-iters", type=int, default=10)
    p.add_argument("--reject-tol", type=float, default=1e-5)
    p.add_argument("--trace", action="store_true", default=True)
    p.add_argument("--no-trace", dest="trace", action="store_false")
    p.add_argument("--cache-distances", action="store_true")
    p.add_argument("--anchor-pick", choices=("best-match", "max-aggregate"), default="best-match")
    p.add_argument("--reject-scope", choices=("universe", "active"), default="universe")

    p = sub.add_parser("eval", help="score a solved bundle against its truth")
    p.add_argument("bundle")
    p.add_argument("--assembly", default=None, help="assembly.json path")
    p.add_argument("--components", default=None, help="components.json path")
    p.add_argument("--strict-frame", action="store_true", help="no rotation-frame forgiveness")
    p.add_argument("--csv", default=None, help="also append the report as a CSV row")

    p = sub.add_parser("bench", help="scramble/solve/eval a directory of images")
    p.add_argument("images")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--type", dest="puzzle_type", type=int, choices=(1, 2), default=1)
    p.add_argument("--variant", choices=("free", "constrained", "hybrid"), default="hybrid")
    p.add_argument("--piece-px", type=int, default=28)
    p.add_argument("--noise-grid", default="0", help="comma-separated sigmas")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--seeds", type=int, default=0, help="base seed")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--crop", action="store_true")
    subparsers = list(sub.choices.values())
    return parser, subparsers


def cmd_scramble(args) -> int:
    try:
        image = ingest.load_image(args.image)
    except IOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    try:
        if args.crop:
            image = ingest.center_crop(image, args.piece_px)
        bundle = ingest.slice_image(image, args.piece_px, seed=args.seed)
        if args.puzzle_type == 2:
            bundle = ingest.scramble_type2(bundle, seed=args.seed + 1)
        if args.noise_sigma > 0:
            bundle = ingest.add_noise(bundle, args.noise_sigma, seed=args.seed + 2)
    except (ingest.DimensionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    ingest.save_bundle(bundle, args.outdir, write_truth=not args.no_truth)
    spec = bundle.spec
    print(
        f"bundle: {args.outdir}  type={args.puzzle_type}  {spec.rows}x{spec.cols} pieces "
        f"(P={spec.piece_px}px)  seed={args.seed}  noise_sigma={args.noise_sigma}"
    )
    return 0


def _components_json_obj(state) -> dict:
    comps = [
        {
            "pieces": list(c.pieces),
            "offsets": [[p, c.offsets[p][0], c.offsets[p][1]] for p in c.pieces],
        }
        for c in state.components
    ]
    info = None if state.replica_info is None else state.replica_info.tolist()
    return {"components": comps, "replica_info": info}


def cmd_solve(args) -> int:
    try:
        bundle = ingest.load_bundle(args.bundle, with_truth=False)
    except (ingest.BundleError, IOError, KeyError, ValueError) as exc:
        print(f"error: malformed bundle: {exc}", file=sys.stderr)
        return DATA_ERROR
    outdir = Path(args.out) if args.out else Path(args.bundle)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = asm_mod.VariantConfig(
        mode=args.variant,
        max_iters=args.max_iters,
        reject_tol=args.reject_tol,
        anchor_pick=args.anchor_pick,
        reject_scope=args.reject_scope,
    )

    cache_state = "off"
    table = None
    if args.cache_distances:
        cache_path = Path(args.bundle) / "distances.bin"
        expect_n = len(bundle.pieces) * (4 if bundle.type_tag == ingest.TYPE2 else 1)
        if cache_path.is_file():
            cached = DistanceTable.load(cache_path)
            if cached.n == expect_n and cached.piece_px == bundle.spec.piece_px:
                table, cache_state = cached, "hit"
            else:
                cache_state = "stale"
        else:
            cache_state = "miss"
        if table is None:
            pieces = bundle.pieces
            if bundle.type_tag == ingest.TYPE2:
                pieces, _ = asm_mod.make_replicas(pieces)
            table = build_distance_table(pieces)
            table.save(cache_path)

    t0 = time.time()
    state, assembly = asm_mod.solve_bundle(
        bundle, cfg, table=table, trace_path=outdir / "trace.jsonl" if args.trace else None
    )
    seconds = time.time() - t0
    (outdir / "assembly.json").write_text(json.dumps(assembly.to_json_obj(), indent=2))
    (outdir / "components.json").write_text(json.dumps(_components_json_obj(state)))
    ingest.save_image(outdir / "assembled.png", postprocess.stitch(assembly, bundle))
    summary = {
        "iterations": state.k,
        "converged": state.converged,
        "variant": args.variant,
        "variant_used": state.variant_used,
        "hybrid_costs": state.hybrid_costs,
        "distance_cache": cache_state,
        "seconds": round(seconds, 3),
    }
    print(json.dumps(summary))
    return 0


class _LoadedState:
    """Duck-typed stand-in for SolverState when scoring from disk."""

    def __init__(self, obj: dict):
        self.components = [
            asm_mod.Component(
                pieces=tuple(c["pieces"]),
                offsets={p: (ox, oy) for p, ox, oy in c["offsets"]},
            )
            for c in obj["components"]
        ]
        info = obj.get("replica_info")
        self.replica_info = None if info is None else np.asarray(info, dtype=np.int64)


def cmd_eval(args) -> int:
    bundle_dir = Path(args.bundle)
    truth_path = bundle_dir / ingest.TRUTH_NAME
    if not truth_path.is_file():
        print("error: truth.json missing; cannot evaluate", file=sys.stderr)
        return DATA_ERROR
    try:
        bundle = ingest.load_bundle(bundle_dir, with_truth=True)
        asm_path = Path(args.assembly) if args.assembly else bundle_dir / "assembly.json"
        assembly = Assembly.from_json_obj(json.loads(asm_path.read_text()))
        comp_path = Path(args.components) if args.components else bundle_dir / "components.json"
        state = _LoadedState(json.loads(comp_path.read_text())) if comp_path.is_file() else None
    except (IOError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    four = bundle.type_tag == ingest.TYPE2 and not args.strict_frame
    report = metrics.score_assembly(assembly, bundle.truth, state=state, four_frames=four)
    print(json.dumps(report.to_row()))
    if args.csv:
        metrics.write_report_csv([report.to_row()], args.csv)
    return 0


def _bench_one(task) -> dict:
    image_path, puzzle_type, variant, piece_px, sigma, run, seed, crop = task
    image = ingest.load_image(image_path)
    if crop:
        image = ingest.center_crop(image, piece_px)
    bundle = ingest.slice_image(image, piece_px, seed=seed)
    if puzzle_type == 2:
        bundle = ingest.scramble_type2(bundle, seed=seed + 1)
    if sigma > 0:
        bundle = ingest.add_noise(bundle, sigma, seed=seed + 2)
    cfg = asm_mod.VariantConfig(mode=variant)
    t0 = time.time()
    state, assembled = asm_mod.solve_bundle(bundle, cfg)
    seconds = time.time() - t0
    report = metrics.score_assembly(
        assembled, bundle.truth, state=state, four_frames=puzzle_type == 2
    )
    return {
        "image": Path(image_path).name,
        "type": puzzle_type,
        "variant": variant,
        "sigma": sigma,
        "run": run,
        "seed": seed,
        "direct": report.direct,
        "neighbor": report.neighbor,
        "largest_component": report.largest_component,
        "perfect": int(report.perfect),
        "iterations": state.k,
        "converged": int(state.converged),
        "seconds": round(seconds, 3),
    }


def cmd_bench(args) -> int:
    image_dir = Path(args.images)
    images = sorted(
        p for p in image_dir.iterdir() if p.suffix.lower() in (".png", ".ppm")
    ) if image_dir.is_dir() else []
    if not images:
        print(f"error: no images found in {args.images}", file=sys.stderr)
        return DATA_ERROR
    sigmas = [float(s) for s in str(args.noise_grid).split(",") if s != ""]

    tasks = []
    usable = []
    for img_idx, path in enumerate(images):
        try:
            ingest.load_image(path)
        except IOError as exc:
            print(f"warning: skipping {path.name}: {exc}", file=sys.stderr)
            continue
        usable.append((img_idx, path))
    if not usable:
        print("error: all images unreadable", file=sys.stderr)
        return DATA_ERROR
    for img_idx, path in usable:
        for sigma in sigmas:
            for run in range(args.runs):
                seed = args.seeds + 1000 * img_idx + 10 * run
                tasks.append(
                    (str(path), args.puzzle_type, args.variant, args.piece_px, sigma, run, seed, args.crop)
                )

    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_bench_one, tasks))
    else:
        rows = [_bench_one(t) for t in tasks]
    rows.sort(key=lambda r: (r["image"], r["sigma"], r["run"]))

    cells: dict[tuple, list[dict]] = {}
    for row in rows:
        cells.setdefault((row["image"], row["sigma"]), []).append(row)
    averages = []
    for (image, sigma), group in sorted(cells.items()):
        averages.append(
            {
                "image": image,
                "type": args.puzzle_type,
                "variant": args.variant,
                "sigma": sigma,
                "run": "mean",
                "seed": "",
                "direct": float(np.mean([g["direct"] for g in group])),
                "neighbor": float(np.mean([g["neighbor"] for g in group])),
                "largest_component": float(np.mean([g["largest_component"] for g in group])),
                "perfect": float(np.mean([g["perfect"] for g in group])),
                "iterations": float(np.mean([g["iterations"] for g in group])),
                "converged": float(np.mean([g["converged"] for g in group])),
                "seconds": float(np.mean([g["seconds"] for g in group])),
            }
        )
    metrics.write_report_csv(rows + averages, args.out)
    print(f"wrote {len(rows)} run rows + {len(averages)} average rows to {args.out}")
    return 0


def main(argv=None) -> int:
    parser, subparsers = build_parser()
    args, _ = parser.parse_known_args(argv)
    if getattr(args, "config", None):
        try:
            defaults = _load_config(args.config)
        except (OSError, ValueError) as exc:
            print(f"error: bad config file: {exc}", file=sys.stderr)
            return USAGE_ERROR
        mapped = {k.replace("-", "_"): v for k, v in defaults.items()}
        parser.set_defaults(**mapped)
        for sp in subparsers:  # defaults must reach the subparser namespaces
            known = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in mapped.items() if k in known})
    args = parser.parse_args(argv)
    handler = {
        "scramble": cmd_scramble,
        "solve": cmd_solve,
        "eval": cmd_eval,
        "bench": cmd_bench,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
