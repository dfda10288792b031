"""Command-line entry point: degrade, train, extract, eval, flops, bench,
serve. Thin adapters over the library modules.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _parse_resolution(text):
    try:
        w, h = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad resolution {text!r}, want WxH")


def _parse_triple(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected 3 comma-separated values: {text!r}")
    return parts


def build_parser():
    p = argparse.ArgumentParser(prog="cirnas")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("degrade", help="apply the degradation pipeline to PNGs")
    d.add_argument("--in", dest="in_dir", required=True)
    d.add_argument("--out", dest="out_dir", required=True)
    d.add_argument("--levels", type=_parse_triple, required=True,
                   metavar="r,sigma,q", help="physical levels (q=0 for none)")
    d.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="run the architecture search")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", default=None)
    t.add_argument("--checkpoint", default="search.ckpt")
    t.add_argument("--metrics", default=None)

    e = sub.add_parser("extract", help="extract a pruned network")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--task", type=_parse_triple, default=None)
    e.add_argument("--shared", action="store_true")
    e.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="grid evaluation protocol")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True,
                    help="directory of clean PNGs; degraded inputs are derived")
    ev.add_argument("--grid", type=int, default=27)
    ev.add_argument("--report", required=True)
    ev.add_argument("--seed", type=int, default=0)

    f = sub.add_parser("flops", help="FLOPs cost table")
    f.add_argument("--checkpoint", default=None)
    f.add_argument("--resolution", type=_parse_resolution, default=(720, 1280))
    f.add_argument("--effects", type=int, default=27)
    f.add_argument("--blocks", type=int, default=32)
    f.add_argument("--channels", type=int, default=64)

    b = sub.add_parser("bench", help="latency protocol")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--resolution", type=_parse_resolution, default=(256, 256))
    b.add_argument("--reps", type=int, default=5)

    s = sub.add_parser("serve", help="modulation HTTP service")
    s.add_argument("--checkpoint",
                   default=os.environ.get("CIRNAS_CHECKPOINT"))
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--max-dim", type=int, default=4096)
    s.add_argument("--cache-sessions", type=int, default=16)
    s.add_argument("--ui-dir", default=None)
    return p


def cmd_degrade(args):
    from PIL import Image
    from . import degrade
    r, sigma, q = args.levels
    level = degrade.params_to_level(degrade.DegradationParams(
        r=r, sigma=sigma, q=None if q == 0 else q))
    os.makedirs(args.out_dir, exist_ok=True)
    names = [n for n in sorted(os.listdir(args.in_dir))
             if n.lower().endswith(".png")]
    if not names:
        print(f"no PNG files in {args.in_dir}", file=sys.stderr)
        return EXIT_DATA
    manifest = []
    for i, name in enumerate(names):
        img = np.asarray(Image.open(os.path.join(args.in_dir, name)).convert("RGB"))
        out = degrade.degrade(img, level, args.seed + i)
        Image.fromarray(out).save(os.path.join(args.out_dir, name))
        manifest.append({"source_id": name, "level_in": [float(v) for v in level],
                         "level_gt": [0.0, 0.0, 0.0],
                         "task": [float(v) for v in level],
                         "seed": args.seed + i, "strategy": -1})
    with open(os.path.join(args.out_dir, "manifest.jsonl"), "w") as f:
        for rec in manifest:
            f.write(json.dumps(rec) + "\n")
    return EXIT_OK


def cmd_train(args):
    from .trainer import TrainConfig, run_search
    cfg = TrainConfig.from_toml(args.config)
    run_search(cfg, checkpoint_path=args.checkpoint, resume=args.resume,
               metrics_path=args.metrics, progress=True)
    return EXIT_OK


def cmd_extract(args):
    from .extract import Extractor
    ex = Extractor.from_checkpoint(args.checkpoint)
    if args.shared:
        spec = ex.shared_spec()
        if spec.shared_prefix_len == 0:
            print("empty prefix")
            ex.save_pruned(args.out, spec)
            return EXIT_OK
    elif args.task is not None:
        spec = ex.spec_for_task(args.task)
    else:
        print("need --task or --shared", file=sys.stderr)
        return EXIT_USAGE
    ex.save_pruned(args.out, spec)
    print(f"prefix length {spec.shared_prefix_len}, "
          f"active channels {spec.active_counts()}")
    return EXIT_OK


def cmd_eval(args):
    from PIL import Image
    from . import degrade, metrics
    from .extract import Extractor
    ex = Extractor.from_checkpoint(args.checkpoint)
    names = [n for n in sorted(os.listdir(args.data))
             if n.lower().endswith(".png")]
    if not names:
        print(f"no PNG files in {args.data}", file=sys.stderr)
        return EXIT_DATA
    levels = metrics.eval_grid_levels()[:args.grid]
    test_set = []
    for i, name in enumerate(names):
        clean = np.asarray(Image.open(os.path.join(args.data, name)).convert("RGB"))
        level = levels[(i % (len(levels) - 1)) + 1]  # skip the clean point
        test_set.append((name, degrade.degrade(clean, level, args.seed + i), clean))
    report = metrics.eval_grid(ex, test_set, tasks=levels)
    metrics.write_report(args.report, report)
    print(metrics.render_summary(report))
    return EXIT_OK


def cmd_flops(args):
    from . import cost as costmod
    from .supernet import SuperNetConfig
    eps = 0.0
    masks = None
    prefix_len = 0
    if args.checkpoint:
        from .extract import Extractor
        ex = Extractor.from_checkpoint(args.checkpoint)
        cfg = ex.model.config
        eps = float(ex.controller.flops())
        spec = ex.shared_spec()
        prefix_len = spec.shared_prefix_len
        masks = ex.spec_for_task([1.0, 1.0, 1.0]).masks if prefix_len else None
    else:
        cfg = SuperNetConfig(blocks=args.blocks, channels=args.channels)
    h, w = args.resolution
    report = costmod.cost_report(cfg, (h, w), masks, prefix_len, eps)
    m = args.effects
    print(f"{'':<24}{w}x{h}")
    print(f"{'FLOPs first (G)':<24}{report.flops_first / 1e9:.1f}")
    print(f"{'FLOPs amortized M=' + str(m) + ' (G)':<24}"
          f"{report.flops_amortized(m) / 1e9:.1f}")
    print(f"{'prefix (G)':<24}{report.prefix_flops / 1e9:.1f}")
    print(f"{'epsilon (M)':<24}{report.epsilon / 1e6:.3f}")
    print(json.dumps(report.to_dict()))
    return EXIT_OK


def cmd_bench(args):
    from . import cost as costmod
    from .extract import Extractor
    ex = Extractor.from_checkpoint(args.checkpoint)
    h, w = args.resolution
    rng = np.random.default_rng(0)
    x = rng.random((1, 3, h, w), dtype=np.float32)
    task = [0.5, 0.5, 0.5]
    spec = ex.spec_for_task(task)
    state = ex.run_prefix(spec, x)
    stats = costmod.bench_latency(
        lambda: ex.run_full(spec, x, task),
        lambda: ex.run_tail(spec, state, task),
        repetitions=args.reps)
    print(json.dumps(stats))
    return EXIT_OK


def cmd_serve(args):
    import uvicorn
    from .extract import Extractor
    from .service import create_app
    ex = Extractor.from_checkpoint(args.checkpoint) if args.checkpoint else None
    app = create_app(ex, max_dim=args.max_dim,
                     cache_sessions=args.cache_sessions, ui_dir=args.ui_dir)
    uvicorn.run(app, host="127.0.0.1", port=args.port)
    return EXIT_OK


COMMANDS = {
    "degrade": cmd_degrade,
    "train": cmd_train,
    "extract": cmd_extract,
    "eval": cmd_eval,
    "flops": cmd_flops,
    "bench": cmd_bench,
    "serve": cmd_serve,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    from . import tensor as T
    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, IsADirectoryError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except T.NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
