"""Command-line entry point: train, eval, infer, ablate, bench."""

import argparse
import csv
import os
import sys

import numpy as np

from .bench import bench_report
from .data import (epe, fl_all, flow_to_color, read_image, write_flo,
                   write_png)
from .flowhead import d_peak
from .heads import HEAD_KINDS
from .model import load_checkpoint
from .training import (RunConfig, make_dataset, run_ablation, train,
                       write_ablation_csv)


def _parse_size(text):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError("size must look like 64x64")


def _load_config_file(path):
    """Plain key=value lines; '#' starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError("%s:%d: expected key=value" % (path, lineno))
            key, val = (s.strip() for s in line.split("=", 1))
            values[key] = val
    return values


_CONFIG_PARSERS = {
    "seed": int, "lr": float, "lr_decay": float, "ema": float, "iters": int,
    "batch_size": int,
    "max_mag": float, "pool_size": int, "heldout_size": int,
    "eval_every": int, "head": str, "out_dir": str,
    "size": _parse_size,
    "dap": lambda s: s.lower() in ("1", "true", "on", "yes"),
    "context": lambda s: s.lower() in ("1", "true", "on", "yes"),
    "kinds": lambda s: tuple(s.split(",")),
    "heldout_kinds": lambda s: tuple(s.split(",")),
    "loss_weights": lambda s: tuple(float(x) for x in s.split(",")),
    "lr_milestones": lambda s: tuple(float(x) for x in s.split(",")),
}


def build_config(args):
    """Config file first, then CLI flags override."""
    values = {}
    if getattr(args, "config", None):
        for key, raw in _load_config_file(args.config).items():
            if key not in _CONFIG_PARSERS:
                raise ValueError("unknown config key %r" % key)
            values[key] = _CONFIG_PARSERS[key](raw)
    for key in _CONFIG_PARSERS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return RunConfig(**values)


def _add_shared_flags(p):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.add_argument("--dap", choices=["on", "off"], default=None)
    p.add_argument("--head", choices=[h.replace("_", "-") for h in HEAD_KINDS],
                   default=None)
    p.add_argument("--size", type=_parse_size, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lr-decay", dest="lr_decay", type=float, default=None)
    p.add_argument("--ema", type=float, default=None)
    p.add_argument("--pool-size", dest="pool_size", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--max-mag", dest="max_mag", type=float, default=None)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=None)


def _normalize_flags(args):
    if getattr(args, "dap", None) is not None:
        args.dap = args.dap == "on"
    if getattr(args, "head", None) is not None:
        args.head = args.head.replace("-", "_")


def cmd_train(args):
    _normalize_flags(args)
    config = build_config(args)
    result = train(config, log=print)
    if result["diverged"]:
        print("training diverged (%s); best checkpoint kept at %s"
              % (result["diverged"], result["best_checkpoint"]),
              file=sys.stderr)
        return 1
    print("best heldout EPE %.4f" % result["best_epe"])
    print("loss curve: %s" % result["curve"])
    print("checkpoints: %s, %s"
          % (result["best_checkpoint"], result["final_checkpoint"]))
    return 0


def _parse_dataset_spec(text):
    """e.g. 'kind=translation,count=8,seed=1,size=64x64,mag=8'."""
    spec = {"kind": "translation", "count": 8, "seed": 1,
            "size": (64, 64), "mag": 8.0}
    if text:
        for part in text.split(","):
            key, val = part.split("=", 1)
            if key == "kind":
                spec["kind"] = val
            elif key == "count":
                spec["count"] = int(val)
            elif key == "seed":
                spec["seed"] = int(val)
            elif key == "size":
                spec["size"] = _parse_size(val)
            elif key == "mag":
                spec["mag"] = float(val)
            else:
                raise ValueError("unknown dataset key %r" % key)
    return spec


def cmd_eval(args):
    model, meta = load_checkpoint(args.checkpoint)
    spec = _parse_dataset_spec(args.data)
    kinds = (spec["kind"],) if spec["kind"] != "mixed" else \
        ("translation", "smooth")
    samples = make_dataset(spec["seed"], kinds, spec["count"], spec["size"],
                           spec["mag"])
    rows = []
    for i, s in enumerate(samples):
        flow, probs = model.predict(s.img1, s.img2)
        med = float(np.median(d_peak(probs)))
        rows.append((i, epe(flow, s.gt_flow, s.valid),
                     fl_all(flow, s.gt_flow, s.valid), med))
    agg = (np.mean([r[1] for r in rows]), np.mean([r[2] for r in rows]),
           np.median([r[3] for r in rows]))
    print("sample,epe,fl_all,dpeak_median")
    for i, e, f, m in rows:
        print("%d,%.6f,%.6f,%.6f" % (i, e, f, m))
    print("aggregate,%.6f,%.6f,%.6f" % agg)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample", "epe", "fl_all", "dpeak_median"])
            for row in rows:
                writer.writerow(row)
            writer.writerow(["aggregate"] + ["%.6f" % v for v in agg])
    return 0


def cmd_infer(args):
    model, _ = load_checkpoint(args.checkpoint)
    img1 = read_image(args.image1)
    img2 = read_image(args.image2)
    if img1.shape != img2.shape:
        raise ValueError("image sizes differ: %s vs %s"
                         % (img1.shape[1:], img2.shape[1:]))
    flow, _ = model.predict(img1, img2)
    flo_path = args.out_prefix + ".flo"
    png_path = args.out_prefix + "_color.png"
    write_flo(flo_path, flow)
    write_png(png_path, flow_to_color(flow))
    print("wrote %s and %s" % (flo_path, png_path))
    return 0


def cmd_ablate(args):
    _normalize_flags(args)
    config = build_config(args)
    rows = run_ablation(config, log=print)
    os.makedirs(config.out_dir, exist_ok=True)
    out_csv = os.path.join(config.out_dir, "ablation.csv")
    write_ablation_csv(out_csv, rows)
    print("head,heldout_epe")
    for head, value, _ in rows:
        print("%s,%r" % (head, value))
    print("wrote %s" % out_csv)
    return 0


def cmd_bench(args):
    rows = bench_report(args.K, args.U, args.V, args.H, args.W)
    header = "kind,params,param_ratio,memory_elements,memory_ratio"
    lines = [header]
    for r in rows:
        lines.append("%s,%d,%d,%d,%d" % (r["kind"], r["params"],
                                         r["param_ratio"], r["memory"],
                                         r["memory_ratio"]))
    text = "\n".join(lines)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return 0


def make_parser():
    parser = argparse.ArgumentParser(
        prog="diclflow",
        description="Coarse-to-fine optical flow with learned matching costs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="toy training on synthetic flow data")
    _add_shared_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on synthetic data")
    p.add_argument("checkpoint")
    p.add_argument("--data", default=None,
                   help="kind=...,count=...,seed=...,size=HxW,mag=...")
    p.add_argument("--out", default=None, help="CSV output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run a checkpoint on an image pair")
    p.add_argument("checkpoint")
    p.add_argument("image1")
    p.add_argument("image2")
    p.add_argument("out_prefix")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ablate", help="train every cost head, compare EPE")
    _add_shared_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="per-layer parameter/memory accounting")
    p.add_argument("--K", type=int, default=64)
    p.add_argument("--U", type=int, default=7)
    p.add_argument("--V", type=int, default=7)
    p.add_argument("--H", type=int, default=64)
    p.add_argument("--W", type=int, default=96)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
