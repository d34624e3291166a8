"""Command-line entry point.

Exit codes: 0 success, 1 I/O, 2 config/contract, 3 checkpoint compatibility,
4 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import RunConfig, read_config_text
from .errors import ConfigError, ContractError, TunaError
from .experiment import evaluate_checkpoint, layout_from_config, run_training
from .gradcheck import build_checks, run_gradcheck
from .tuna import count_params

log = logging.getLogger("swin_tuna")


def _load_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg.update_text(read_config_text(args.config))
    for assignment in getattr(args, "set", None) or []:
        cfg.override(assignment)
    return cfg


def _echo(cfg: RunConfig) -> None:
    for line in cfg.dump().splitlines():
        log.info("config %s", line)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    cfg.train(require_seed=True)
    _echo(cfg)
    run = run_training(cfg, args.out)
    for line in run.result.log:
        print(line)
    log.info("checkpoint %s (%d bytes), log %s", run.checkpoint, run.result.checkpoint_bytes, run.log)
    return 0


def _print_metrics(m: dict) -> None:
    print(f"mIoU={m['mIoU']:.6f} mAcc={m['mAcc']:.6f} aAcc={m['aAcc']:.6f}")
    print("class IoU")
    for k, v in enumerate(m["IoU"]):
        print(f"{k} {'nan' if np.isnan(v) else f'{v:.6f}'}")


def cmd_eval(args) -> int:
    metrics = evaluate_checkpoint(args.checkpoint, args.data, force=args.force)
    _print_metrics(metrics)
    return 0


def cmd_gradcheck(args) -> int:
    names = args.module or None
    results = run_gradcheck(names, perturb=args.perturb)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"checked={len(results)} failed={len(failed)}" + (f" ({', '.join(failed)})" if failed else ""))
    return 1 if failed else 0


def cmd_count_params(args) -> int:
    cfg = _load_config(args)
    _echo(cfg)
    layout = layout_from_config(cfg)
    total = count_params(layout, "all")
    trainable = count_params(layout, "trainable")
    adapters = count_params(layout, "adapters_only")
    if args.filter:
        print(count_params(layout, args.filter))
        return 0
    print(f"total={total}")
    print(f"trainable={trainable}")
    print(f"adapters_only={adapters}")
    print(f"trainable_fraction={trainable / total:.4f}")
    return 0


def cmd_data_stats(args) -> int:
    areas = data_mod.image_areas(args.dir)
    if not areas:
        raise data_mod.DataError(f"no images found in {args.dir}")
    print(data_mod.dataset_stats(areas).format())
    return 0


def cmd_gen_synth(args) -> int:
    cfg = _load_config(args)
    _echo(cfg)
    ds = data_mod.generate_synthetic(
        cfg["data.synthetic.num_images"],
        cfg["data.synthetic.size"],
        cfg["head.num_classes"],
        np.random.default_rng(cfg["data.synthetic.seed"]),
        noise=cfg["data.synthetic.noise"],
    )
    data_mod.write_dataset(ds, args.out_dir)
    print(f"wrote {len(ds)} samples to {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swin-tuna", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="config file or bundled config name (e.g. toy, swin_l)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    p = sub.add_parser("train", help="train adapters (or a preset) and write checkpoint + metric log")
    with_config(p)
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--data", help="directory of <id>.img.ppm / <id>.mask.pgm pairs")
    p.add_argument("--force", action="store_true", help="ignore backbone fingerprint mismatch")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--module", action="append", choices=sorted(build_checks()), help="restrict to one op")
    p.add_argument("--perturb", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("count-params", help="print parameter counts")
    with_config(p)
    p.add_argument("--filter", choices=["all", "trainable", "adapters_only"])
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("data-stats", help="resolution range ratio and area Gini of a dataset")
    p.add_argument("dir")
    p.set_defaults(func=cmd_data_stats)

    p = sub.add_parser("gen-synth", help="write a synthetic dataset as PPM/PGM pairs")
    with_config(p)
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_gen_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    log.propagate = False
    try:
        return args.func(args)
    except TunaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
