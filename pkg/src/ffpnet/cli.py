"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 configuration or
validation error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config, parse_config
from .errors import ConfigError, DegenerateInputError, NumericalError, ParseError, UsageError

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ffpnet", description="Feature-fusion pyramid networks on numpy.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset and config template")
    _common(p)
    p.add_argument("--kind", choices=("hyper", "seg"), default="hyper")
    p.add_argument("--size", type=int)
    p.add_argument("--bands", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--sigma", type=float)

    p = sub.add_parser("train", help="train and write a checkpoint")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--full-width", action="store_true", help="use the published channel widths")

    p = sub.add_parser("eval", help="evaluate a checkpoint and write reports")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--erode", type=int, help="boundary erosion radius for segmentation")
    p.add_argument("--split", choices=("train", "test", "all"), default="test")

    p = sub.add_parser("predict", help="write a predicted class map")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", help="FFPT cube (classify) or PPM image (segment)")
    p.add_argument("--labelled-only", action="store_true", help="classify labelled pixels only")

    p = sub.add_parser("gradcheck", help="run the float64 gradient-check suite")
    _common(p)
    p.add_argument("--only", help="comma-separated check names or substrings")
    return parser


def _run_config(args, ckpt: str | None = None) -> RunConfig:
    """``--config`` if given, else the config echoed into the checkpoint."""
    if args.config:
        cfg = load_config(args.config)
    elif ckpt:
        report = Path(ckpt) / "report.json"
        if not report.exists():
            raise ConfigError(f"checkpoint: {report} missing and no --config given")
        cfg = parse_config(json.loads(report.read_text())["config"])
    else:
        raise ConfigError("config: --config is required")
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        cfg.epochs = args.epochs
    if getattr(args, "max_steps", None) is not None:
        cfg.max_steps = args.max_steps
    if getattr(args, "full_width", False):
        cfg.network.full_width = True
    return cfg.validate()


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def cmd_synth(args) -> int:
    from .data import synth_dataset

    params = {k: getattr(args, k) for k in ("size", "bands", "classes", "sigma") if getattr(args, k) is not None}
    seed = 0 if args.seed is None else args.seed
    for path, desc in synth_dataset(args.kind, seed, _out(args, f"synth-{args.kind}"), **params):
        print(f"{path}  {desc}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .runner import run_train

    cfg = _run_config(args)
    out = _out(args, cfg.out or "run")
    report = run_train(cfg, out)
    last = report["epochs"][-1] if report["epochs"] else None
    summary = f"loss {last['loss']:.4f}" if last else "no training epochs"
    final = (last or {}).get("eval") or report["initial"] or {}
    if "oa" in final:
        summary += f", eval OA {final['oa']:.4f}"
    print(f"checkpoint written to {out} ({report['steps']} steps, {summary})")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .runner import run_eval

    cfg = _run_config(args, args.checkpoint)
    out = _out(args, str(Path(args.checkpoint) / "eval"))
    record = run_eval(cfg, args.checkpoint, out, args.erode, args.split)
    print(
        f"OA {record['oa']:.4f}  AA {record['aa']:.4f}  Kappa {record['kappa']:.4f}  "
        f"mean F1 {record['mean_f1']:.4f}  mIoU {record['miou']:.4f}  ({record['valid_pixels']} pixels)"
    )
    print(f"reports written to {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    from .runner import run_predict

    cfg = _run_config(args, args.checkpoint)
    out = _out(args, str(Path(args.checkpoint) / "predict"))
    classmap = run_predict(cfg, args.checkpoint, out, args.input, args.labelled_only)
    print(f"class map {classmap.shape[0]}x{classmap.shape[1]} written to {out / 'classmap.ppm'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .verify import run_suite, select

    if not select(args.only):
        raise ConfigError(f"only: no check matches {args.only!r}")
    ok, rows = run_suite(args.only, 0 if args.seed is None else args.seed)
    if ok:
        print(f"all {len(rows)} checks passed")
        return EXIT_OK
    worst = max(rows, key=lambda r: r[1] / r[2])
    print(f"FAILED: worst offender {worst[0]} (max rel err {worst[1]:.3e} > {worst[2]:.0e})")
    return EXIT_VERIFY


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ParseError, UsageError, DegenerateInputError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
