"""Train and evaluate the spatial-spectral classifier on a synthetic hypercube.

    python3 scripts/synthetic_classification.py --out runs/synth-cls
"""

import argparse
import json
import time
from pathlib import Path

from ffpnet.config import parse_config
from ffpnet.data import synth_dataset
from ffpnet.runner import run_eval, run_train


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/synth-cls")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch-size", type=int, default=9)
    p.add_argument("--threshold", type=int, default=50)
    p.add_argument("--epochs", type=int, default=50)
    args = p.parse_args()

    out = Path(args.out)
    synth_dataset("hyper", args.seed, out / "data")
    values = json.loads((out / "data" / "config.json").read_text())
    values.update(patch_size=args.patch_size, threshold=args.threshold, epochs=args.epochs, eval_every=0)
    values.setdefault("optimizer", {}).update(kind="adam", lr=1e-3)
    cfg = parse_config(values, out / "data")

    start = time.perf_counter()
    report = run_train(cfg, out / "ckpt")
    record = run_eval(cfg, out / "ckpt", out / "eval")
    print(json.dumps({
        "train_size": report["train_size"], "test_size": report["test_size"],
        "oa": record["oa"], "aa": record["aa"], "kappa": record["kappa"],
        "seconds": round(time.perf_counter() - start, 1),
    }, indent=2))


if __name__ == "__main__":
    main()
