"""Fit the reduced-width heavy network to one synthetic 64x64 sample.

Trains with the boundary-aware loss and SGD (momentum 0.9, poly decay), then
reports pixel accuracy on the training image with and without erosion.

    python3 scripts/segmentation_memorization.py --steps 200
"""

import argparse
import json
from pathlib import Path

from ffpnet.config import parse_config
from ffpnet.data import synth_dataset
from ffpnet.runner import run_eval, run_train


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/seg-memorize")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--loss", choices=["ce", "ba"], default="ba")
    args = p.parse_args()

    out = Path(args.out)
    synth_dataset("seg", args.seed, out / "data")
    values = json.loads((out / "data" / "config.json").read_text())
    values.update(epochs=args.steps, max_steps=args.steps, batch_size=1, eval_every=0)
    values.setdefault("optimizer", {}).update(kind="sgd", lr=args.lr, momentum=0.9, weight_decay=5e-4, schedule="poly")
    values.setdefault("loss", {}).update(kind=args.loss)
    cfg = parse_config(values, out / "data")

    report = run_train(cfg, out / "ckpt")
    rows = {}
    for r in (0, 3):
        rec = run_eval(cfg, out / "ckpt", out / f"eval-erode{r}", erode=r)
        rows[f"erode={r}"] = {"oa": round(rec["oa"], 4), "miou": round(rec["miou"], 4), "pixels": rec["valid_pixels"]}
    print(json.dumps({"steps": report["steps"], **rows}, indent=2))


if __name__ == "__main__":
    main()
