"""Compare region pyramids on the synthetic segmentation task.

Each pyramid in the ablation table gets the same seed, data and step budget;
the script prints one row per pyramid with parameter count and accuracy.

    python3 scripts/pyramid_ablation.py --steps 100
"""

import argparse
import json
from pathlib import Path

from ffpnet.attention import PIXEL, TABLE5_PYRAMIDS
from ffpnet.config import parse_config
from ffpnet.data import synth_dataset
from ffpnet.runner import run_eval, run_train


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/pyramid-ablation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=100)
    args = p.parse_args()

    out = Path(args.out)
    synth_dataset("seg", args.seed, out / "data")
    base = json.loads((out / "data" / "config.json").read_text())
    print(f"{'pyramid':<24}{'params':>10}{'OA':>8}{'mIoU':>8}")
    for pyramid in TABLE5_PYRAMIDS:
        levels = ["pixel" if g == PIXEL else g for g in pyramid]
        values = json.loads(json.dumps(base))
        values.update(epochs=args.steps, max_steps=args.steps, batch_size=1, eval_every=0)
        values.setdefault("optimizer", {}).update(kind="sgd", lr=0.01, momentum=0.9, schedule="poly")
        values.setdefault("network", {}).update(region_pyramid=levels)
        cfg = parse_config(values, out / "data")
        tag = "-".join(str(g) for g in levels)
        report = run_train(cfg, out / tag)
        rec = run_eval(cfg, out / tag, out / tag / "eval")
        print(f"{str(levels):<24}{report['num_parameters']:>10,}{rec['oa']:>8.4f}{rec['miou']:>8.4f}")


if __name__ == "__main__":
    main()
