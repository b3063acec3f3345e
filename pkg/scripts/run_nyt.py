"""Optional extended run on the full NYT (Riedel) corpus.

Needs the train/test files, a text-format word-vector file with d_w=50 and,
ideally, the relation list. This takes many CPU hours with the numpy engine.
Its only built-in check is a soft one: the PR curve is monotone-valid and
mean P@N(All) >= mean P@N(One) on the same checkpoint.

    python scripts/run_nyt.py --train train.txt --test test.txt \
        --embeddings vec.txt --labels relation2id.txt --out-dir runs/nyt --epochs 30
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from transsa.cli import main as cli
from transsa.evaluator import read_curve


def main():
    ap = argparse.ArgumentParser(description="full-scale train + eval")
    ap.add_argument("--train", required=True)
    ap.add_argument("--test", required=True)
    ap.add_argument("--embeddings")
    ap.add_argument("--labels")
    ap.add_argument("--out-dir", default="runs/nyt")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out_dir)
    argv = ["train", "--data", args.train, "--out-dir", str(out), "--epochs", str(args.epochs),
            "--seed", str(args.seed)]
    if args.embeddings:
        argv += ["--embeddings", args.embeddings]
    if args.labels:
        argv += ["--labels", args.labels]
    if cli(argv):
        sys.exit(1)
    if cli(["eval", "--checkpoint", str(out / "checkpoint.bin"), "--data", args.test, "--out-dir", str(out)]):
        sys.exit(1)

    curve = read_curve(out / "curve.tsv")
    monotone = bool(np.all(np.diff(curve.recall) >= 0) and np.all((curve.precision >= 0) & (curve.precision <= 1)))
    means = {}
    for line in (out / "pan.tsv").read_text().splitlines():
        setting, n, value = line.split("\t")
        if n == "mean":
            means[setting] = float(value)
    trend = means.get("all", 0.0) >= means.get("one", 0.0)
    print(f"soft check: curve monotone-valid={monotone}, P@N mean All {means.get('all')} >= One {means.get('one')}: {trend}")
    sys.exit(0 if monotone and trend else 2)


if __name__ == "__main__":
    main()
