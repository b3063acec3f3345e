"""Train and evaluate on the synthetic noisy-bag benchmark, optionally over several seeds.

    python scripts/run_synthetic.py --seeds 1 2 3 --set d_model=24
"""

import argparse
import time
from pathlib import Path

import numpy as np

from transsa import tensor as T
from transsa.cli import synth_rng
from transsa.config import apply_overrides, read_config_file, TrainConfig
from transsa.evaluator import bag_accuracy, evaluate_settings
from transsa.synthetic import generate_synthetic
from transsa.trainer import train

ROOT = Path(__file__).resolve().parents[1]


def alpha_split(model, data):
    sig, noise = [], []
    for i in range(0, len(data.test_bags), 100):
        chunk = data.test_bags[i:i + 100]
        with T.no_grad():
            out = model.forward(chunk)
        for j, bag in enumerate(chunk):
            a = out.alpha.data[j, :bag.n, bag.label]
            m = np.array(data.signal_mask(bag, "test"))
            sig.extend(a[m])
            noise.extend(a[~m])
    return float(np.mean(sig)), float(np.mean(noise))


def run(cfg: TrainConfig):
    data = generate_synthetic(cfg.synth, synth_rng(cfg.seed), cfg.max_len, cfg.radius, cfg.bag_key)
    t0 = time.perf_counter()
    res = train(cfg, data.train_bags, len(data.vocab), len(data.labels), np.random.default_rng(cfg.seed),
                on_epoch=lambda e, l, lr: print(f"  epoch {e:2d}  loss {l:.4f}  lr {lr:g}", flush=True))
    secs = time.perf_counter() - t0
    acc = bag_accuracy(res.model, data.test_bags)
    sig, noise = alpha_split(res.model, data)
    report = evaluate_settings(res.model, data.test_bags, ns=(100, 200, 300), seed=cfg.seed)
    return acc, sig, noise, report, secs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "synthetic.cfg"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[1])
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    overrides = read_config_file(args.config)
    overrides.update(dict(s.split("=", 1) for s in args.set))
    rows = []
    for seed in args.seeds:
        cfg = apply_overrides(TrainConfig(), {**overrides, "seed": str(seed)}).validate()
        print(f"seed {seed}")
        acc, sig, noise, report, secs = run(cfg)
        rows.append((seed, acc, sig, noise, report.means, secs))
    print("\nseed\taccuracy\talpha_signal\talpha_noise\tP@N one/two/all\tseconds")
    for seed, acc, sig, noise, means, secs in rows:
        pan = "/".join(f"{means[s]:.1f}" for s in ("one", "two", "all"))
        print(f"{seed}\t{acc:.4f}\t{sig:.4f}\t{noise:.4f}\t{pan}\t{secs:.0f}")


if __name__ == "__main__":
    main()
