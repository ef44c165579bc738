"""Per-iteration meta-training loss for MMN and MPN on the standard fixture.

CSV columns: iter, model, meta_loss, smoothed (trailing window of 50).

    python scripts/training_curve.py --iterations 500 --out results/curve.csv
"""

import argparse
import csv
from pathlib import Path

from metametric.experiments import standard_fixture, training_curves


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results/training_curve.csv")
    args = p.parse_args()

    logs = training_curves(standard_fixture(), iterations=args.iterations, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", "model", "meta_loss", "smoothed"])
        for model, log in logs.items():
            for i, (loss, sm) in enumerate(zip(log.losses, log.smoothed_loss(args.window)), 1):
                w.writerow([i, model, f"{loss:.6f}", f"{sm:.6f}"])
            s = log.smoothed_loss(args.window)
            mid = min(args.window, len(s)) - 1
            print(f"{model}: smoothed loss {s[mid]:.4f} at iter {mid + 1} -> {s[-1]:.4f} at iter {len(s)}")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
