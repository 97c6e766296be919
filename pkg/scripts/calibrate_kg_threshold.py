"""Pick the adjusted-Kappa threshold on synthetic chain data.

Sweeps thresholds on the training split of several generator seeds and keeps
the one with the best mean edge F1 against the planted graph. Seed 0 is left
out so the acceptance check on it stays a held-out test.

    python3 scripts/calibrate_kg_threshold.py [--seeds 1 2 3 4 5] [--out tests/fixtures/kg_calibration.json]
"""
import argparse
import json
from pathlib import Path

import numpy as np

from pqrlka.dataio import filter_dataset, split_sequences
from pqrlka.prereq import binarize_threshold, directionalize, relation_matrix
from pqrlka.synth import SynthConfig, generate_synthetic, kg_recovery_metrics

GRID = np.round(np.arange(0.0, 0.6001, 0.025), 3)


def sweep(seed: int, method: str) -> list[float]:
    ds, q, truth = generate_synthetic(SynthConfig(seed=seed))
    train, _ = split_sequences(filter_dataset(ds, q), 0.2, seed)
    values = directionalize(relation_matrix(train, q, method))
    return [kg_recovery_metrics(binarize_threshold(values, t), truth)[2] for t in GRID]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--method", default="kappa_adj")
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests/fixtures/kg_calibration.json"))
    args = ap.parse_args()

    f1 = np.array([sweep(s, args.method) for s in args.seeds])
    mean = f1.mean(axis=0)
    best = int(np.argmax(mean))  # first maximum, i.e. the lowest threshold on ties
    for t, m, lo in zip(GRID, mean, f1.min(axis=0)):
        print(f"threshold={t:.3f} mean_f1={m:.3f} min_f1={lo:.3f}{'  <- chosen' if t == GRID[best] else ''}")
    record = {
        "method": args.method,
        "generator": "SynthConfig defaults (chain, 8 skills, 100 questions, 500 learners, length 50)",
        "split": "training split, test_fraction 0.2, split seed = generator seed",
        "calibration_seeds": args.seeds,
        "thresholds": GRID.tolist(),
        "mean_f1": np.round(mean, 6).tolist(),
        "chosen_threshold": float(GRID[best]),
    }
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(record, indent=2) + "\n")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
