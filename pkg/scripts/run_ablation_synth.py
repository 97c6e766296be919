"""Original Q-matrix vs. every KG method on synthetic chain data.

Generates the dataset, splits it, and runs ``pqrlka ablate`` once per seed,
then prints the per-method mean test AUC. Expect about 15 minutes per seed
with full-size settings on one core.

    python3 scripts/run_ablation_synth.py --out runs/ablation --seeds 0 1 2
"""
import argparse
import csv
from collections import defaultdict
from pathlib import Path

from pqrlka.cli import main as pqrlka

ROOT = Path(__file__).resolve().parents[1]


def run(*argv):
    code = pqrlka(list(argv))
    if code:
        raise SystemExit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--config", default=str(ROOT / "configs/synth.ini"))
    ap.add_argument("--arms", help="comma-separated subset of arms")
    args = ap.parse_args()

    aucs = defaultdict(list)
    for seed in args.seeds:
        out = Path(args.out) / f"seed{seed}"
        common = ["--out", str(out), "--config", args.config, "--seed", str(seed)]
        run("synth", *common)
        run("ingest", *common)
        run("ablate", *common, *(["--arms", args.arms] if args.arms else []))
        with open(out / "ablation.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                aucs[row["method"]].append(float(row["auc"]))

    print(f"{'method':<10} {'mean_auc':>9}  per-seed")
    for method, values in aucs.items():
        print(f"{method:<10} {sum(values) / len(values):9.4f}  " + " ".join(f"{v:.4f}" for v in values))


if __name__ == "__main__":
    main()
