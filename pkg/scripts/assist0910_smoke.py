"""Train and evaluate on prepared ASSISTments 2009-2010 data (loose smoke bound 0.72).

    python3 scripts/prepare_assist0910.py skill_builder_data.csv --out data/assist0910
    python3 scripts/assist0910_smoke.py --data data/assist0910 --epochs 5
"""
import argparse
import shutil
from pathlib import Path

from pqrlka.cli import main as pqrlka

STAGES = ("ingest", "infer-kg", "refine-q", "walks", "embed", "difficulty", "train", "eval")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", default="data/assist0910")
    ap.add_argument("--out", default="runs/assist0910")
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--method", default="kappa_adj")
    ap.add_argument("--threshold", type=float)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("interactions.csv", "qmatrix.csv"):
        shutil.copyfile(Path(args.data) / name, out / name)
    common = ["--out", str(out), "--method", args.method, "--set", f"epochs={args.epochs}", "-v"]
    if args.threshold is not None:
        common += ["--threshold", str(args.threshold)]
    for stage in STAGES:
        code = pqrlka([stage, *common])
        if code:
            raise SystemExit(code)
    auc = float((out / "eval_metrics.csv").read_text().splitlines()[1].split(",")[2])
    print(f"test AUC {auc:.4f} ({'above' if auc >= 0.72 else 'below'} the 0.72 smoke bound)")


if __name__ == "__main__":
    main()
