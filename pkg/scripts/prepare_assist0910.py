"""Convert the ASSISTments 2009-2010 skill-builder export to pipeline inputs.

Reads ``skill_builder_data_corrected.csv`` (or the original export) and writes
``interactions.csv`` and ``qmatrix.csv`` into ``--out``. The export has no
wall-clock column, so ``order_id`` (monotone in time) becomes the timestamp;
the decay term then measures distance in attempts rather than hours.
``ms_first_response`` gives the elapsed time; negative values are left empty.
Rows repeated once per skill of a multi-skill problem are merged.

    python3 scripts/prepare_assist0910.py path/to/skill_builder_data.csv --out data/assist0910
"""
import argparse
import csv
from pathlib import Path


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source")
    ap.add_argument("--out", default="data/assist0910")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    seen = set()
    pairs = set()
    rows = []
    with open(args.source, newline="", encoding="latin-1") as fh:
        for rec in csv.DictReader(fh):
            skill = rec["skill_id"].strip()
            if skill and skill.lower() != "nan":
                pairs.add((rec["problem_id"], skill))
            if rec["order_id"] in seen:
                continue
            seen.add(rec["order_id"])
            ms = rec.get("ms_first_response", "").strip()
            elapsed = f"{int(ms) / 1000:g}" if ms.lstrip("-").isdigit() and int(ms) >= 0 else ""
            rows.append((rec["user_id"], rec["problem_id"], rec["correct"], int(rec["order_id"]), elapsed))

    rows.sort(key=lambda r: r[3])
    with open(out / "interactions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["learner_id", "question_id", "correct", "timestamp", "elapsed_time"])
        w.writerows(rows)
    with open(out / "qmatrix.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["question_id", "skill_id"])
        w.writerows(sorted(pairs))
    print(f"{len(rows)} interactions, {len({p for p, _ in pairs})} questions with skills -> {out}")


if __name__ == "__main__":
    main()
