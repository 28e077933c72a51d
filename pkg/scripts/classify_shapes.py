"""Sphere / box / cylinder classification with a PointNet-style network, with and without PAM.

    python scripts/classify_shapes.py --out runs/classify
"""
import argparse
import logging
from pathlib import Path

from pampose.harness.classify import ClassifyConfig, run_classification


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="runs/classify")
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    report = run_classification(ClassifyConfig(seed=args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "classify_report.json").write_text(report.to_json() + "\n")
    (out / "classify_report.csv").write_text(report.to_csv())
    for arm in report.arms:
        cited = report.reference.get(arm.arm)
        print(f"{arm.arm:>7}  held-out accuracy {100 * arm.accuracy:.1f}%  params {arm.params}  "
              f"({arm.seconds:.0f}s; full-scale reference {cited}%)")


if __name__ == "__main__":
    main()
