"""Paired PAM ablations: the path sweep (base / CAP / GAP / CAP+GAP) and the reduction-ratio sweep.

Each arm is a full desk-scale training run, so the two sweeps take a while on
one core; ``--workers`` trains arms in parallel threads.

    python scripts/run_ablations.py --out runs/ablations --workers 2
"""
import argparse
import logging

from pampose.harness.ablation import ablation_sweep, path_sweep, ratio_sweep
from pampose.harness.config import RunConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="runs/ablations")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--epochs", type=int, default=30)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = RunConfig(epochs=args.epochs)
    for spec in (path_sweep(base), ratio_sweep(base)):
        result = ablation_sweep(spec, args.out, workers=args.workers)
        print(f"\n{spec.name}")
        print(f"{'arm':>8} {'params':>8} {'delta':>6} {'AUC':>7} {'AUC K=2':>8} {'<2cm':>6} {'cited':>6}")
        for r in result.rows:
            print(f"{r.arm:>8} {r.posenet_params:>8} {r.delta_params:>+6} {100 * r.unrefined_auc:7.2f} "
                  f"{100 * r.refined_auc:8.2f} {100 * r.refined_lt_2cm:6.1f} {r.reference_adds or '':>6}")
        ranked = sorted((r for r in result.rows if r.status == "ok"), key=lambda r: -r.refined_auc)
        print("order by refined AUC:", " > ".join(r.arm for r in ranked))


if __name__ == "__main__":
    main()
