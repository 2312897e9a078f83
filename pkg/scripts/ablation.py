"""Component ablation and synthetic-length sweep with shared evaluation seeds.

    python scripts/ablation.py --variants full,compress-and-stitch,no-pool,no-fusor
    python scripts/ablation.py --variants tsyn-4,tsyn-8,tsyn-16 --out results/tsyn
"""

import argparse
from pathlib import Path

from vsdistill.dataio import ShapeSpec, generate_moving_shapes
from vsdistill.evalkit import EvalConfig, emit_report, run_ablation, summary_rows
from vsdistill.idtd import DistillConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--variants", default="full,compress-and-stitch,no-pool,no-fusor")
    ap.add_argument("--iterations", type=int, default=DistillConfig.iterations)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="results/ablation")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    train, test = generate_moving_shapes(ShapeSpec(), 0)
    base = DistillConfig(iterations=args.iterations, threads=args.threads)
    rows = run_ablation(base, args.variants.split(","), train, test, EvalConfig(),
                        [int(s) for s in args.seeds.split(",")])
    table = summary_rows(rows)
    emit_report(table, out / "ablation.csv", "csv", "summary")
    for row in table:
        print(f"{row['variant']:22s} {100 * row['mean']:6.2f} +/- {100 * row['std']:5.2f}")


if __name__ == "__main__":
    main()
