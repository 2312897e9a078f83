"""IDTD against DM on pixels and a random coreset on the moving-shapes toy set.

    python scripts/toy_benchmark.py --iterations 500 --seeds 0,1,2 --out results/toy
"""

import argparse
import json
import time
from pathlib import Path

from vsdistill.baselines import coreset_random, distill_dm_pixels
from vsdistill.dataio import ShapeSpec, generate_moving_shapes
from vsdistill.evalkit import EvalConfig, emit_report, evaluate_synthetic
from vsdistill.idtd import DistillConfig, distill, write_loss_log


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=DistillConfig.iterations)
    ap.add_argument("--ipc", type=int, default=1)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="results/toy")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    train, test = generate_moving_shapes(ShapeSpec(), args.data_seed)
    cfg = DistillConfig(ipc=args.ipc, iterations=args.iterations, threads=args.threads)
    eval_cfg = EvalConfig()
    rows = []
    for name in ("idtd", "dm-pixels", "random"):
        start = time.time()
        if name == "idtd":
            syn, log = distill(train, cfg, 0)
            write_loss_log(out / "idtd_loss.csv", log)
        elif name == "dm-pixels":
            syn, log = distill_dm_pixels(train, cfg, 0)
            write_loss_log(out / "dm_loss.csv", log)
        else:
            syn = coreset_random(train, args.ipc, 0).subset(train)
        result = evaluate_synthetic(syn, test, eval_cfg, seeds)
        rows.append({"variant": name, "mean": result.mean, "std": result.std, "n_seeds": len(seeds)})
        print(f"{name:10s} {100 * result.mean:6.2f} +/- {100 * result.std:5.2f}   "
              f"per seed {[round(a, 3) for a in result.accuracies]}   {time.time() - start:.0f}s", flush=True)
    emit_report(rows, out / "summary.csv", "csv", "summary")
    (out / "config.json").write_text(json.dumps({"distill": cfg.to_dict(), "eval": eval_cfg.to_dict(),
                                                 "seeds": seeds}, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
