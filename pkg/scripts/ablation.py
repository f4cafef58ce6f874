"""Residual versus direct PD-target actions on the sit clips, over seeds."""
import argparse
import json
from dataclasses import replace
from pathlib import Path

from kinres.trainer.experiments import ABLATION_HYPER, ablation_verdict, run_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--iterations", type=int, default=ABLATION_HYPER.iterations)
    ap.add_argument("--threshold", type=float, default=0.8)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="out/ablation")
    args = ap.parse_args()
    hyper = replace(ABLATION_HYPER, iterations=args.iterations, workers=args.workers)
    res = run_ablation(tuple(args.seeds), hyper, args.threshold, log=print)
    verdict = ablation_verdict(res)
    for arms in res:
        for mode, a in arms.items():
            print(f"{mode:8s} seed {a['seed']}: iterations to {args.threshold} = {a['iters_to_threshold']}, "
                  f"final reward {a['rewards'][-1]:.3f}, A_accel {a['a_accel']:.3f}")
    print("verdict", verdict)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(json.dumps({"arms": res, "verdict": verdict}, indent=1) + "\n")


if __name__ == "__main__":
    main()
