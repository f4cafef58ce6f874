"""Train the 1-DoF pendulum to track a sinusoid; prints r_p per iteration."""
import argparse
import json
import time
from dataclasses import replace
from pathlib import Path

from kinres.trainer.experiments import PENDULUM_HYPER, run_pendulum


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--iterations", type=int, default=PENDULUM_HYPER.iterations)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--target", type=float, default=0.9)
    ap.add_argument("--out", default="out/pendulum")
    args = ap.parse_args()
    t0 = time.perf_counter()
    res = run_pendulum(replace(PENDULUM_HYPER, iterations=args.iterations, seed=args.seed), args.target, log=print)
    res.pop("policy")
    res["seconds"] = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(json.dumps(res, indent=1) + "\n")
    print(f"reached r_p >= {args.target} at iteration {res['reached_at']} ({res['seconds']:.0f}s)")


if __name__ == "__main__":
    main()
