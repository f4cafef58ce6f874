"""Fine-tune a standing policy toward a laterally offset head trajectory."""
import argparse
import json
from dataclasses import replace
from pathlib import Path

from kinres.trainer.experiments import DRIFT_HYPER, run_drift


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--offset", type=float, default=0.3, help="lateral head offset in metres")
    ap.add_argument("--iterations", type=int, default=DRIFT_HYPER.iterations)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/drift")
    args = ap.parse_args()
    res = run_drift(args.offset, replace(DRIFT_HYPER, iterations=args.iterations), args.seed, log=print)
    print(f"head error {res['before']['head_error']:.3f} -> {res['after']['head_error']:.3f} m, "
          f"r_p' {res['before']['r_p_kin']:.3f} -> {res['after']['r_p_kin']:.3f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(json.dumps(res, indent=1) + "\n")


if __name__ == "__main__":
    main()
