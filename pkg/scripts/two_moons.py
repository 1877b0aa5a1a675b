"""One-step students vs the 100-step teacher on a 2D toy dataset.

    python3 scripts/two_moons.py --dataset two_moons --out runs/moons.json
"""
import argparse
import json

from realuid.experiments import two_d_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dataset", default="two_moons", choices=["two_moons", "eight_gaussians"])
    ap.add_argument("--teacher-iters", type=int, default=10000)
    ap.add_argument("--distill-iters", type=int, default=20000)
    ap.add_argument("--n-eval", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cells", default="1,1;0.94,0.96", help="alpha,beta pairs separated by ';'")
    ap.add_argument("--out")
    args = ap.parse_args()
    cells = [tuple(float(v) for v in c.split(",")) for c in args.cells.split(";")]
    res = two_d_experiment(args.dataset, args.teacher_iters, args.distill_iters, args.n_eval, args.seed,
                           cells, on_log=lambda m: print(m, flush=True))
    for c in res["cells"]:
        print(f"({c['alpha']}, {c['beta']}): student sw2 {c['sw2']:.4f}, "
              f"ratio to teacher {c['sw2'] / res['teacher_sw2']:.2f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(res, fh, indent=1)


if __name__ == "__main__":
    main()
