"""Distill a 1D Gaussian teacher N(mu, 1) with UID and RealUID and report the
recovered generator mean.

    python3 scripts/toy_1d.py --mu 2 --n-iters 20000
"""
import argparse

from realuid import experiments
from realuid.losses import Coeffs


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--mu", type=float, default=2.0)
    ap.add_argument("--teacher-iters", type=int, default=5000)
    ap.add_argument("--n-iters", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cells", default="1,1;0.94,0.96", help="alpha,beta pairs separated by ';'")
    args = ap.parse_args()
    log = lambda m: print(m, flush=True)  # noqa: E731
    teacher, _ = experiments.train_gauss_teacher(args.mu, args.teacher_iters, seed=args.seed, on_log=log)
    for cell in args.cells.split(";"):
        a, b = (float(v) for v in cell.split(","))
        c = Coeffs(a, b)
        mode = "uid" if c.data_free else "real_uid"
        run = experiments.distill_gauss(teacher, mode, c, args.mu, args.n_iters, seed=args.seed, on_log=log)
        mean = experiments.generator_mean(run)
        print(f"{mode} ({a}, {b}): generator mean {mean:.4f}, |gap| {abs(mean - args.mu):.4f}, {run.seconds:.0f}s")


if __name__ == "__main__":
    main()
