"""Pointwise RealUID distance l_t(x) for 1D Gaussians under several (alpha, beta),
written as one CSV per cell (columns t, x, p_star, p_theta, loss).

With alpha = beta the distance vanishes where only real data lives; with
alpha != beta those points keep a signal.

    python3 scripts/loss_surfaces.py --out-dir runs/surfaces
"""
import argparse
from pathlib import Path

import numpy as np

from realuid import oracle
from realuid.losses import Coeffs

CELLS = [(1.0, 1.0), (0.94, 0.94), (0.94, 0.96), (0.96, 0.94), (1.0, 0.96)]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--mu-star", type=float, default=0.0)
    ap.add_argument("--mu-theta", type=float, default=2.0)
    ap.add_argument("--out-dir", default="runs/surfaces")
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t, x = np.meshgrid(np.linspace(0.05, 0.95, 19), np.linspace(-6, 6, 241), indexing="ij")
    t, x = t.ravel(), x.ravel()
    ps = np.exp(oracle.marginal_logpdf(args.mu_star, t, x))
    pt = np.exp(oracle.marginal_logpdf(args.mu_theta, t, x))
    # the point where generated density is 1e-6 of real density at t = 0.3
    xu = oracle.point_with_ratio(args.mu_star, args.mu_theta, 0.3, 1e-6)
    for a, b in CELLS:
        c = Coeffs(a, b)
        loss = oracle.pointwise_distance(args.mu_star, args.mu_theta, t, x, c)
        rows = np.stack([t, x, ps, pt, loss], 1)
        path = out / f"surface_a{a}_b{b}.csv"
        np.savetxt(path, rows, delimiter=",", header="t,x,p_star,p_theta,loss", comments="", fmt="%.17g")
        lu = oracle.pointwise_distance(args.mu_star, args.mu_theta, 0.3, xu, c)
        total = oracle.loss_by_quadrature("real_uid_distance", args.mu_star, args.mu_theta, c)
        print(f"({a}, {b}): integrated {total:.5f}, l_t at uncovered x={xu:.2f}: {lu:.3e} -> {path}")


if __name__ == "__main__":
    main()
