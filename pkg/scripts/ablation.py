"""(alpha, beta) grid on the 1D Gaussian toy: train a teacher once, then run
``realuid ablate`` over the grid and print the summary table.

    python3 scripts/ablation.py --grid 0.94:1.0:0.02 --n-iters 4000 --out runs/ablation
"""
import argparse
import sys
from pathlib import Path

from realuid import cli

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "gauss1d.json"


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default=str(DEFAULT_CONFIG))
    ap.add_argument("--grid", default="0.94:1.0:0.02")
    ap.add_argument("--n-iters", type=int, default=4000)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()
    out = Path(args.out)
    teacher = out / "teacher"
    if not (teacher / "checkpoints" / "teacher.manifest.json").exists():
        code = cli.main(["train-teacher", "--config", args.config, "--out", str(teacher)])
        if code:
            sys.exit(code)
    code = cli.main(["ablate", "--config", args.config, "--teacher", str(teacher), "--grid", args.grid,
                     "--n-iters", str(args.n_iters), "--threads", str(args.threads), "--out", str(out / "grid")])
    if code:
        sys.exit(code)
    print((out / "grid" / "ablation.csv").read_text())


if __name__ == "__main__":
    main()
