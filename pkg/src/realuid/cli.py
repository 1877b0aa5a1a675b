"""``realuid`` command line: train-teacher, distill, finetune, ablate, oracle,
sample, eval.

Exit codes: 0 ok, 2 invalid or missing input, 3 training aborted,
4 mode/coefficient inconsistency, 5 oracle verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import engine, evalkit, oracle
from .diffcore import checkpoint as ckpt
from .losses import Coeffs, CoefficientError

log = logging.getLogger("realuid")

EXIT_OK, EXIT_INPUT, EXIT_ABORT, EXIT_COEFF, EXIT_VERIFY = 0, 2, 3, 4, 5


class InputError(Exception):
    pass


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, int(args.threads))
    env = os.environ.get("REALUID_THREADS")
    return max(1, int(env)) if env else 1


def _load_config(args) -> cfgmod.RunConfig:
    if not args.config:
        raise InputError("--config is required")
    cfg = cfgmod.load(args.config)
    if args.seed is not None:
        cfg.train.seed = int(args.seed)
    return cfg


def _out(args) -> engine.RunDir:
    if not args.out:
        raise InputError("--out is required")
    return engine.RunDir(args.out)


def _teacher_prefix(path) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / "checkpoints" / "teacher"
    if not ckpt.exists(p):
        raise InputError(f"teacher checkpoint not found: {path}")
    return p


def _generator_prefix(run, name=None) -> Path:
    p = Path(run)
    if p.is_dir():
        for cand in ([name] if name else ["generator_best", "generator_ema", "generator"]):
            if ckpt.exists(p / "checkpoints" / cand):
                return p / "checkpoints" / cand
        raise InputError(f"no generator checkpoint under {run}")
    if not ckpt.exists(p):
        raise InputError(f"generator checkpoint not found: {run}")
    return p


def _ref_gauss(cfg):
    if cfg.data.name == "gauss1d" and cfg.data.coupling is None:
        return oracle.Gauss1D(cfg.data.params.get("mu", 2.0), cfg.data.params.get("std", 1.0) ** 2)
    return None


def _apply_overrides(cfg: cfgmod.RunConfig, args):
    c = cfg.coeffs
    upd = {k: v for k, v in (("alpha", args.alpha), ("beta", args.beta), ("gamma", args.gamma)) if v is not None}
    if upd:
        cfg.coeffs = replace(c, **upd)
    if args.mode:
        cfg.train.mode = args.mode
    if args.n_iters:
        cfg.train.n_iters = args.n_iters
    if args.k is not None:
        cfg.train.k_fake_steps = args.k


# ---------------------------------------------------------------- commands

def cmd_train_teacher(args) -> int:
    cfg = _load_config(args)
    tcfg = cfg.teacher_config()
    run = _out(args)
    cfg.run = {"command": "train-teacher"}
    cfg.write(run.root / "config.json")
    sampler = cfg.sampler()
    coupling = sampler if cfg.data.coupling is not None else None

    def on_log(rec):
        run.append_metrics(evalkit.MetricsRecord(step=rec["step"], losses={"um_loss": rec["um_loss"]}))

    try:
        net, _ = engine.train_teacher(cfg.path, None if coupling else sampler, tcfg,
                                      coupling_sampler=coupling, on_log=on_log)
    except engine.TrainingAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    ckpt.save(run.checkpoint("teacher"), net, path=cfg.path.to_dict(), seed=tcfg.seed, role="teacher")
    print(f"teacher written to {run.checkpoint('teacher')}")
    return EXIT_OK


def _write_distill_outputs(run: engine.RunDir, res: engine.DistillResult, cfg, seed):
    meta = dict(path=cfg.path.to_dict(), coeffs=cfg.coeffs.to_dict(), seed=seed)
    ckpt.save_generator(run.checkpoint("generator"), res.generator, role="generator", **meta)
    ema_gen = engine.Generator(res.generator.net.copy(), res.generator.residual, res.generator.conditional)
    ema_gen.net.set_flat(res.ema.shadow)
    ckpt.save_generator(run.checkpoint("generator_ema"), ema_gen, role="generator_ema", **meta)
    ema_gen.net.set_flat(res.best_params)
    ckpt.save_generator(run.checkpoint("generator_best"), ema_gen, role="generator_best",
                        best_sliced_w2=res.best_metric if np.isfinite(res.best_metric) else None, **meta)
    ckpt.save(run.checkpoint("fake"), res.fake, role="fake", **meta)


def _run_distill(cfg: cfgmod.RunConfig, teacher, run: engine.RunDir | None, generator=None,
                 finetune_coeffs=None, lr=None):
    dcfg = cfg.distill_config()
    sampler = cfg.sampler()
    on_record = run.append_metrics if run is not None else None
    if finetune_coeffs is not None:
        return engine.finetune(teacher, generator, dcfg, *finetune_coeffs, real_sampler=sampler,
                               lr=lr, on_record=on_record, ref_gauss=_ref_gauss(cfg))
    if cfg.data.coupling is not None or dcfg.mode == "coupling":
        if cfg.data.coupling is None:
            raise CoefficientError("coupling mode needs data.coupling")
        return engine.distill_coupling(teacher, dcfg, sampler, on_record=on_record)
    return engine.distill(teacher, dcfg, sampler, on_record=on_record, ref_gauss=_ref_gauss(cfg))


def _final_samples(run, res, cfg):
    rng = np.random.default_rng([cfg.train.seed, 11])
    n = cfg.eval.n_samples
    cond = None
    if res.generator.conditional:
        _, cond = cfg.sampler()(n, rng)
    run.write_samples("generator", engine.sample_generator(res.generator, n, rng, ema=res.ema, cond=cond))


def cmd_distill(args) -> int:
    cfg = _load_config(args)
    _apply_overrides(cfg, args)
    cfg.distill_config()  # validate before touching the output directory
    if not args.teacher:
        raise InputError("--teacher is required")
    tprefix = _teacher_prefix(args.teacher)
    teacher, _ = ckpt.load(tprefix)
    run = _out(args)
    cfg.run = {"command": "distill", "teacher": str(tprefix.resolve())}
    cfg.write(run.root / "config.json")
    run.metrics_path.write_text("")
    res = _run_distill(cfg, teacher, run)
    _write_distill_outputs(run, res, cfg, cfg.train.seed)
    _final_samples(run, res, cfg)
    (run.root / "status.json").write_text(json.dumps({"status": res.status, "skipped": res.skipped}) + "\n")
    print(f"distill {res.status}: {len(res.records)} evaluations, best sliced_w2 {res.best_metric!r}")
    return EXIT_OK if res.status == "ok" else EXIT_ABORT


def cmd_finetune(args) -> int:
    if not args.source:
        raise InputError("--from is required")
    src = Path(args.source)
    if not (src / "config.json").is_file():
        raise InputError(f"not a run directory: {src}")
    cfg = cfgmod.load(src / "config.json") if not args.config else cfgmod.load(args.config)
    if args.seed is not None:
        cfg.train.seed = int(args.seed)
    if args.n_iters:
        cfg.train.n_iters = args.n_iters
    src_cfg = cfgmod.load(src / "config.json")
    tpath = args.teacher or src_cfg.run.get("teacher")
    if not tpath:
        raise InputError("source run records no teacher; pass --teacher")
    teacher, _ = ckpt.load(_teacher_prefix(tpath))
    gen, _ = ckpt.load_generator(_generator_prefix(src))
    Coeffs(args.alpha_ft, args.beta_ft)  # range check
    run = _out(args)
    cfg.run = {"command": "finetune", "teacher": str(Path(tpath).resolve()), "from": str(src.resolve()),
               "alpha_ft": args.alpha_ft, "beta_ft": args.beta_ft, "lr": args.lr}
    cfg.write(run.root / "config.json")
    run.metrics_path.write_text("")
    res = _run_distill(cfg, teacher, run, generator=gen, finetune_coeffs=(args.alpha_ft, args.beta_ft), lr=args.lr)
    (run.root / "status.json").write_text(json.dumps({"status": res.status, "skipped": res.skipped}) + "\n")
    if res.status != "ok":
        print(f"finetune ({args.alpha_ft}, {args.beta_ft}) diverged", file=sys.stderr)
        return EXIT_ABORT
    _write_distill_outputs(run, res, cfg, cfg.train.seed)
    _final_samples(run, res, cfg)
    print(f"finetune ok, best sliced_w2 {res.best_metric!r}")
    return EXIT_OK


def parse_grid(spec: str) -> list[tuple[float, float]]:
    """``lo:hi:step`` (square grid) or ``a,b;a,b;...`` (explicit cells)."""
    spec = spec.strip()
    try:
        if ":" in spec:
            lo, hi, step = (float(v) for v in spec.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            n = int(round((hi - lo) / step)) + 1
            vals = [round(lo + i * step, 10) for i in range(n)]
            return [(a, b) for a in vals for b in vals]
        cells = []
        for cell in spec.split(";"):
            a, b = (float(v) for v in cell.split(","))
            cells.append((a, b))
        return cells
    except ValueError:
        raise InputError(f"invalid grid spec {spec!r}; use lo:hi:step or a,b;a,b") from None


def _cell_seed(seed, i):
    return int(np.random.SeedSequence(int(seed), spawn_key=(i,)).generate_state(1, np.uint64)[0] >> 1)


def _run_cell(payload):
    cfg_dict, teacher_prefix, alpha, beta, seed, cell_dir = payload
    cfg = cfgmod.from_dict(cfg_dict)
    cfg.coeffs = replace(cfg.coeffs, alpha=alpha, beta=beta)
    cfg.train.seed = seed
    if cfg.train.mode == "uid" and (alpha, beta) != (1.0, 1.0):
        cfg.train.mode = "real_uid"
    try:
        teacher, _ = ckpt.load(teacher_prefix)
        run = engine.RunDir(cell_dir)
        cfg.write(run.root / "config.json")
        run.metrics_path.write_text("")
        res = _run_distill(cfg, teacher, run)
        curve = [(r.step, r.sliced_w2) for r in res.records if r.sliced_w2 is not None]
        return {"alpha": alpha, "beta": beta, "status": res.status, "curve": curve}
    except Exception as exc:  # recorded per cell, the sweep continues
        return {"alpha": alpha, "beta": beta, "status": f"failed: {exc}", "curve": []}


def steps_to_threshold(curve, threshold):
    for step, m in curve:
        if m is not None and m <= threshold:
            return step
    return None


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    if args.n_iters:
        cfg.train.n_iters = args.n_iters
    if not args.teacher:
        raise InputError("--teacher is required")
    if not args.grid:
        raise InputError("--grid is required")
    cells = parse_grid(args.grid)
    for a, b in cells:
        Coeffs(a, b)
    tprefix = _teacher_prefix(args.teacher)
    run = _out(args)
    cfg.run = {"command": "ablate", "teacher": str(tprefix.resolve()), "grid": args.grid}
    cfg.write(run.root / "config.json")
    base = cfg.to_dict()
    payloads = [(base, str(tprefix), a, b, _cell_seed(cfg.train.seed, i),
                 str(run.root / "cells" / f"a{a!r}_b{b!r}")) for i, (a, b) in enumerate(cells)]
    workers = min(_threads(args), len(payloads))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, payloads))
    else:
        results = [_run_cell(p) for p in payloads]
    threshold = args.threshold if args.threshold is not None else cfg.eval.threshold
    if threshold is None:
        base_cell = next((r for r in results if (r["alpha"], r["beta"]) == (1.0, 1.0) and r["curve"]), None)
        threshold = base_cell["curve"][-1][1] if base_cell else None
    with open(run.root / "ablation.csv", "w") as fh:
        fh.write("alpha,beta,metric,steps_to_threshold\n")
        for r in results:
            metric = r["curve"][-1][1] if r["curve"] else float("nan")
            sts = steps_to_threshold(r["curve"], threshold) if threshold is not None else None
            fh.write(f"{r['alpha']!r},{r['beta']!r},{metric!r},{'' if sts is None else sts}\n")
    (run.root / "cells.json").write_text(json.dumps(results, indent=1) + "\n")
    failed = [r for r in results if r["status"] != "ok"]
    for r in failed:
        print(f"cell ({r['alpha']}, {r['beta']}): {r['status']}", file=sys.stderr)
    print(f"ablation: {len(results)} cells, {len(failed)} failed, threshold {threshold!r}")
    return EXIT_OK


def _write_table(out, header, cols):
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(repr(float(v)) for v in row))
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _oracle_grid(args):
    t = np.linspace(args.t_lo, args.t_hi, args.t_points)
    x = np.linspace(args.x_lo, args.x_hi, args.x_points)
    tt, xx = np.meshgrid(t, x, indexing="ij")
    return tt.ravel(), xx.ravel()


def cmd_oracle(args) -> int:
    if args.sub == "verify":
        checks = oracle.verify_suite(seed=args.seed or 0)
        lines = ["check,passed,max_err,tol"]
        for c in checks:
            print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: max_err={c.max_err!r} tol={c.tol!r}")
            lines.append(f"{c.name},{c.passed},{c.max_err!r},{c.tol!r}")
        if args.out:
            Path(args.out).write_text("\n".join(lines) + "\n")
        return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY
    c = Coeffs(args.alpha, args.beta, args.gamma)
    ms, mt = args.mu_star, args.mu_theta
    if args.sub == "distance":
        val = oracle.loss_by_quadrature(args.loss, ms, mt, c)
        if args.out:
            _write_table(args.out, ["mu_star", "mu_theta", "alpha", "beta", "distance"],
                         [[ms], [mt], [c.alpha], [c.beta], [val]])
        print(repr(val))
        return EXIT_OK
    tt, xx = _oracle_grid(args)
    ps = np.exp(oracle.marginal_logpdf(ms, tt, xx))
    pt = np.exp(oracle.marginal_logpdf(mt, tt, xx))
    if args.sub == "surface":
        _write_table(args.out, ["t", "x", "p_star", "p_theta", "loss"],
                     [tt, xx, ps, pt, oracle.pointwise_distance(ms, mt, tt, xx, c)])
    else:  # optimal-fake
        _write_table(args.out, ["t", "x", "f_star", "f_theta", "optimal_fake"],
                     [tt, xx, oracle.uncond_field(ms, tt, xx), oracle.uncond_field(mt, tt, xx),
                      oracle.optimal_fake(ms, mt, tt, xx, c)])
    return EXIT_OK


def cmd_sample(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    if args.teacher:
        teacher, manifest = ckpt.load(_teacher_prefix(args.teacher))
        if teacher.cond_dim:
            raise InputError("ODE sampling of a conditional teacher is not supported")
        samples = engine.sample_teacher_ode(teacher, args.nfe, args.n, rng)
    else:
        if not args.source:
            raise InputError("pass --from RUN_DIR (generator) or --teacher PATH")
        src = Path(args.source)
        name = "generator_ema" if args.ema else "generator"
        prefix = _generator_prefix(src, name) if src.is_dir() else _generator_prefix(src)
        gen, _ = ckpt.load_generator(prefix)
        cond = None
        if gen.conditional:
            if not (src.is_dir() and (src / "config.json").is_file()):
                raise InputError("conditional generator needs its run directory for x_T")
            _, cond = cfgmod.load(src / "config.json").sampler()(args.n, rng)
        samples = engine.sample_generator(gen, args.n, rng, cond=cond)
    if args.out:
        engine.write_csv(args.out, samples)
    else:
        sys.stdout.write(engine.format_csv(samples))
    return EXIT_OK


def cmd_eval(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    if args.samples:
        if not Path(args.samples).is_file():
            raise InputError(f"samples file not found: {args.samples}")
        samples = engine.read_csv(args.samples)
    elif args.gen:
        src = Path(args.gen)
        gen, _ = ckpt.load_generator(_generator_prefix(src, "generator_ema" if src.is_dir() else None))
        if gen.conditional:
            raise InputError("eval of conditional generators is not supported")
        samples = engine.sample_generator(gen, args.n, rng)
    else:
        raise InputError("pass --gen RUN_DIR or --samples CSV")
    if args.ref == "data":
        cfg_path = args.config or (Path(args.gen) / "config.json" if args.gen else None)
        if cfg_path is None or not Path(cfg_path).is_file():
            raise InputError("--ref data needs --config or a run directory with config.json")
        cfg = cfgmod.load(cfg_path)
        ref = cfg.sampler()(args.n, rng)
    else:
        if not args.ref or not Path(args.ref).is_file():
            raise InputError(f"reference samples not found: {args.ref}")
        ref = engine.read_csv(args.ref)
    rec = evalkit.MetricsRecord(step=0)
    rec.sliced_w2 = evalkit.sliced_w2(samples, ref, args.n_projections, rng)
    rec.energy_dist = evalkit.energy_distance(samples, ref)
    print(rec.to_json())
    if args.gen and Path(args.gen).is_dir():
        with open(Path(args.gen) / "eval.jsonl", "a") as fh:
            fh.write(rec.to_json() + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory (or CSV file for oracle/sample)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None, help="worker cap (default: REALUID_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="realuid", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("train-teacher", parents=[common], help="fit the flow-matching teacher")

    def coeff_flags(sp):
        sp.add_argument("--mode", choices=engine.MODES)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--beta", type=float)
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--k", type=int, help="fake steps per generator step")
        sp.add_argument("--n-iters", type=int)

    d = sub.add_parser("distill", parents=[common], help="one-step distillation")
    d.add_argument("--teacher", help="teacher run directory or checkpoint prefix")
    coeff_flags(d)

    f = sub.add_parser("finetune", parents=[common], help="fine-tune a distilled generator")
    f.add_argument("--from", dest="source", help="source distill run directory")
    f.add_argument("--teacher")
    f.add_argument("--alpha-ft", type=float, required=True)
    f.add_argument("--beta-ft", type=float, required=True)
    f.add_argument("--lr", type=float, default=1e-5)
    f.add_argument("--n-iters", type=int)

    a = sub.add_parser("ablate", parents=[common], help="(alpha, beta) grid sweep")
    a.add_argument("--teacher")
    a.add_argument("--grid", help="lo:hi:step or a,b;a,b")
    a.add_argument("--n-iters", type=int)
    a.add_argument("--threshold", type=float)

    o = sub.add_parser("oracle", parents=[common], help="closed-form Gaussian oracle")
    o.add_argument("sub", choices=["surface", "distance", "optimal-fake", "verify"])
    o.add_argument("--mu-star", type=float, default=0.0)
    o.add_argument("--mu-theta", type=float, default=2.0)
    o.add_argument("--alpha", type=float, default=1.0)
    o.add_argument("--beta", type=float, default=1.0)
    o.add_argument("--gamma", type=float)
    o.add_argument("--loss", choices=oracle.LOSS_IDS, default="real_uid_distance")
    o.add_argument("--t-lo", type=float, default=0.05)
    o.add_argument("--t-hi", type=float, default=0.95)
    o.add_argument("--t-points", type=int, default=19)
    o.add_argument("--x-lo", type=float, default=-6.0)
    o.add_argument("--x-hi", type=float, default=6.0)
    o.add_argument("--x-points", type=int, default=121)

    s = sub.add_parser("sample", parents=[common], help="draw samples to CSV")
    s.add_argument("--from", dest="source", help="distill run directory or generator checkpoint")
    s.add_argument("--teacher", help="sample the teacher ODE instead")
    s.add_argument("--nfe", type=int, default=100)
    s.add_argument("--n", type=int, default=10000)
    s.add_argument("--ema", action="store_true")

    e = sub.add_parser("eval", parents=[common], help="sliced-W2 and energy distance")
    e.add_argument("--gen", help="distill run directory or generator checkpoint")
    e.add_argument("--samples", help="CSV of samples")
    e.add_argument("--ref", default="data", help="'data' or a CSV of reference samples")
    e.add_argument("--n", type=int, default=10000)
    e.add_argument("--n-projections", type=int, default=128)
    return p


COMMANDS = {
    "train-teacher": cmd_train_teacher, "distill": cmd_distill, "finetune": cmd_finetune,
    "ablate": cmd_ablate, "oracle": cmd_oracle, "sample": cmd_sample, "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CoefficientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COEFF
    except (InputError, cfgmod.ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except engine.TrainingAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
