"""Toy end-to-end experiments shared by ``scripts/`` and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import engine, evalkit
from .data import CouplingSampler, DataSampler, translation_posterior_mean
from .diffcore import no_grad
from .engine import DistillConfig, EvalConfig, NetConfig, TeacherConfig
from .losses import Coeffs
from .oracle import Gauss1D
from .paths import PathSpec

# Desk-scale optimizer settings. The paper's 3e-5 with EMA 0.999 cannot move a
# one-step generator far enough within 20k steps on these problems.
TOY_LR = 3e-3
TOY_EMA = 0.99


@dataclass
class ToyRun:
    coeffs: Coeffs
    mode: str
    result: engine.DistillResult
    seconds: float
    curve: list = field(default_factory=list)


def _log(on_log, msg):
    if on_log:
        on_log(msg)


def train_gauss_teacher(mu=2.0, n_iters=5000, hidden=(128, 128, 128), seed=0, on_log=None):
    cfg = TeacherConfig(n_iters=n_iters, net=NetConfig(hidden=hidden), seed=seed, lr=1e-3, log_interval=1000)
    net, curve = engine.train_teacher(PathSpec(), DataSampler("gauss1d", mu=mu), cfg,
                                      on_log=lambda r: _log(on_log, f"teacher {r}"))
    return net, curve


def distill_gauss(teacher, mode, coeffs, mu=2.0, n_iters=20000, hidden=(64, 64, 64), seed=0,
                  lr=TOY_LR, ema=TOY_EMA, on_log=None) -> ToyRun:
    cfg = DistillConfig(coeffs=coeffs, mode=mode, n_iters=n_iters, lr_fake=lr, lr_gen=lr, lr_decay="cosine",
                        ema_decay=ema, warmup_steps=500, seed=seed, net=NetConfig(hidden=hidden),
                        eval=EvalConfig(interval=1000, n_samples=2000, energy=False))
    t0 = time.perf_counter()
    res = engine.distill(teacher, cfg, DataSampler("gauss1d", mu=mu), ref_gauss=Gauss1D(mu, 1.0),
                         on_record=lambda r: _log(on_log, f"{mode} step {r.step} mean {r.extra.get('mean')}"))
    return ToyRun(coeffs, mode, res, time.perf_counter() - t0)


def generator_mean(run: ToyRun, n=200_000, seed=123) -> float:
    return float(engine.sample_generator(run.result.generator, n, np.random.default_rng(seed),
                                         ema=run.result.ema).mean())


# ---------------------------------------------------------------- 2D

def train_2d_teacher(data: DataSampler, n_iters=10000, hidden=(128, 128, 128), seed=0, on_log=None):
    cfg = TeacherConfig(n_iters=n_iters, net=NetConfig(hidden=hidden), seed=seed, lr=1e-3, log_interval=1000)
    return engine.train_teacher(PathSpec(), data, cfg, on_log=lambda r: _log(on_log, f"teacher {r}"))


def distill_2d(teacher, data: DataSampler, coeffs, n_iters=20000, hidden=(128, 128, 128), seed=0,
               lr=1e-3, ema=TOY_EMA, k=5, eval_interval=1000, ref=None, on_log=None) -> ToyRun:
    mode = "uid" if coeffs.data_free else "real_uid"
    cfg = DistillConfig(coeffs=coeffs, mode=mode, n_iters=n_iters, lr_fake=lr, lr_gen=lr, lr_decay="cosine",
                        ema_decay=ema, warmup_steps=500, seed=seed, k_fake_steps=k, net=NetConfig(hidden=hidden),
                        eval=EvalConfig(interval=eval_interval, n_samples=2000, n_ref=2000, energy=False))
    t0 = time.perf_counter()
    curve = []

    def rec(r):
        curve.append((r.step, r.sliced_w2))
        _log(on_log, f"{mode} {coeffs.alpha},{coeffs.beta} step {r.step} sw2 {r.sliced_w2:.4f} "
                     f"t {time.perf_counter() - t0:.0f}s")

    res = engine.distill(teacher, cfg, data, on_record=rec, ref_samples=ref)
    return ToyRun(coeffs, mode, res, time.perf_counter() - t0, curve)


def sliced(samples, heldout, seed=0):
    return evalkit.sliced_w2(samples, heldout, 128, np.random.default_rng(seed))


def steps_to_reach(curve, level):
    for step, m in curve:
        if m is not None and m <= level:
            return step
    return None


def two_d_experiment(dataset="two_moons", teacher_iters=10000, distill_iters=20000, n_eval=5000, seed=0,
                     cells=((1.0, 1.0), (0.94, 0.96)), on_log=None) -> dict:
    """Teacher (100-step Euler) vs one-step students, sliced-W2 to held-out data."""
    data = DataSampler(dataset)
    heldout = data(n_eval, np.random.default_rng([seed, 99]))
    t0 = time.perf_counter()
    teacher, _ = train_2d_teacher(data, teacher_iters, seed=seed, on_log=on_log)
    t_teacher = time.perf_counter() - t0
    teach = engine.sample_teacher_ode(teacher, 100, n_eval, np.random.default_rng([seed, 1]))
    out = {"dataset": dataset, "teacher_sw2": sliced(teach, heldout), "teacher_seconds": t_teacher, "cells": []}
    _log(on_log, f"teacher sw2 {out['teacher_sw2']:.4f} ({t_teacher:.0f}s)")
    ref = data(2000, np.random.default_rng([seed, 98]))
    for a, b in cells:
        run = distill_2d(teacher, data, Coeffs(a, b), distill_iters, seed=seed, ref=ref, on_log=on_log)
        with no_grad():
            s = engine.sample_generator(run.result.generator, n_eval, np.random.default_rng([seed, 2]),
                                        ema=run.result.ema)
        out["cells"].append({"alpha": a, "beta": b, "sw2": sliced(s, heldout), "curve": run.curve,
                             "seconds": run.seconds, "status": run.result.status})
        _log(on_log, f"cell {a},{b}: sw2 {out['cells'][-1]['sw2']:.4f} ({run.seconds:.0f}s)")
    return out


# ---------------------------------------------------------------- coupling

def coupling_experiment(n_teacher=4000, n_iters=6000, seed=0, path=None, on_log=None, coeffs=None) -> dict:
    """Translation coupling: a conditional one-step generator should output ``E[x0 | xT]`` on average."""
    path = PathSpec("bridge_brownian", bridge_eps=0.5) if path is None else path
    coupling = CouplingSampler("translation")
    tcfg = TeacherConfig(n_iters=n_teacher, net=NetConfig(hidden=(64, 64, 64)), seed=seed, log_interval=1000)
    teacher, _ = engine.train_teacher(path, None, tcfg, coupling_sampler=coupling,
                                      on_log=lambda r: _log(on_log, f"teacher {r}"))
    coeffs = Coeffs(0.94, 0.96) if coeffs is None else coeffs
    cfg = DistillConfig(coeffs=coeffs, mode="coupling", path=path, n_iters=n_iters, lr_fake=TOY_LR,
                        lr_gen=TOY_LR, lr_decay="cosine", ema_decay=TOY_EMA, warmup_steps=500, seed=seed,
                        net=NetConfig(hidden=(64, 64, 64)),
                        eval=EvalConfig(interval=1000, n_samples=1000, energy=False))
    res = engine.distill_coupling(teacher, cfg, coupling,
                                  on_record=lambda r: _log(on_log, f"coupling step {r.step} sw2 {r.sliced_w2}"))
    xT = np.linspace(0.0, 2.0, 21)[:, None]
    reps = 4000
    rng = np.random.default_rng([seed, 5])
    cond = np.repeat(xT, reps, axis=0)
    x0 = engine.sample_generator(res.generator, cond.shape[0], rng, ema=res.ema, cond=cond)
    means = x0.reshape(xT.shape[0], reps).mean(axis=1)
    target = translation_posterior_mean(xT[:, 0])
    return {"xT": xT[:, 0], "mean": means, "posterior_mean": target,
            "max_err": float(np.max(np.abs(means - target))), "status": res.status}
