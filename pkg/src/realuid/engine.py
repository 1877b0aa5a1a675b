"""Training orchestration: teacher pre-training, the alternating fake/generator
distillation loop, fine-tuning, the coupling variant and samplers."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import evalkit
from .diffcore import AdamW, EmaState, Generator, Mlp, OptimConfig, backward, ema_update, frozen, no_grad
from .diffcore import checkpoint as ckpt
from .diffcore import tensor as T
from .diffcore.nn import DiscHead
from .losses import (Batch, Coeffs, CoefficientError, adversarial_losses, check_dmd_coeffs,
                     dmd_real_generator_grad, general_real_uid_terms, injected_gradient_loss,
                     normalized_real_uid_terms, real_uid_fake_step_loss, real_uid_generator_loss,
                     sid_generator_loss, uid_generator_loss, um_loss)
from .paths import PathSpec, sample_t, sample_triple

log = logging.getLogger(__name__)

MODES = ("uid", "real_uid", "sid", "general", "normalized", "dmd_real", "gan_baseline", "coupling")
NAN_ABORT = 3


class TrainingAborted(RuntimeError):
    pass


@dataclass
class NetConfig:
    hidden: tuple = (128, 128, 128)
    activation: str = "silu"
    time_freqs: int = 8


@dataclass
class EvalConfig:
    interval: int = 500
    n_samples: int = 2000
    n_ref: int = 2000
    n_projections: int = 128
    energy: bool = True
    threshold: float | None = None


@dataclass
class TeacherConfig:
    n_iters: int = 5000
    batch_size: int = 256
    lr: float = 1e-3
    lr_decay: str = "cosine"
    clip_norm: float | None = 1.0
    betas: tuple = (0.9, 0.999)
    seed: int = 0
    net: NetConfig = field(default_factory=NetConfig)
    log_interval: int = 500


@dataclass
class DistillConfig:
    coeffs: Coeffs = field(default_factory=Coeffs)
    mode: str = "uid"
    k_fake_steps: int = 5
    n_iters: int = 20000
    batch_size: int = 256
    lr_fake: float = 3e-5
    lr_gen: float = 3e-5
    warmup_steps: int = 500
    ema_decay: float = 0.999
    clip_norm: float | None = 1.0
    betas: tuple = (0.0, 0.999)
    weight_decay: float = 0.0
    seed: int = 0
    path: PathSpec = field(default_factory=PathSpec)
    net: NetConfig = field(default_factory=NetConfig)
    alternation: str = "pseudocode"
    residual: bool = True
    init_generator_from_teacher: bool = False
    init_fake_from_teacher: bool = False
    lr_decay: str = "none"
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        validate(self)

    def with_(self, **kw) -> "DistillConfig":
        return replace(self, **kw)


def validate(cfg: DistillConfig):
    if cfg.mode not in MODES:
        raise CoefficientError(f"unknown mode {cfg.mode!r}; expected one of {MODES}")
    if cfg.k_fake_steps < 1:
        raise ValueError("k_fake_steps must be >= 1")
    if cfg.n_iters < 1 or cfg.batch_size < 1:
        raise ValueError("n_iters and batch_size must be positive")
    if cfg.alternation not in ("pseudocode", "ratio"):
        raise ValueError(f"unknown alternation {cfg.alternation!r}")
    c = cfg.coeffs
    if cfg.mode == "uid" and not (c.alpha == 1.0 and c.beta == 1.0):
        raise CoefficientError(f"mode uid is data-free: needs alpha = beta = 1, got ({c.alpha}, {c.beta})")
    if cfg.mode == "dmd_real":
        check_dmd_coeffs(c)
        if cfg.path.kind != "diffusion_vp":
            raise CoefficientError("dmd_real needs a diffusion_vp path")
    if cfg.mode == "coupling" and cfg.path.kind not in ("bridge_brownian", "interpolant"):
        raise CoefficientError("coupling mode needs a bridge_brownian or interpolant path")


def _rngs(seed):
    ss = np.random.SeedSequence(int(seed))
    init, train, ev = ss.spawn(3)
    return np.random.default_rng(init), np.random.default_rng(train), np.random.default_rng(ev)


def _lr_factor(kind, step, total):
    if kind == "cosine":
        return 0.5 * (1.0 + np.cos(np.pi * min(step, total) / total))
    return 1.0


# ---------------------------------------------------------------- teacher

def train_teacher(path: PathSpec, data_sampler, config: TeacherConfig, dim: int | None = None,
                  coupling_sampler=None, on_log: Callable | None = None) -> tuple[Mlp, list]:
    """Fit ``f*`` by minimizing the matching loss on real triples.

    With ``coupling_sampler`` (pairs ``(x0, xT)``) the net is conditioned on ``xT``.
    """
    init_rng, rng, _ = _rngs(config.seed)
    if coupling_sampler is not None:
        x0, xT = coupling_sampler(2, init_rng)
        dim = x0.shape[1]
        cond_dim = xT.shape[1]
    else:
        dim = dim or data_sampler(2, init_rng).shape[1]
        cond_dim = 0
    net = Mlp(dim, config.net.hidden, config.net.activation, config.net.time_freqs,
              cond_dim=cond_dim, rng=init_rng)
    opt = AdamW(net.parameters(), OptimConfig(lr=config.lr, betas=tuple(config.betas),
                                              clip_norm=config.clip_norm))
    curve = []
    last_good = net.get_flat()
    running = []
    for step in range(config.n_iters):
        b = config.batch_size
        if coupling_sampler is not None:
            x0, xT = coupling_sampler(b, rng)
            tri = sample_triple(path, x0, xT, rng, cond=xT)
        else:
            x0 = data_sampler(b, rng)
            end = None if path.kind == "diffusion_vp" else rng.standard_normal(x0.shape)
            tri = sample_triple(path, x0, end, rng)
        loss = um_loss(net, tri)
        if not np.isfinite(loss.data):
            T.current_tape().reset()
            net.set_flat(last_good)
            raise TrainingAborted(f"teacher loss became non-finite at step {step}")
        opt.zero_grad()
        backward(loss)
        opt.config.lr = config.lr * _lr_factor(config.lr_decay, step, config.n_iters)
        opt.step()
        running.append(float(loss.data))
        if (step + 1) % config.log_interval == 0 or step + 1 == config.n_iters:
            rec = {"step": step + 1, "um_loss": float(np.mean(running))}
            curve.append(rec)
            running = []
            last_good = net.get_flat()
            if on_log:
                on_log(rec)
    for p in net.parameters():
        p.requires_grad = False
    return net, curve


# ---------------------------------------------------------------- samplers

def sample_teacher_ode(teacher, n_steps: int, n_samples: int, rng, dim: int | None = None,
                       path: PathSpec | None = None, chunk=10000) -> np.ndarray:
    """Euler integration of ``dx/dt = u(t, x)`` from noise (t=1) to data (t=0)."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if path is not None and path.kind not in ("flow_linear", "interpolant"):
        raise ValueError(f"ODE sampling needs a velocity path, got {path.kind}")
    dim = teacher.data_dim if dim is None else dim
    x = rng.standard_normal((n_samples, dim))
    dt = 1.0 / n_steps
    with no_grad():
        for k in range(n_steps):
            t = 1.0 - k * dt
            for i in range(0, n_samples, chunk):
                xi = x[i:i + chunk]
                x[i:i + chunk] = xi - dt * teacher(np.full(xi.shape[0], t), xi).data
    return x


def sample_generator(gen: Generator, n_samples: int, rng, ema: EmaState | None = None,
                     cond=None, chunk=10000) -> np.ndarray:
    """``x0 = G(z)``, ``z ~ N(0, I)``; uses EMA weights when ``ema`` is given."""
    if ema is not None:
        saved = gen.net.get_flat()
        gen.net.set_flat(ema.shadow)
    try:
        z = rng.standard_normal((n_samples, gen.net.data_dim))
        out = np.empty_like(z)
        with no_grad():
            for i in range(0, n_samples, chunk):
                c = None if cond is None else cond[i:i + chunk]
                out[i:i + chunk] = gen(z[i:i + chunk], c).data
    finally:
        if ema is not None:
            gen.net.set_flat(saved)
    return out


# ---------------------------------------------------------------- distillation

def is_generator_step(n: int, k: int, alternation: str = "pseudocode") -> bool:
    """``pseudocode``: generator when ``n % K == 0``; ``ratio``: K fake steps per generator step."""
    if alternation == "ratio":
        return n % (k + 1) == k
    return n % k == 0


@dataclass
class DistillResult:
    generator: Generator
    fake: Mlp
    ema: EmaState
    records: list
    status: str = "ok"
    best_params: np.ndarray | None = None
    best_metric: float = float("inf")
    skipped: int = 0
    head: DiscHead | None = None


class Distiller:
    """State of one distillation run; :meth:`step` performs iteration ``n`` of the loop."""

    def __init__(self, teacher: Mlp, config: DistillConfig, real_sampler=None, coupling_sampler=None,
                 generator: Generator | None = None, fake: Mlp | None = None,
                 ref_samples: np.ndarray | None = None, ref_gauss=None):
        validate(config)
        self.cfg = config
        self.teacher = teacher
        for p in teacher.parameters():
            p.requires_grad = False
        self.real_sampler = real_sampler
        self.coupling = coupling_sampler
        self.conditional = coupling_sampler is not None
        if config.mode == "coupling" and not self.conditional:
            raise CoefficientError("coupling mode needs a coupling sampler")
        init_rng, self.rng, self.eval_ss = _rngs(config.seed)
        dim = teacher.data_dim
        self.dim = dim
        if generator is None:
            if config.init_generator_from_teacher:
                net = teacher.copy()
                for p in net.parameters():
                    p.requires_grad = True
            else:
                net = Mlp(dim, config.net.hidden, config.net.activation, config.net.time_freqs,
                          cond_dim=teacher.cond_dim, rng=init_rng, zero_last=config.residual)
            generator = Generator(net, residual=config.residual, conditional=self.conditional)
        if self.conditional and not generator.conditional:
            raise CoefficientError("coupling distillation needs a conditional generator")
        self.gen = generator
        if fake is None:
            if config.init_fake_from_teacher:
                fake = teacher.copy()
                for p in fake.parameters():
                    p.requires_grad = True
            else:
                fake = Mlp(dim, config.net.hidden, config.net.activation, config.net.time_freqs,
                           cond_dim=teacher.cond_dim, rng=init_rng)
        self.fake = fake
        self.head = None
        fake_params = list(fake.parameters())
        if config.mode == "gan_baseline":
            self.head = DiscHead(fake.layer_widths[-2], rng=init_rng)
            fake_params += self.head.parameters()
        oc = dict(betas=tuple(config.betas), clip_norm=config.clip_norm,
                  weight_decay=config.weight_decay, warmup_steps=config.warmup_steps)
        self.opt_fake = AdamW(fake_params, OptimConfig(lr=config.lr_fake, **oc))
        self.opt_gen = AdamW(generator.parameters(), OptimConfig(lr=config.lr_gen, **oc))
        self.ema = EmaState.of(generator.net.get_flat(), config.ema_decay)
        self.n = 0
        self.nan_streak = 0
        self.skipped = 0
        self.records: list[evalkit.MetricsRecord] = []
        self.best_metric = float("inf")
        self.best_params = self.ema.shadow.copy()
        self._loss_acc: dict[str, list] = {}
        self._t0 = time.perf_counter()
        ref_rng = np.random.default_rng(self.eval_ss.spawn(1)[0])
        if ref_samples is None and real_sampler is not None:
            ref_samples = real_sampler(config.eval.n_ref, ref_rng)
        self.ref_samples = ref_samples
        self.ref_gauss = ref_gauss

    # -- batches
    def _batch(self, live: bool, with_real: bool) -> Batch:
        """Generated and real triples sharing ``t``, the noise endpoint and ``eps``."""
        b, rng, path = self.cfg.batch_size, self.rng, self.cfg.path
        cond = x0_real = None
        if self.conditional:
            x0_real, cond = self.coupling(b, rng)
            endpoint = cond
        else:
            endpoint = rng.standard_normal((b, self.dim))
        z = rng.standard_normal((b, self.dim))
        t = sample_t(path, b, rng)
        eps = None if path.kind == "flow_linear" else rng.standard_normal((b, self.dim))
        if live:
            x0 = self.gen(z, cond)
        else:
            with no_grad():
                x0 = self.gen(z, cond)
        gen_tri = sample_triple(path, x0, endpoint, rng, t=t, eps=eps, cond=cond)
        real_tri = None
        if with_real:
            if x0_real is None:
                x0_real = self.real_sampler(b, rng)
            real_tri = sample_triple(path, x0_real, endpoint, rng, t=t, eps=eps, cond=cond)
        return Batch(gen_tri, real_tri)

    def _needs_real(self, for_fake: bool) -> bool:
        c, mode = self.cfg.coeffs, self.cfg.mode
        if mode == "gan_baseline":
            return True
        if mode == "uid":
            return False
        if not for_fake:
            return False
        return not c.data_free

    # -- steps
    def _fake_loss(self, batch: Batch):
        mode, c = self.cfg.mode, self.cfg.coeffs
        if mode in ("uid", "real_uid", "sid", "dmd_real", "coupling"):
            terms = real_uid_fake_step_loss(self.fake, batch, c)
            return terms.total, {"loss.gen_term": terms.gen, "loss.real_term": terms.real}
        det = Batch(batch.gen.detached(), None if batch.real is None else batch.real.detached())
        with frozen(self.teacher):
            if mode == "general":
                terms = general_real_uid_terms(self.teacher, self.fake, det, c)
                return -terms.total, {"loss.gen_term": terms.gen, "loss.real_term": terms.real}
            if mode == "normalized":
                terms = normalized_real_uid_terms(self.teacher, self.fake, det, c)
                return -terms.total, {"loss.gen_term": terms.gen, "loss.real_term": terms.real}
        # gan_baseline
        dist = um_loss(self.fake, det.gen)
        _, disc = adversarial_losses(self.fake, self.head, det.gen, det.real)
        total = T.scale(dist, c.lambda_dist) - T.scale(disc, c.lambda_adv_d)
        return total, {"loss.dist": dist, "loss.disc_term": disc}

    def _gen_loss(self, batch: Batch):
        mode, c = self.cfg.mode, self.cfg.coeffs
        g = batch.gen
        with frozen(self.teacher, self.fake):
            if mode == "uid":
                loss = uid_generator_loss(self.teacher, self.fake, g)
            elif mode in ("real_uid", "coupling"):
                loss = real_uid_generator_loss(self.teacher, self.fake, g, c)
            elif mode == "sid":
                loss = sid_generator_loss(self.teacher, self.fake, g, c)
            elif mode == "general":
                loss = general_real_uid_terms(self.teacher, self.fake, batch, c, include_real=False).gen
            elif mode == "normalized":
                loss = normalized_real_uid_terms(self.teacher, self.fake, batch, c, include_real=False).gen
            elif mode == "dmd_real":
                grad_xt = dmd_real_generator_grad(self.fake, self.teacher, g, c.alpha)
                loss = injected_gradient_loss(g.x_t, grad_xt)
            else:  # gan_baseline
                with frozen_head(self.head):
                    dist = uid_generator_loss(self.teacher, self.fake, g)
                    adv, _ = adversarial_losses(self.fake, self.head, g, batch.real)
                loss = T.scale(dist, c.lambda_dist) + T.scale(adv, c.lambda_adv_g)
                return loss, {"loss.gen_dist": dist, "loss.adv_term": adv}
        return loss, {"loss.generator": loss}

    def step(self):
        n = self.n
        gen_step = is_generator_step(n, self.cfg.k_fake_steps, self.cfg.alternation)
        lr_f = _lr_factor(self.cfg.lr_decay, n, self.cfg.n_iters)
        if gen_step:
            batch = self._batch(live=True, with_real=self._needs_real(False))
            loss, parts = self._gen_loss(batch)
            opt, params_owner = self.opt_gen, self.gen
            opt.config.lr = self.cfg.lr_gen * lr_f
        else:
            batch = self._batch(live=False, with_real=self._needs_real(True))
            loss, parts = self._fake_loss(batch)
            opt = self.opt_fake
            opt.config.lr = self.cfg.lr_fake * lr_f
        ok = bool(np.isfinite(loss.data))
        if ok:
            opt.zero_grad()
            backward(loss)
            ok = opt.step()
        else:
            T.current_tape().reset()
        if not ok:
            self.skipped += 1
            self.nan_streak += 1
            log.warning("non-finite %s loss at step %d skipped", "generator" if gen_step else "fake", n)
            if self.nan_streak >= NAN_ABORT:
                raise TrainingAborted(f"{NAN_ABORT} consecutive non-finite steps at step {n}")
        else:
            self.nan_streak = 0
            for k, v in parts.items():
                self._loss_acc.setdefault(k, []).append(float(v.data))
            if gen_step:
                ema_update(self.ema, self.gen.net.get_flat())
        self.n += 1
        return gen_step

    # -- evaluation
    def evaluate(self) -> evalkit.MetricsRecord:
        ev = self.cfg.eval
        rng = np.random.default_rng([int(self.cfg.seed), self.n, 7])
        losses = {k: float(np.mean(v)) for k, v in self._loss_acc.items()}
        self._loss_acc = {}
        rec = evalkit.MetricsRecord(step=self.n, losses=losses)
        rec.extra["skipped"] = self.skipped
        if self.conditional:
            x0, xT = self.coupling(ev.n_samples, rng)
            samples = sample_generator(self.gen, ev.n_samples, rng, ema=self.ema, cond=xT)
            ref = x0
        else:
            samples = sample_generator(self.gen, ev.n_samples, rng, ema=self.ema)
            ref = self.ref_samples
        if not np.all(np.isfinite(samples)):
            rec.extra["nonfinite_samples"] = True
        elif ref is not None:
            rec.sliced_w2 = evalkit.sliced_w2(samples, ref, ev.n_projections, rng)
            if ev.energy:
                rec.energy_dist = evalkit.energy_distance(samples, ref)
        if self.dim == 1 and np.all(np.isfinite(samples)):
            rec.extra["mean"] = float(samples.mean())
            rec.extra["std"] = float(samples.std())
            if self.ref_gauss is not None:
                from .oracle import Gauss1D
                rec.w2_gauss = evalkit.w2_gaussian(Gauss1D(samples.mean(), samples.var()), self.ref_gauss)
        rec.wall_ms = (time.perf_counter() - self._t0) * 1e3
        metric = rec.sliced_w2
        if metric is not None and metric < self.best_metric:
            self.best_metric = metric
            self.best_params = self.ema.shadow.copy()
        self.records.append(rec)
        return rec

    def run(self, n_iters: int | None = None, on_record: Callable | None = None) -> DistillResult:
        total = self.cfg.n_iters if n_iters is None else n_iters
        interval = self.cfg.eval.interval
        status = "ok"
        try:
            for _ in range(total):
                self.step()
                if interval and self.n % interval == 0:
                    rec = self.evaluate()
                    if on_record:
                        on_record(rec)
        except TrainingAborted as exc:
            log.error("distillation aborted: %s", exc)
            status = "aborted"
        return self.result(status)

    def result(self, status="ok") -> DistillResult:
        return DistillResult(self.gen, self.fake, self.ema, self.records, status,
                             self.best_params, self.best_metric, self.skipped, self.head)


class frozen_head:
    def __init__(self, head):
        self.head = head

    def __enter__(self):
        self.saved = [(p, p.requires_grad) for p in self.head.parameters()]
        for p, _ in self.saved:
            p.requires_grad = False

    def __exit__(self, *exc):
        for p, rg in self.saved:
            p.requires_grad = rg


def distill(teacher: Mlp, config: DistillConfig, real_sampler, on_record=None, **kw) -> DistillResult:
    """Run the alternating loop for ``config.n_iters`` steps."""
    return Distiller(teacher, config, real_sampler=real_sampler, **kw).run(on_record=on_record)


def distill_coupling(teacher: Mlp, config: DistillConfig, coupling_sampler, on_record=None,
                     **kw) -> DistillResult:
    """Same loop with every network conditioned on the endpoint ``x_T``."""
    if teacher.cond_dim == 0:
        raise CoefficientError("coupling distillation needs a conditional teacher")
    if config.mode != "coupling":
        config = config.with_(mode="coupling")
    return Distiller(teacher, config, coupling_sampler=coupling_sampler, **kw).run(on_record=on_record)


def finetune(teacher: Mlp, generator: Generator, config: DistillConfig, alpha_ft: float, beta_ft: float,
             real_sampler, lr: float = 1e-5, on_record=None, **kw) -> DistillResult:
    """Continue from a distilled generator with ``(alpha_ft, beta_ft)``; the fake
    model restarts from the teacher, no warm-up. Divergence is reported in
    ``result.status`` instead of raising."""
    c = replace(config.coeffs, alpha=alpha_ft, beta=beta_ft)
    mode = config.mode
    if mode == "uid" and not (alpha_ft == 1.0 and beta_ft == 1.0):
        mode = "real_uid"
    cfg = config.with_(coeffs=c, mode=mode, lr_fake=lr, lr_gen=lr, warmup_steps=0,
                       init_fake_from_teacher=True)
    d = Distiller(teacher, cfg, real_sampler=real_sampler, generator=generator, **kw)
    res = d.run(on_record=on_record)
    if res.status == "ok":
        bad = any(r.extra.get("nonfinite_samples") for r in res.records)
        if bad or not np.all(np.isfinite(generator.net.get_flat())):
            res.status = "diverged"
    else:
        res.status = "diverged"
    return res


# ---------------------------------------------------------------- run directories

def param_hash(net) -> str:
    import hashlib
    return hashlib.sha256(net.get_flat().tobytes()).hexdigest()


class RunDir:
    """``config.json``, ``metrics.jsonl``, ``checkpoints/``, ``samples/``."""

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "checkpoints").mkdir(parents=True, exist_ok=True)
        (self.root / "samples").mkdir(exist_ok=True)

    @property
    def metrics_path(self):
        return self.root / "metrics.jsonl"

    def write_config(self, cfg: dict):
        (self.root / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))

    def read_config(self) -> dict:
        return json.loads((self.root / "config.json").read_text())

    def append_metrics(self, rec: evalkit.MetricsRecord):
        with open(self.metrics_path, "a") as fh:
            fh.write(rec.to_json() + "\n")

    def checkpoint(self, name):
        return self.root / "checkpoints" / name

    def write_samples(self, name, samples):
        write_csv(self.root / "samples" / f"{name}.csv", samples)


def format_csv(samples) -> str:
    """Header ``x1..xD`` then one row per sample, shortest round-trip floats."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    lines = [",".join(f"x{i + 1}" for i in range(samples.shape[1]))]
    lines += [",".join(repr(float(v)) for v in row) for row in samples]
    return "\n".join(lines) + "\n"


def write_csv(path, samples):
    Path(path).write_text(format_csv(samples))


def read_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))


def config_dict(obj) -> dict:
    d = asdict(obj)
    return json.loads(json.dumps(d))
