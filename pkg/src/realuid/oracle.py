"""Closed-form 1D Gaussian ground truth for the flow_linear path.

Real data ``N(mu_star, 1)`` and generated data ``N(mu_theta, 1)`` are both
interpolated to ``N(0, 1)`` noise with ``x_t = (1-t) x0 + t x1``. Everything
here (marginals, unconditional fields, optimal fake models, pointwise
distances and their integrals) is exact up to quadrature error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr

from .diffcore import tensor as T
from .losses import Coeffs  # noqa: F401  (re-exported)


@dataclass(frozen=True)
class Gauss1D:
    mean: float
    var: float

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError(f"variance must be positive, got {self.var}")

    @property
    def std(self):
        return math.sqrt(self.var)

    def logpdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return -0.5 * (x - self.mean) ** 2 / self.var - 0.5 * np.log(2 * np.pi * self.var)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def score(self, x):
        return -(np.asarray(x, dtype=np.float64) - self.mean) / self.var

    def sample(self, n, rng):
        return self.mean + self.std * rng.standard_normal(n)


# ---------------------------------------------------------------- paths and fields

def path_var(t):
    t = np.asarray(t, dtype=np.float64)
    return (1.0 - t) ** 2 + t ** 2


def marginal(mu, t) -> Gauss1D:
    return Gauss1D(mu * (1.0 - t), float(path_var(t)))


def marginal_logpdf(mu, t, x):
    t = np.asarray(t, dtype=np.float64)
    v = path_var(t)
    return -0.5 * (x - mu * (1.0 - t)) ** 2 / v - 0.5 * np.log(2 * np.pi * v)


def field_coeffs(mu, t):
    """``u_t(x) = slope * x + offset`` for data ``N(mu, 1)``."""
    t = np.asarray(t, dtype=np.float64)
    slope = (2.0 * t - 1.0) / path_var(t)
    return slope, -mu - slope * mu * (1.0 - t)


def uncond_field(mu, t, x):
    """Velocity ``E[x1 - x0 | x_t = x]`` of the path from ``N(mu, 1)`` to ``N(0, 1)``.

    ``u = -mu + (2t - 1)(x - mu(1-t)) / ((1-t)^2 + t^2)``.
    """
    t = np.asarray(t, dtype=np.float64)
    return -mu + (2.0 * t - 1.0) * (x - mu * (1.0 - t)) / path_var(t)


class GaussianField:
    """Differentiable (in ``x``) analytic field, usable wherever an Mlp is."""

    def __init__(self, mu):
        self.mu = float(mu)

    def __call__(self, t, x, cond=None):
        slope, offset = field_coeffs(self.mu, np.asarray(t, dtype=np.float64))
        return T.as_tensor(x) * slope.reshape(-1, 1) + offset.reshape(-1, 1)

    def numpy(self, t, x):
        return uncond_field(self.mu, t, x)


class OptimalFakeField:
    """The optimal fake model as a differentiable (in ``x``) field."""

    def __init__(self, mu_star, mu_theta, c: Coeffs):
        self.mu_star, self.mu_theta, self.c = float(mu_star), float(mu_theta), c

    def __call__(self, t, x, cond=None):
        t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
        x = T.as_tensor(x)
        v = path_var(t)
        a, b = self.c.alpha, self.c.beta
        # densities up to the shared normalizer
        ls = T.square(x - self.mu_star * (1 - t)) * (-0.5 / v)
        lt = T.square(x - self.mu_theta * (1 - t)) * (-0.5 / v)
        m = T.stop_grad(np.maximum(ls.data, lt.data))
        ps, pt = T.exp(ls - m), T.exp(lt - m)
        fs = GaussianField(self.mu_star)(t.ravel(), x)
        ft = GaussianField(self.mu_theta)(t.ravel(), x)
        return (ps * fs * (1 - b) + pt * ft * b) / (ps * (1 - a) + pt * a)


def _weights(mu_star, mu_theta, t, x):
    """Densities rescaled by a common positive factor (overflow-safe)."""
    ls = marginal_logpdf(mu_star, t, x)
    lt = marginal_logpdf(mu_theta, t, x)
    m = np.maximum(ls, lt)
    return np.exp(ls - m), np.exp(lt - m)


def optimal_fake(mu_star, mu_theta, t, x, c: Coeffs):
    """Argmax over the fake model of the RealUID objective at ``(t, x)``:

    ``((1-b) p* f* + b p_th f_th) / ((1-a) p* + a p_th)``.
    """
    ps, pt = _weights(mu_star, mu_theta, t, x)
    fs, ft = uncond_field(mu_star, t, x), uncond_field(mu_theta, t, x)
    a, b = c.alpha, c.beta
    return ((1 - b) * ps * fs + b * pt * ft) / ((1 - a) * ps + a * pt)


def optimal_delta(mu_star, mu_theta, t, x, c: Coeffs):
    """Maximizer of the general (gamma) objective in the ``delta = f* - f`` form."""
    ps, pt = _weights(mu_star, mu_theta, t, x)
    fs, ft = uncond_field(mu_star, t, x), uncond_field(mu_theta, t, x)
    a, b, g = c.alpha, c.beta, c.g
    return (((b - a) * ps + a * pt) * fs - b * pt * ft) / ((1 - g) * ps + g * pt)


def pointwise_distance(mu_star, mu_theta, t, x, c: Coeffs):
    """``l_t(x) = |(p*(b-a) + a p_th) f* - b p_th f_th|^2 / ((1-g) p* + g p_th)`` with true densities."""
    ps = np.exp(marginal_logpdf(mu_star, t, x))
    pt = np.exp(marginal_logpdf(mu_theta, t, x))
    fs, ft = uncond_field(mu_star, t, x), uncond_field(mu_theta, t, x)
    a, b, g = c.alpha, c.beta, c.g
    num = ((b - a) * ps + a * pt) * fs - b * pt * ft
    return num ** 2 / ((1 - g) * ps + g * pt)


def pointwise_norm_distance(mu_star, mu_theta, t, x, c: Coeffs):
    """Non-squared integrand ``|(p*(b-a) + a p_th) f* - b p_th f_th|``."""
    ps = np.exp(marginal_logpdf(mu_star, t, x))
    pt = np.exp(marginal_logpdf(mu_theta, t, x))
    fs, ft = uncond_field(mu_star, t, x), uncond_field(mu_theta, t, x)
    a, b = c.alpha, c.beta
    return np.abs(((b - a) * ps + a * pt) * fs - b * pt * ft)


# ---------------------------------------------------------------- quadrature

class QuadratureError(ValueError):
    pass


@dataclass
class QuadratureRule:
    """Composite Gauss-Legendre in x (``n_panels`` x ``n_nodes``) times a
    Gauss-Legendre rule in t on ``[t_lo, t_hi]``."""

    x_lo: float = -10.0
    x_hi: float = 10.0
    n_panels: int = 8
    n_nodes: int = 64
    t_lo: float = 1e-3
    t_hi: float = 1.0 - 1e-3
    n_t: int = 32

    def __post_init__(self):
        u, w = leggauss(self.n_nodes)
        edges = np.linspace(self.x_lo, self.x_hi, self.n_panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        self.nodes = (mid[:, None] + half[:, None] * u[None, :]).ravel()
        self.weights = (half[:, None] * w[None, :]).ravel()
        ut, wt = leggauss(self.n_t)
        ht = 0.5 * (self.t_hi - self.t_lo)
        self.t_nodes = self.t_lo + ht * (ut + 1.0)
        # weights of the *average* over [t_lo, t_hi]
        self.t_weights = wt * ht / (self.t_hi - self.t_lo)

    def window_mass(self, dist: Gauss1D) -> float:
        a = (self.x_lo - dist.mean) / dist.std
        b = (self.x_hi - dist.mean) / dist.std
        return float(ndtr(b) - ndtr(a))

    def check(self, *dists: Gauss1D, tol=1e-10):
        for d in dists:
            m = self.window_mass(d)
            if m < 1.0 - tol:
                raise QuadratureError(
                    f"window [{self.x_lo}, {self.x_hi}] holds only {m:.3e} of N({d.mean}, {d.var})")

    def integrate(self, fn) -> float:
        """Average over t of the x-integral of ``fn(t, x)`` (vectorized over a grid)."""
        tt = self.t_nodes[:, None]
        xx = self.nodes[None, :]
        vals = fn(tt, xx)
        return float(self.t_weights @ (vals @ self.weights))


LOSS_IDS = ("uid_distance", "real_uid_distance", "general_distance", "normalized_distance")


def loss_by_quadrature(loss_id, mu_star, mu_theta, c: Coeffs | None = None,
                       rule: QuadratureRule | None = None) -> float:
    """Time-averaged distance minimized by the generator, integrated numerically."""
    rule = QuadratureRule() if rule is None else rule
    c = Coeffs() if c is None else c
    for t in rule.t_nodes:
        rule.check(marginal(mu_star, t), marginal(mu_theta, t))
    if loss_id == "uid_distance":
        def fn(t, x):
            pt = np.exp(marginal_logpdf(mu_theta, t, x))
            return pt * (uncond_field(mu_star, t, x) - uncond_field(mu_theta, t, x)) ** 2
    elif loss_id == "real_uid_distance":
        c_ = Coeffs(c.alpha, c.beta)
        def fn(t, x):
            return pointwise_distance(mu_star, mu_theta, t, x, c_)
    elif loss_id == "general_distance":
        def fn(t, x):
            return pointwise_distance(mu_star, mu_theta, t, x, c)
    elif loss_id == "normalized_distance":
        def fn(t, x):
            return pointwise_norm_distance(mu_star, mu_theta, t, x, c)
    else:
        raise ValueError(f"unknown loss_id {loss_id!r}; expected one of {LOSS_IDS}")
    return rule.integrate(fn)


# ---------------------------------------------------------------- brute-force checks

def explicit_objective(mu_star, mu_theta, t, x, c: Coeffs, delta):
    """Density-weighted explicit delta-objective at one point (``delta = f* - f``).

    gen part:  p_th [-g d^2 + 2a d f* - 2b d f_th]
    real part: p*   [-(1-g) d^2 + 2(1-a) d f* - 2(1-b) d f*]
    """
    ps = np.exp(marginal_logpdf(mu_star, t, x))
    pt = np.exp(marginal_logpdf(mu_theta, t, x))
    fs, ft = uncond_field(mu_star, t, x), uncond_field(mu_theta, t, x)
    a, b, g = c.alpha, c.beta, c.g
    gen = -g * delta ** 2 + 2 * a * delta * fs - 2 * b * delta * ft
    real = -(1 - g) * delta ** 2 + 2 * (1 - a) * delta * fs - 2 * (1 - b) * delta * fs
    return pt * gen + ps * real


def brute_force_argmax(objective, lo=-50.0, hi=50.0, n_grid=2001, h=1.0):
    """Maximize a scalar concave quadratic: grid bracket, then 3-point fits.

    The fit stencil ``h`` is wide on purpose: for a quadratic any stencil is
    exact, and a narrow one loses digits to cancellation in the curvature.
    """
    grid = np.linspace(lo, hi, n_grid)
    vals = objective(grid)
    best = grid[int(np.argmax(vals))]
    for _ in range(2):
        jm, j0, jp = objective(best - h), objective(best), objective(best + h)
        curv = (jp - 2 * j0 + jm) / h ** 2
        slope = (jp - jm) / (2 * h)
        best = best - slope / curv
    return best, objective(best)


def posterior_field(mu, t, x, n=801, width=14.0):
    """``E[x1 - x0 | x_t = x]`` by direct Gauss-Legendre quadrature over the
    conditional law (independent of the closed-form field; used to cross-check
    it). Broadcasts over ``t`` and ``x``."""
    t = np.asarray(t, dtype=np.float64)[..., None]
    x = np.asarray(x, dtype=np.float64)[..., None]
    u, w = leggauss(n)
    # small t: integrate over the noise endpoint; large t: over the data endpoint
    x1a = width * u
    x0a = (x - t * x1a) / (1 - t)
    la = -0.5 * x1a ** 2 - 0.5 * (x0a - mu) ** 2
    x0b = mu + width * u
    x1b = (x - (1 - t) * x0b) / t
    lb = -0.5 * (x0b - mu) ** 2 - 0.5 * x1b ** 2
    small = t <= 0.5
    logw = np.where(small, la, lb)
    y = np.where(small, x1a - x0a, x1b - x0b)
    wts = w * np.exp(logw - logw.max(axis=-1, keepdims=True))
    return np.sum(wts * y, axis=-1) / np.sum(wts, axis=-1)


def quadratic_vertex(objective, h=1.0):
    """Argmax and max of a concave quadratic from three evaluations
    (elementwise over array-valued objectives)."""
    jm, j0, jp = objective(-h), objective(0.0), objective(h)
    curv = (jp - 2 * j0 + jm) / h ** 2
    slope = (jp - jm) / (2 * h)
    best = -slope / curv
    return best, objective(best)


def um_floor(mu, rule: QuadratureRule | None = None) -> float:
    """Minimum of the flow-matching loss for data ``N(mu, 1)``: the time-averaged
    conditional variance ``E|x1 - x0|^2 - E|u_t(x_t)|^2``."""
    rule = QuadratureRule(t_lo=0.0, t_hi=1.0) if rule is None else rule

    def fn(t, x):
        return np.exp(marginal_logpdf(mu, t, x)) * uncond_field(mu, t, x) ** 2

    return 2.0 + mu ** 2 - rule.integrate(fn)


def point_with_ratio(mu_star, mu_theta, t, ratio):
    """``x`` at which ``p_th(x) / p*(x) = ratio`` (equal marginal variances)."""
    ms, mt = mu_star * (1 - t), mu_theta * (1 - t)
    v = float(path_var(t))
    return (mt ** 2 - ms ** 2 + 2 * v * math.log(ratio)) / (2 * (mt - ms))


# ---------------------------------------------------------------- self-verification

@dataclass
class Check:
    name: str
    max_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_err) and self.max_err <= self.tol)


def verify_suite(seed: int = 0) -> list[Check]:
    """The oracle's own consistency checks; each compares two independent routes."""
    rng = np.random.default_rng(seed)
    out = []

    # closed-form field against quadrature over the conditional law
    mus = rng.uniform(-3, 3, 8)
    ts = rng.uniform(0.02, 0.98, 8)
    xs = rng.uniform(-4, 4, (8, 16))
    err = max(np.max(np.abs(uncond_field(m, t, x) - posterior_field(m, t, x))) for m, t, x in zip(mus, ts, xs))
    out.append(Check("field_vs_posterior_quadrature", float(err), 1e-8))

    # linearization: max_d {-|d|^2 + 2<d, a-b>} = |a-b|^2
    a, b = rng.standard_normal((2, 1000, 4))
    diff = a - b
    vertex = np.stack([quadratic_vertex(lambda d, k=k: -d ** 2 + 2 * d * diff[:, k])[1] for k in range(4)]).sum(0)
    out.append(Check("linearization_identity", float(np.max(np.abs(vertex - np.sum(diff ** 2, 1)))), 1e-10))

    # UID distance: per-point maximum of the objective, integrated, vs quadrature of pth |f* - f_th|^2
    rule = QuadratureRule()
    one = Coeffs(1.0, 1.0)
    rel = 0.0
    for _ in range(3):
        ms, mt = rng.uniform(-2, 2, 2)

        def fn(t, x, ms=ms, mt=mt):
            pt = np.exp(marginal_logpdf(mt, t, x))
            fs, ft = uncond_field(ms, t, x), posterior_field(mt, t, x, n=201)
            return quadratic_vertex(lambda d: pt * (-d ** 2 + 2 * d * fs - 2 * d * ft))[1]

        ref = loss_by_quadrature("uid_distance", ms, mt, one, rule)
        rel = max(rel, abs(rule.integrate(fn) - ref) / max(ref, 1e-300))
    out.append(Check("uid_distance_pointwise_max", float(rel), 1e-6))

    # optimal fake and general delta against per-point maximization
    e_fake = e_val = e_gamma = 0.0
    for _ in range(100):
        ms, mt = rng.uniform(-2, 2, 2)
        t = rng.uniform(0.05, 0.95)
        x = rng.uniform(-3, 3)
        a_, b_ = rng.choice([0.9, 0.92, 0.94, 0.96, 0.98, 1.0], 2)
        c = Coeffs(a_, b_)
        d, v = quadratic_vertex(lambda d: explicit_objective(ms, mt, t, x, c, d))
        f_bf = uncond_field(ms, t, x) - d
        e_fake = max(e_fake, abs(f_bf - optimal_fake(ms, mt, t, x, c)))
        e_val = max(e_val, abs(v - pointwise_distance(ms, mt, t, x, c)) / max(abs(v), 1e-300))
        for g in (0.9, 0.96, 1.0):
            if g == a_:
                continue
            cg = Coeffs(a_, b_, g)
            dg, _ = quadratic_vertex(lambda d: explicit_objective(ms, mt, t, x, cg, d))
            e_gamma = max(e_gamma, abs(dg - optimal_delta(ms, mt, t, x, cg)))
    out.append(Check("optimal_fake_vs_pointwise_max", float(e_fake), 1e-9))
    out.append(Check("max_value_equals_pointwise_distance", float(e_val), 1e-9))
    out.append(Check("gamma_optimal_delta_vs_pointwise_max", float(e_gamma), 1e-6))

    # matched paths: the optimal fake is the teacher for any coefficients
    xg = np.linspace(-4, 4, 41)
    e = max(np.max(np.abs(optimal_fake(1.3, 1.3, t, xg, Coeffs(a_, b_)) - uncond_field(1.3, t, xg)))
            for t in (0.1, 0.5, 0.9) for a_, b_ in ((0.94, 0.96), (1.0, 0.9), (0.9, 1.0)))
    out.append(Check("matched_paths_fake_equals_teacher", float(e), 1e-12))
    out.append(Check("uid_distance_zero_when_matched",
                     abs(loss_by_quadrature("uid_distance", 0.7, 0.7, one, rule)), 1e-14))

    for chk in coefficient_regime_checks():
        out.append(chk)
    return out


def coefficient_regime_checks(mu_star=1.0, mu_theta=-3.0, t=0.3) -> list[Check]:
    """Behaviour of ``l_t`` where real data is not covered by the generator.

    Errors are expressed so that ``max_err <= tol`` means the regime holds.
    """
    out = []
    for a_ in (1.0, 0.94):
        x = point_with_ratio(mu_star, mu_theta, t, 1e-12)
        ps = float(np.exp(marginal_logpdf(mu_star, t, x)))
        scale = ps * (uncond_field(mu_star, t, x) ** 2 + uncond_field(mu_theta, t, x) ** 2)
        val = float(pointwise_distance(mu_star, mu_theta, t, x, Coeffs(a_, a_)))
        out.append(Check(f"alpha_eq_beta_{a_}_ignores_real", val / scale, 1e-10))
    x = point_with_ratio(mu_star, mu_theta, t, 1e-6)
    ps = float(np.exp(marginal_logpdf(mu_star, t, x)))
    fs = float(uncond_field(mu_star, t, x))
    for a_, b_ in ((0.94, 0.96), (0.96, 0.94), (0.9, 1.0)):
        floor = (b_ - a_) ** 2 * ps * fs ** 2 / (1 - a_)
        val = float(pointwise_distance(mu_star, mu_theta, t, x, Coeffs(a_, b_)))
        # shortfall below 0.99 of the floor
        out.append(Check(f"alpha_ne_beta_{a_}_{b_}_floor", max(0.0, 0.99 - val / floor), 0.0))
    vals = [float(pointwise_distance(mu_star, mu_theta, t, point_with_ratio(mu_star, mu_theta, t, r),
                                     Coeffs(1.0, 0.96))) for r in (1e-6, 1e-9)]
    out.append(Check("beta_lt_alpha_1_unbounded", max(0.0, 10.0 - vals[1] / vals[0]), 0.0))
    return out


# ---------------------------------------------------------------- diffusion (score) oracles

def vp_marginal(mu, spec, t) -> Gauss1D:
    """Marginal of ``N(mu, 1)`` under ``diffusion_vp``: ``N(mu, 1 + sigma_t^2)``."""
    return Gauss1D(mu, 1.0 + float(spec.sigma(t)) ** 2)


def mixture_score(mu_star, mu_theta, alpha, spec, t, x):
    """Score of ``alpha p_t^th + (1 - alpha) p_t*`` (the fake score trained at alpha = beta)."""
    v = 1.0 + spec.sigma(np.asarray(t, dtype=np.float64)) ** 2
    ls = -0.5 * (x - mu_star) ** 2 / v
    lt = -0.5 * (x - mu_theta) ** 2 / v
    m = np.maximum(ls, lt)
    ws, wt = (1 - alpha) * np.exp(ls - m), alpha * np.exp(lt - m)
    return (ws * (-(x - mu_star) / v) + wt * (-(x - mu_theta) / v)) / (ws + wt)


def mixed_kl(mu_star, mu_theta, alpha, spec, rule: QuadratureRule | None = None) -> float:
    """``E_t KL(alpha p_t^th + (1 - alpha) p_t* || p_t*)`` with ``t`` uniform on ``[t_lo, t_hi]``."""
    rule = QuadratureRule(t_lo=spec.t_lo, t_hi=spec.t_hi) if rule is None else rule
    total = 0.0
    for t, wt in zip(rule.t_nodes, rule.t_weights):
        ps_, pt_ = vp_marginal(mu_star, spec, t), vp_marginal(mu_theta, spec, t)
        rule.check(ps_, pt_)
        x = rule.nodes
        q = alpha * pt_.pdf(x) + (1 - alpha) * ps_.pdf(x)
        lq = np.log(np.maximum(q, 1e-300))
        total += wt * np.sum(rule.weights * q * (lq - ps_.logpdf(x)))
    return float(total)
