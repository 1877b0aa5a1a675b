"""Distillation objectives built on the differentiable tape.

Networks are any callables ``net(t, x_t, cond) -> Tensor``. Losses that must
not train a network take it already frozen (see :func:`diffcore.frozen`);
generator losses keep the graph through ``x_t`` and the targets, so gradients
reach the generator only. Every loss averages over the batch of per-sample
squared norms (weights ``w_t = 1`` unless ``weights`` is given).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .diffcore import tensor as T
from .diffcore.tensor import Tensor
from .paths import Triple

EPS_NORM = 1e-8


@dataclass(frozen=True)
class Coeffs:
    """Loss coefficients. ``gamma=None`` means ``gamma = alpha``."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float | None = None
    alpha_sid: float = 0.5
    lambda_adv_g: float = 0.3
    lambda_adv_d: float = 1.0
    lambda_dist: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.gamma is not None and not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        for name in ("alpha_sid", "lambda_adv_g", "lambda_adv_d", "lambda_dist"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def g(self) -> float:
        return self.alpha if self.gamma is None else self.gamma

    @property
    def data_free(self) -> bool:
        return self.alpha == 1.0 and self.beta == 1.0 and self.g == 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Coeffs":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown coeffs keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Batch:
    """Generated and real triples sharing times, noise endpoints and eps."""

    gen: Triple
    real: Triple | None = None


class Terms(NamedTuple):
    total: Tensor
    gen: Tensor
    real: Tensor


def _zero():
    return Tensor(0.0)


def _wmean(per_sample: Tensor, weights=None) -> Tensor:
    if weights is None:
        return T.mean(per_sample)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    return T.scale(T.sum(per_sample * w), 1.0 / w.size)


def _eval(net, tri: Triple) -> Tensor:
    return net(tri.t, tri.x_t, tri.cond)


# ---------------------------------------------------------------- matching losses

def um_loss(f, tri: Triple, weights=None) -> Tensor:
    """Mean of ``|f(t, x_t) - target|^2``."""
    return _wmean(T.sq_norm(_eval(f, tri) - tri.target), weights)


def real_um_terms(f, batch: Batch, c: Coeffs, weights=None) -> Terms:
    """Generated/real decomposition of the real-data matching loss.

    For ``alpha < 1``:
        a |f(x_gen) - (b/a) y_gen|^2 + (1-a) |f(x_real) - ((1-b)/(1-a)) y_real|^2.
    For ``alpha == 1`` the real term is ``-2 (1-b) <f(x_real), y_real>``, the
    f-dependent part of the squared form in the limit (its constant diverges).
    """
    a, b = c.alpha, c.beta
    gen = T.scale(_wmean(T.sq_norm(_eval(f, batch.gen) - T.scale(batch.gen.target, b / a)), weights), a)
    if a == 1.0 and b == 1.0:
        real = _zero()
    else:
        if batch.real is None:
            raise ValueError(f"alpha={a}, beta={b} needs real triples")
        fr = _eval(f, batch.real)
        if a == 1.0:
            real = T.scale(_wmean(T.dot(fr, batch.real.target), weights), -2.0 * (1.0 - b))
        else:
            scaled = T.scale(batch.real.target, (1.0 - b) / (1.0 - a))
            real = T.scale(_wmean(T.sq_norm(fr - scaled), weights), 1.0 - a)
    return Terms(gen + real, gen, real)


def real_um_loss(f, batch: Batch, c: Coeffs, weights=None) -> Tensor:
    return real_um_terms(f, batch, c, weights).total


def real_uid_fake_step_loss(fake, batch: Batch, c: Coeffs, weights=None) -> Terms:
    """Fake-model objective; the generator graph is cut off first."""
    detached = Batch(batch.gen.detached(), None if batch.real is None else batch.real.detached())
    return real_um_terms(fake, detached, c, weights)


# ---------------------------------------------------------------- generator losses

def uid_generator_loss(teacher, fake, gen: Triple, weights=None) -> Tensor:
    """``|f*(x) - y|^2 - |f(x) - y|^2`` on generated triples (both nets frozen)."""
    y = gen.target
    per = T.sq_norm(_eval(teacher, gen) - y) - T.sq_norm(_eval(fake, gen) - y)
    return _wmean(per, weights)


def real_uid_generator_loss(teacher, fake, gen: Triple, c: Coeffs, weights=None) -> Tensor:
    """``a |f*(x) - (b/a) y|^2 - a |f(x) - (b/a) y|^2``; real data enters only via the fake."""
    a, b = c.alpha, c.beta
    y = T.scale(gen.target, b / a)
    per = T.scale(T.sq_norm(_eval(teacher, gen) - y), a) - T.scale(T.sq_norm(_eval(fake, gen) - y), a)
    return _wmean(per, weights)


def sid_generator_loss(teacher, fake, gen: Triple, c: Coeffs, weights=None) -> Tensor:
    """``-2 a_sid a |d|^2 + 2a <d, f*> - 2b <d, y>`` with ``d = f* - f``.

    ``a_sid = 0.5`` and ``a = b = 1`` give the UID generator loss.
    """
    a, b = c.alpha, c.beta
    fs = _eval(teacher, gen)
    d = fs - _eval(fake, gen)
    per = (T.scale(T.sq_norm(d), -2.0 * c.alpha_sid * a) + T.scale(T.dot(d, fs), 2.0 * a)
           - T.scale(T.dot(d, gen.target), 2.0 * b))
    return _wmean(per, weights)


def general_real_uid_terms(teacher, fake, batch: Batch, c: Coeffs, weights=None,
                           include_real=True) -> Terms:
    """Six-term objective in ``d = f* - f`` (maximized over the fake model):

    gen:  -g |d|^2 + 2a <d, f*> - 2b <d, y_gen>
    real: -(1-g) |d|^2 + 2(1-a) <d, f*> - 2(1-b) <d, y_real>
    """
    a, b, g = c.alpha, c.beta, c.g

    def part(tri, kq, kf, ky):
        fs = _eval(teacher, tri)
        d = fs - _eval(fake, tri)
        per = T.scale(T.sq_norm(d), -kq) + T.scale(T.dot(d, fs), 2.0 * kf) - T.scale(T.dot(d, tri.target), 2.0 * ky)
        return _wmean(per, weights)

    gen = part(batch.gen, g, a, b)
    if not include_real or (a == 1.0 and b == 1.0 and g == 1.0):
        real = _zero()
    else:
        if batch.real is None:
            raise ValueError("general objective with real-data weight needs real triples")
        real = part(batch.real, 1.0 - g, 1.0 - a, 1.0 - b)
    return Terms(gen + real, gen, real)


def general_real_uid_loss(teacher, fake, batch: Batch, c: Coeffs, weights=None) -> Tensor:
    return general_real_uid_terms(teacher, fake, batch, c, weights).total


def normalized_real_uid_terms(teacher, fake, batch: Batch, c: Coeffs, weights=None,
                              include_real=True, eps_norm=EPS_NORM) -> Terms:
    """``<u, a f* - b y_gen>`` + ``<u, (1-a) f* - (1-b) y_real>`` with
    ``u = (f* - f) / |f* - f|``; samples with ``|f* - f| < eps_norm`` contribute 0."""
    a, b = c.alpha, c.beta

    def part(tri, kf, ky):
        fs = _eval(teacher, tri)
        d = fs - _eval(fake, tri)
        norm = T.sqrt(T.clamp_min(T.sq_norm(d), eps_norm ** 2))
        keep = (norm.data >= eps_norm).astype(np.float64)
        u = d * T.reshape(T.div(keep, norm), (-1, 1))
        v = T.scale(fs, kf) - T.scale(tri.target, ky)
        return _wmean(T.dot(u, v), weights)

    gen = part(batch.gen, a, b)
    if not include_real or (a == 1.0 and b == 1.0):
        real = _zero()
    else:
        if batch.real is None:
            raise ValueError("normalized objective with real-data weight needs real triples")
        real = part(batch.real, 1.0 - a, 1.0 - b)
    return Terms(gen + real, gen, real)


def normalized_real_uid_loss(teacher, fake, batch: Batch, c: Coeffs, weights=None) -> Tensor:
    return normalized_real_uid_terms(teacher, fake, batch, c, weights).total


# ---------------------------------------------------------------- DMD with real data

class CoefficientError(ValueError):
    pass


def check_dmd_coeffs(c: Coeffs):
    if c.alpha != c.beta:
        raise CoefficientError(
            f"DMD with real data needs alpha == beta for the fake score (got alpha={c.alpha}, "
            f"beta={c.beta}); unequal coefficients bias the score difference and collapse the generator")


def dmd_real_generator_grad(fake_score, teacher_score, gen: Triple, alpha: float) -> np.ndarray:
    """Per-sample ``alpha (s_fake(x_t) - s*(x_t))``: the gradient to inject at ``x_t``."""
    with T.no_grad():
        sf = _eval(fake_score, gen).data
        st = _eval(teacher_score, gen).data
    return alpha * (sf - st)


def injected_gradient_loss(x_t: Tensor, g: np.ndarray) -> Tensor:
    """Surrogate whose gradient w.r.t. ``x_t`` is ``g / B`` (a VJP through the generator)."""
    return T.scale(T.sum(x_t * T.stop_grad(g)), 1.0 / x_t.shape[0])


# ---------------------------------------------------------------- adversarial baseline

def adversarial_losses(fake, head, gen: Triple, real: Triple) -> tuple[Tensor, Tensor]:
    """``(gen_term, disc_term)`` with ``D = sigmoid(head(features))``.

    disc_term = mean ln D(x_real) + mean ln(1 - D(x_gen))   (maximized by D)
    gen_term  = mean ln(1 - D(x_gen))                        (minimized by G)
    """
    lg = head.logit(fake.features(gen.t, gen.x_t, gen.cond))
    lr = head.logit(fake.features(real.t, real.x_t, real.cond))
    log_1m_dg = T.log_sigmoid(-lg)
    gen_term = T.mean(log_1m_dg)
    disc_term = T.mean(T.log_sigmoid(lr)) + gen_term
    return gen_term, disc_term
