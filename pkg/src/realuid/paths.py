"""Conditional probability paths and their regression targets.

Time runs from data (t=0) to the noise / corrupted endpoint (t=1). Each
kind turns ``(t, x0, endpoint, eps)`` into ``x_t`` and the conditional
target the matching network regresses on:

* ``flow_linear``      x_t = (1-t) x0 + t x1,                      target x1 - x0
* ``diffusion_vp``     x_t = a_t x0 + s_t eps,                     target -(x_t - a_t x0) / s_t^2
* ``bridge_brownian``  x_t = (1-t) x0 + t xT + e sqrt(t(1-t)) eps, target -(x_t - x0) / (e^2 t)
* ``interpolant``      x_t = (1-t) x0 + t x1 + g_t eps,            target (x1 - x0) + g'_t eps

with ``a_t = 1``, ``s_t = s_min + t (s_max - s_min)`` and ``g_t = amp t (1-t)``.
``x0`` may be a :class:`Tensor` carrying a generator graph; ``x_t`` and the
target are then differentiable in it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .diffcore import tensor as T
from .diffcore.tensor import Tensor

KINDS = ("flow_linear", "diffusion_vp", "bridge_brownian", "interpolant")
SCORE_KINDS = ("diffusion_vp", "bridge_brownian")


@dataclass(frozen=True)
class PathSpec:
    kind: str = "flow_linear"
    sigma_min: float = 0.01
    sigma_max: float = 1.0
    bridge_eps: float = 1.0
    interp_amp: float = 0.5
    t_lo: float = 1e-3
    t_hi: float = 1.0 - 1e-3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown path kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.t_lo < self.t_hi <= 1.0:
            raise ValueError("need 0 <= t_lo < t_hi <= 1")

    @property
    def is_score(self) -> bool:
        return self.kind in SCORE_KINDS

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PathSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown path keys: {sorted(unknown)}")
        return cls(**d)

    # schedules
    def alpha(self, t):
        return np.ones_like(np.asarray(t, dtype=np.float64))

    def sigma(self, t):
        return self.sigma_min + np.asarray(t, dtype=np.float64) * (self.sigma_max - self.sigma_min)

    def gamma(self, t):
        t = np.asarray(t, dtype=np.float64)
        return self.interp_amp * t * (1.0 - t)

    def gamma_dot(self, t):
        return self.interp_amp * (1.0 - 2.0 * np.asarray(t, dtype=np.float64))


@dataclass
class Triple:
    """A batch of ``(t, x_t, target)`` with the endpoints and noise used."""

    t: np.ndarray
    x_t: Tensor
    target: Tensor
    x0: Tensor
    endpoint: np.ndarray
    eps: np.ndarray | None = None
    cond: np.ndarray | None = None

    def __len__(self):
        return len(self.t)

    def detached(self) -> "Triple":
        return Triple(self.t, T.stop_grad(self.x_t), T.stop_grad(self.target), T.stop_grad(self.x0),
                      self.endpoint, self.eps, self.cond)


def sample_t(spec: PathSpec, n: int, rng) -> np.ndarray:
    """Uniform times; score kinds stay inside ``[t_lo, t_hi]``."""
    if spec.is_score:
        return rng.uniform(spec.t_lo, spec.t_hi, size=n)
    return rng.uniform(0.0, 1.0, size=n)


def _fix_times(spec, t, rng):
    t = np.asarray(t, dtype=np.float64).reshape(-1).copy()
    if spec.is_score:
        bad = (t < spec.t_lo) | (t > spec.t_hi)
        if bad.any():
            t[bad] = rng.uniform(spec.t_lo, spec.t_hi, size=int(bad.sum()))
    return t


def _col(v):
    return np.asarray(v, dtype=np.float64).reshape(-1, 1)


def sample_triple(spec: PathSpec, x0, endpoint, rng, t=None, eps=None, cond=None) -> Triple:
    """Build a :class:`Triple` from data ``x0`` (B, D) and ``endpoint`` (B, D).

    ``endpoint`` is the noise sample x1 (flow / interpolant), the target-side
    endpoint x_T (bridge), and is ignored for ``diffusion_vp`` where ``eps``
    carries the noise. Missing ``t`` / ``eps`` are drawn from ``rng``.
    """
    x0 = T.as_tensor(x0)
    if x0.ndim != 2:
        raise ValueError(f"x0 must be (B, D), got {x0.shape}")
    b, d = x0.shape
    t = sample_t(spec, b, rng) if t is None else _fix_times(spec, t, rng)
    if t.shape[0] != b:
        raise ValueError(f"got {t.shape[0]} times for a batch of {b}")
    endpoint = None if endpoint is None else np.asarray(endpoint, dtype=np.float64)
    kind = spec.kind
    needs_eps = kind != "flow_linear"
    if needs_eps and eps is None:
        eps = rng.standard_normal((b, d))
    tc = _col(t)

    if kind == "flow_linear":
        x_t = x0 * (1.0 - tc) + endpoint * tc
        target = Tensor(endpoint) - x0
    elif kind == "diffusion_vp":
        a, s = _col(spec.alpha(t)), _col(spec.sigma(t))
        ax0 = x0 * a
        x_t = ax0 + eps * s
        target = (x_t - ax0) * (-1.0 / s ** 2)
        endpoint = eps if endpoint is None else endpoint
    elif kind == "bridge_brownian":
        e = spec.bridge_eps
        x_t = x0 * (1.0 - tc) + endpoint * tc + eps * (e * np.sqrt(tc * (1.0 - tc)))
        target = (x_t - x0) * (-1.0 / (e * e * tc))
    else:  # interpolant
        x_t = x0 * (1.0 - tc) + endpoint * tc + eps * _col(spec.gamma(t))
        target = (Tensor(endpoint) - x0) + eps * _col(spec.gamma_dot(t))
    return Triple(t, x_t, target, x0, endpoint, eps, cond)


def marginal_gaussian(spec: PathSpec, p0, t):
    """Marginal at time t of ``p0 = N(mu, v)`` under flow_linear with N(0,1) noise."""
    from .oracle import Gauss1D

    if spec.kind != "flow_linear":
        raise ValueError(f"closed-form marginal only for flow_linear, not {spec.kind}")
    return Gauss1D(p0.mean * (1.0 - t), (1.0 - t) ** 2 * p0.var + t ** 2)
