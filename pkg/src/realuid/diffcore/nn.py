"""Small time-conditioned MLPs used as teacher, fake model, generator and
discriminator head, plus parameter flattening and EMA tracking."""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

ACTIVATIONS = {"tanh": T.tanh, "silu": T.silu}


def time_features(t, n_freqs: int) -> np.ndarray:
    """Sinusoidal features of ``t``: ``n_freqs`` (sin, cos) pairs, shape (B, 2*n_freqs)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    if n_freqs == 0:
        return np.zeros((t.shape[0], 0))
    freqs = np.pi * 2.0 ** np.arange(n_freqs)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class Mlp:
    """Fully connected net ``f(t, x[, cond])``.

    The input layer sees ``concat(x, cond, time_features(t))`` so
    ``layer_widths[0] == data_dim + cond_dim + 2 * time_freqs``.
    """

    def __init__(self, data_dim, hidden=(128, 128, 128), activation="silu",
                 time_freqs=8, cond_dim=0, rng=None, zero_last=False):
        if data_dim <= 0 or any(int(h) <= 0 for h in hidden):
            raise ValueError(f"layer widths must be positive, got data_dim={data_dim} hidden={hidden}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.data_dim = int(data_dim)
        self.cond_dim = int(cond_dim)
        self.time_freqs = int(time_freqs)
        self.activation = activation
        in_dim = self.data_dim + self.cond_dim + 2 * self.time_freqs
        self.layer_widths = [in_dim, *[int(h) for h in hidden], self.data_dim]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        n_layers = len(self.layer_widths) - 1
        for i, (a, b) in enumerate(zip(self.layer_widths[:-1], self.layer_widths[1:])):
            w = rng.standard_normal((a, b)) * np.sqrt(1.0 / a)
            if zero_last and i == n_layers - 1:
                w = np.zeros((a, b))
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(b), requires_grad=True))
        self._frozen = False

    # -- parameters
    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return int(np.sum([p.size for p in self.parameters()]))

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters()])

    def set_flat(self, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {vec.size}")
        i = 0
        for p in self.parameters():
            p.data = vec[i:i + p.size].reshape(p.shape).copy()
            i += p.size

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def spec(self) -> dict:
        return {"data_dim": self.data_dim, "hidden": self.layer_widths[1:-1],
                "activation": self.activation, "time_freqs": self.time_freqs,
                "cond_dim": self.cond_dim}

    @classmethod
    def from_spec(cls, spec: dict, rng=None) -> "Mlp":
        return cls(spec["data_dim"], hidden=spec["hidden"], activation=spec["activation"],
                   time_freqs=spec["time_freqs"], cond_dim=spec.get("cond_dim", 0), rng=rng)

    def copy(self) -> "Mlp":
        other = Mlp.from_spec(self.spec())
        other.set_flat(self.get_flat())
        return other

    # -- forward
    def _params(self):
        if self._frozen:
            return ([T.stop_grad(w) for w in self.weights], [T.stop_grad(b) for b in self.biases])
        return self.weights, self.biases

    def _input(self, t, x, cond):
        x = T.as_tensor(x)
        parts = [x]
        if self.cond_dim:
            if cond is None:
                raise ValueError("conditional network called without cond")
            parts.append(T.as_tensor(cond))
        if self.time_freqs:
            parts.append(Tensor(time_features(np.broadcast_to(t, (x.shape[0],)), self.time_freqs)))
        return T.concat(parts, axis=1) if len(parts) > 1 else x

    def features(self, t, x, cond=None) -> Tensor:
        """Activations of the last hidden layer."""
        ws, bs = self._params()
        h = self._input(t, x, cond)
        act = ACTIVATIONS[self.activation]
        for w, b in zip(ws[:-1], bs[:-1]):
            h = act(T.matmul(h, w) + b)
        return h

    def __call__(self, t, x, cond=None) -> Tensor:
        ws, bs = self._params()
        h = self.features(t, x, cond)
        return T.matmul(h, ws[-1]) + bs[-1]


@contextlib.contextmanager
def frozen(*nets):
    """Treat the parameters of ``nets`` as constants: gradients still flow
    through their inputs, never into their weights."""
    prev = [getattr(n, "_frozen", False) for n in nets]
    for n in nets:
        n._frozen = True
    try:
        yield
    finally:
        for n, p in zip(nets, prev):
            n._frozen = p


class Generator:
    """One-step map ``z -> x0`` (``(z, x_T) -> x0`` when conditional).

    With ``residual`` the output is ``z + net(0, z)``.
    """

    def __init__(self, net: Mlp, residual=True, conditional=False):
        if conditional and net.cond_dim == 0:
            raise ValueError("conditional generator needs a net with cond_dim > 0")
        self.net = net
        self.residual = residual
        self.conditional = conditional

    def parameters(self):
        return self.net.parameters()

    def __call__(self, z, cond=None) -> Tensor:
        z = T.as_tensor(z)
        out = self.net(np.zeros(z.shape[0]), z, cond if self.conditional else None)
        return z + out if self.residual else out


class DiscHead:
    """Two-layer head on the fake model's last hidden features -> logit."""

    def __init__(self, in_dim, hidden=64, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.w1 = Tensor(rng.standard_normal((in_dim, hidden)) / np.sqrt(in_dim), requires_grad=True)
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.w2 = Tensor(rng.standard_normal((hidden, 1)) / np.sqrt(hidden), requires_grad=True)
        self.b2 = Tensor(np.zeros(1), requires_grad=True)

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def logit(self, feats: Tensor) -> Tensor:
        h = T.silu(T.matmul(feats, self.w1) + self.b1)
        return T.reshape(T.matmul(h, self.w2) + self.b2, (-1,))


@dataclass
class EmaState:
    decay: float
    shadow: np.ndarray = field(repr=False)

    @classmethod
    def of(cls, params_flat, decay=0.999):
        return cls(decay, np.array(params_flat, dtype=np.float64))


def ema_update(state: EmaState, params) -> EmaState:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != state.shadow.shape:
        raise ValueError(f"EMA length mismatch: shadow {state.shadow.shape} vs params {params.shape}")
    d = state.decay
    state.shadow = d * state.shadow + (1.0 - d) * params
    return state
