from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class OptimConfig:
    lr: float = 3e-5
    betas: tuple = (0.0, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float | None = 1.0
    warmup_steps: int = 0


def clip_by_global_norm(grads, max_norm):
    norm = float(np.sqrt(np.sum([np.sum(g * g) for g in grads])))
    if max_norm is not None and norm > max_norm:
        s = max_norm / norm
        grads = [g * s for g in grads]
    return grads, norm


class AdamW:
    """Adam with decoupled weight decay, global-norm clipping and linear warm-up.

    ``step`` returns False (and leaves parameters untouched) when a gradient
    is not finite.
    """

    def __init__(self, params, config: OptimConfig | None = None):
        self.params = list(params)
        self.config = config or OptimConfig()
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0
        self.last_grad_norm = 0.0
        self.skipped = 0

    def lr_now(self):
        c = self.config
        if c.warmup_steps and self.t < c.warmup_steps:
            return c.lr * (self.t + 1) / c.warmup_steps
        return c.lr

    def step(self, grads=None) -> bool:
        c = self.config
        if grads is None:
            grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        if not all(np.all(np.isfinite(g)) for g in grads):
            self.skipped += 1
            return False
        grads, self.last_grad_norm = clip_by_global_norm(grads, c.clip_norm)
        lr = self.lr_now()
        self.t += 1
        b1, b2 = c.betas
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            upd = (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            if c.weight_decay:
                p.data = p.data * (1.0 - lr * c.weight_decay)
            p.data = p.data - lr * upd
        return True

    def zero_grad(self):
        for p in self.params:
            p.grad = None
