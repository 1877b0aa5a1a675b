"""Sample-based distribution distances (desk-scale stand-ins for FID) and
the per-evaluation :class:`MetricsRecord`."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricsRecord:
    step: int
    losses: dict = field(default_factory=dict)
    w2_gauss: float | None = None
    sliced_w2: float | None = None
    energy_dist: float | None = None
    wall_ms: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = {"step": self.step, "losses": self.losses, "w2_gauss": self.w2_gauss,
             "sliced_w2": self.sliced_w2, "energy_dist": self.energy_dist,
             "wall_ms": self.wall_ms}
        if self.extra:
            d["extra"] = self.extra
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        d = json.loads(line)
        return cls(d["step"], d.get("losses", {}), d.get("w2_gauss"), d.get("sliced_w2"),
                   d.get("energy_dist"), d.get("wall_ms", 0.0), d.get("extra", {}))


def read_metrics(path) -> list[MetricsRecord]:
    with open(path) as fh:
        return [MetricsRecord.from_json(line) for line in fh if line.strip()]


def w2_gaussian(a, b) -> float:
    """Closed-form 2-Wasserstein distance between 1D Gaussians."""
    return math.sqrt((a.mean - b.mean) ** 2 + (math.sqrt(a.var) - math.sqrt(b.var)) ** 2)


def _as_2d(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError("empty sample set")
    return x


def w2_1d(a, b) -> float:
    """Exact W2 between two 1D empirical measures (any sizes)."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample set")
    if a.size == b.size:
        return float(np.sqrt(np.mean((a - b) ** 2)))
    # integrate the squared quantile difference over merged CDF breakpoints
    u = np.union1d(np.arange(1, a.size + 1) / a.size, np.arange(1, b.size + 1) / b.size)
    du = np.diff(np.concatenate([[0.0], u]))
    mid = u - 0.5 * du
    qa = a[np.minimum((mid * a.size).astype(int), a.size - 1)]
    qb = b[np.minimum((mid * b.size).astype(int), b.size - 1)]
    return float(np.sqrt(np.sum(du * (qa - qb) ** 2)))


def projection_directions(dim: int, n: int, rng) -> np.ndarray:
    """Unit directions; in 2D evenly spaced angles under a random rotation."""
    if dim == 1:
        return np.ones((1, 1))
    if dim == 2:
        ang = rng.uniform(0.0, np.pi / n) + np.pi * np.arange(n) / n
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sliced_w2(samples_a, samples_b, n_projections=128, rng=None) -> float:
    """Mean over unit directions of the 1D W2 between the projected samples."""
    a, b = _as_2d(samples_a), _as_2d(samples_b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if n_projections < 1:
        raise ValueError("n_projections must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    dirs = projection_directions(a.shape[1], n_projections, rng)
    pa, pb = a @ dirs.T, b @ dirs.T
    return float(np.mean([w2_1d(pa[:, k], pb[:, k]) for k in range(dirs.shape[0])]))


def _mean_pairwise(x, y, same, chunk=2048):
    if x.shape[1] == 1:
        return _mean_abs_1d(x[:, 0], y[:, 0], same)
    total = 0.0
    for i in range(0, x.shape[0], chunk):
        xi = x[i:i + chunk]
        d = np.sqrt(np.maximum(
            np.sum(xi ** 2, 1)[:, None] + np.sum(y ** 2, 1)[None, :] - 2.0 * xi @ y.T, 0.0))
        if same:
            idx = np.arange(xi.shape[0])
            d[idx, i + idx] = 0.0
        total += d.sum()
    n = x.shape[0] * (y.shape[0] - 1 if same else y.shape[0])
    return total / n


def _mean_abs_1d(x, y, same):
    # sum_{i,j} |x_i - y_j| via sorting
    ys = np.sort(y)
    csum = np.concatenate([[0.0], np.cumsum(ys)])
    k = np.searchsorted(ys, x, side="right")
    total = np.sum(x * k - csum[k] + (csum[-1] - csum[k]) - x * (ys.size - k))
    n = x.size * (y.size - 1 if same else y.size)
    return float(total / n)


def energy_distance(samples_a, samples_b) -> float:
    """``2 E|A-B| - E|A-A'| - E|B-B'|`` with U-statistics for the within terms."""
    a, b = _as_2d(samples_a), _as_2d(samples_b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    ab = _mean_pairwise(a, b, same=False)
    aa = _mean_pairwise(a, a, same=True) if a.shape[0] > 1 else 0.0
    bb = _mean_pairwise(b, b, same=True) if b.shape[0] > 1 else 0.0
    return float(2.0 * ab - aa - bb)
