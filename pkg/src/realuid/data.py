"""Built-in synthetic datasets (stand-ins for image data at desk scale)."""
from __future__ import annotations

import numpy as np


def gauss1d(n, rng, mu=2.0, std=1.0):
    return mu + std * rng.standard_normal((n, 1))


def gauss_mix(n, rng, means=(-2.0, 2.0), std=0.5, weights=None):
    means = np.asarray(means, dtype=np.float64)
    if means.ndim == 1:
        means = means[:, None]
    k = rng.choice(len(means), size=n, p=weights)
    return means[k] + std * rng.standard_normal((n, means.shape[1]))


def two_moons(n, rng, noise=0.1, scale=1.0):
    n_out = n // 2
    ang = rng.uniform(0.0, np.pi, size=n)
    upper = np.arange(n) < n_out
    x = np.where(upper, np.cos(ang), 1.0 - np.cos(ang))
    y = np.where(upper, np.sin(ang), 0.5 - np.sin(ang))
    pts = np.stack([x - 0.5, y - 0.25], axis=1)
    pts = pts + noise * rng.standard_normal(pts.shape)
    return scale * pts[rng.permutation(n)]


def eight_gaussians(n, rng, radius=2.0, std=0.2):
    ang = 2 * np.pi * np.arange(8) / 8
    centers = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return centers[rng.integers(0, 8, size=n)] + std * rng.standard_normal((n, 2))


def checkerboard(n, rng, size=4, scale=1.0):
    """Uniform over the dark squares of a ``size`` x ``size`` board on [-2, 2]^2."""
    cell = 4.0 / size
    out = np.empty((0, 2))
    while out.shape[0] < n:
        p = rng.uniform(-2.0, 2.0, size=(2 * n, 2))
        ij = np.floor((p + 2.0) / cell).astype(int)
        out = np.concatenate([out, p[(ij[:, 0] + ij[:, 1]) % 2 == 0]])
    return scale * out[:n]


DATASETS = {
    "gauss1d": (gauss1d, 1),
    "gauss_mix": (gauss_mix, None),
    "two_moons": (two_moons, 2),
    "eight_gaussians": (eight_gaussians, 2),
    "checkerboard": (checkerboard, 2),
}


class DataSampler:
    """Named dataset with fixed parameters: ``sampler(n, rng) -> (n, D)``."""

    def __init__(self, name: str, **params):
        if name not in DATASETS:
            raise ValueError(f"unknown dataset {name!r}; expected one of {sorted(DATASETS)}")
        self.name = name
        self.params = params
        fn, dim = DATASETS[name]
        self._fn = fn
        if dim is None:
            means = np.asarray(params.get("means", (-2.0, 2.0)))
            dim = 1 if means.ndim == 1 else means.shape[1]
        self.dim = dim
        # validate parameters eagerly
        self(2, np.random.default_rng(0))

    def __call__(self, n, rng) -> np.ndarray:
        return np.asarray(self._fn(n, rng, **self.params), dtype=np.float64).reshape(n, -1)


def coupling_translation(n, rng, mu0=0.0, std0=1.0, shift=1.0, noise=0.1):
    """Pairs ``(x0, xT)`` with ``xT = x0 + shift + noise * xi`` in 1D."""
    x0 = mu0 + std0 * rng.standard_normal((n, 1))
    xT = x0 + shift + noise * rng.standard_normal((n, 1))
    return x0, xT


def translation_posterior_mean(xT, mu0=0.0, std0=1.0, shift=1.0, noise=0.1):
    """``E[x0 | xT]`` for :func:`coupling_translation` (linear-Gaussian)."""
    k = std0 ** 2 / (std0 ** 2 + noise ** 2)
    return mu0 + k * (np.asarray(xT) - shift - mu0)


COUPLINGS = {"translation": coupling_translation}


class CouplingSampler:
    """Named coupling: ``sampler(n, rng) -> (x0, xT)``."""

    def __init__(self, name: str, **params):
        if name not in COUPLINGS:
            raise ValueError(f"unknown coupling {name!r}; expected one of {sorted(COUPLINGS)}")
        self.name = name
        self.params = params
        self._fn = COUPLINGS[name]
        x0, _ = self(2, np.random.default_rng(0))
        self.dim = x0.shape[1]

    def __call__(self, n, rng):
        return self._fn(n, rng, **self.params)
