"""Finite-difference helpers shared by the test modules."""
import numpy as np


def numeric_grad(fn, x: np.ndarray, h=1e-5) -> np.ndarray:
    """Central differences of the scalar ``fn`` w.r.t. the array ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = fn()
        x[i] = old - h
        fm = fn()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8))


def gauss_nodes(n_z=24, n_t=48, t_lo=0.0, t_hi=1.0):
    """Tensor-product rule for E_{t ~ U[t_lo, t_hi]} E_{z, x1 ~ N(0,1)}.

    Returns flat arrays ``(t, z, x1, w)`` with ``w`` scaled so that
    ``sum(w * f) / len(w)`` is the expectation (the losses' weighted mean).
    """
    from numpy.polynomial.hermite_e import hermegauss
    from numpy.polynomial.legendre import leggauss

    zn, zw = hermegauss(n_z)
    zw = zw / zw.sum()
    tn, tw = leggauss(n_t)
    tn = t_lo + 0.5 * (t_hi - t_lo) * (tn + 1.0)
    tw = tw / tw.sum()
    t, z, x1 = (a.ravel() for a in np.meshgrid(tn, zn, zn, indexing="ij"))
    w = np.einsum("i,j,k->ijk", tw, zw, zw).ravel()
    return t, z, x1, w * w.size


# criterion number -> list of (part, passed, detail); printed by conftest at the end of the run
ACCEPTANCE: dict[int, list] = {}


def record(criterion: int, part: str, passed: bool, detail: str):
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(passed), detail))
    print(f"criterion {criterion} [{part}]: {'PASS' if passed else 'FAIL'} ({detail})")
    return bool(passed)
