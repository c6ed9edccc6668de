"""Central finite-difference Hessians of a scalar function."""
from __future__ import annotations

import numpy as np

from ..errors import DomainError

DEFAULT_STEP = 1e-4


def _stencil(f, m, h, idx):
    d = idx.size
    out = np.empty((d, d))
    f0 = f(m)
    for a, i in enumerate(idx):
        e_i = np.zeros_like(m)
        e_i[i] = h
        out[a, a] = (f(m + e_i) - 2.0 * f0 + f(m - e_i)) / h**2
        for b in range(a + 1, d):
            e_j = np.zeros_like(m)
            e_j[idx[b]] = h
            val = (f(m + e_i + e_j) - f(m + e_i - e_j) - f(m - e_i + e_j) + f(m - e_i - e_j)) / (4 * h * h)
            out[a, b] = out[b, a] = val
    return out


def fd_hessian(f, m, step: float = DEFAULT_STEP, index=None) -> np.ndarray:
    """Symmetric central-difference Hessian of ``f`` at ``m``.

    ``index`` restricts the stencil to a subset of coordinates.  If any
    stencil point raises :class:`DomainError` the step is halved once and
    the evaluation retried.
    """
    m = np.asarray(m, dtype=float)
    idx = np.arange(m.size) if index is None else np.asarray(index)
    try:
        return _stencil(f, m, step, idx)
    except DomainError:
        return _stencil(f, m, 0.5 * step, idx)


def fd_gradient(f, m, step: float = 1e-6) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    g = np.empty_like(m)
    for i in range(m.size):
        e = np.zeros_like(m)
        e[i] = step
        g[i] = (f(m + e) - f(m - e)) / (2 * step)
    return g
