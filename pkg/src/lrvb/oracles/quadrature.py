"""Tensor-grid Gauss-Legendre moments for posteriors of dimension <= 4.

The integrator works on an explicit box.  Point counts per axis double
until two successive estimates of every tracked mean and covariance agree
to ``rtol`` on the natural scale of the functional (means relative to
their sd, covariances relative to ``sd_i * sd_j``).  The last, finest
estimate is returned.

Two posterior helpers live here as well: the normal-Poisson model with at
most three observations (``beta`` integrated in closed form), and the
one-component, one-dimensional Gaussian mixture.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

from ..errors import DimensionTooLarge, NoConvergence

MAX_DIM = 4


@dataclass
class QuadratureResult:
    labels: tuple[str, ...]
    mean: np.ndarray
    cov: np.ndarray
    n_per_axis: int
    rel_change: float
    log_evidence: float
    box: np.ndarray

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def moment(self, label: str) -> tuple[float, float]:
        """``(mean, sd)`` of one tracked functional."""
        i = self.labels.index(label)
        return float(self.mean[i]), float(self.sd[i])


def _grid_moments(log_density, funcs, box, n, chunk):
    d = box.shape[0]
    nodes, weights = np.polynomial.legendre.leggauss(n)
    lo, hi = box[:, 0], box[:, 1]
    half = 0.5 * (hi - lo)
    pts = 0.5 * (hi + lo)[:, None] + half[:, None] * nodes[None, :]  # d x n
    logw_axis = np.log(weights)[None, :] + np.log(half)[:, None]
    shift = None
    total = n**d
    log_max = -np.inf
    s0 = 0.0
    s1 = s2 = None
    for start in range(0, total, chunk):
        idx = np.unravel_index(np.arange(start, min(start + chunk, total)), (n,) * d)
        theta = np.stack([pts[j, idx[j]] for j in range(d)], axis=1)
        lw = sum(logw_axis[j, idx[j]] for j in range(d))
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            lp = np.asarray(log_density(theta), dtype=float) + lw
        lp = np.where(np.isnan(lp), -np.inf, lp)
        f = np.asarray(funcs(theta), dtype=float)
        if shift is None:
            shift = np.asarray(funcs(0.5 * (lo + hi)[None, :]), dtype=float)[0]
            s1 = np.zeros(f.shape[1])
            s2 = np.zeros((f.shape[1], f.shape[1]))
        f = f - shift
        m = lp.max()
        if m == -np.inf:
            continue
        if m > log_max:
            scale = np.exp(log_max - m) if np.isfinite(log_max) else 0.0
            s0, s1, s2 = s0 * scale, s1 * scale, s2 * scale
            log_max = m
        w = np.exp(lp - log_max)
        s0 += w.sum()
        s1 += w @ f
        s2 += (f * w[:, None]).T @ f
    if s0 <= 0 or not np.isfinite(log_max):
        raise NoConvergence("posterior has no mass on the quadrature box")
    mean_c = s1 / s0
    cov = s2 / s0 - np.outer(mean_c, mean_c)
    return mean_c + shift, 0.5 * (cov + cov.T), log_max + np.log(s0)


def _change(a, b) -> float:
    (m0, c0), (m1, c1) = a, b
    sd = np.sqrt(np.maximum(np.diag(c1), 1e-300))
    dm = np.abs(m1 - m0) / sd
    dc = np.abs(c1 - c0) / np.outer(sd, sd)
    return float(max(dm.max(), dc.max()))


def quadrature_posterior(
    log_density: Callable[[np.ndarray], np.ndarray],
    box,
    funcs: Callable[[np.ndarray], np.ndarray] | None = None,
    labels: Sequence[str] | None = None,
    *,
    rtol: float = 1e-6,
    n_start: int = 8,
    max_points: float = 4e7,
    chunk: int = 1 << 20,
) -> QuadratureResult:
    """Posterior moments of ``funcs(theta)`` under ``exp(log_density)``.

    Parameters
    ----------
    log_density
        Vectorised unnormalised log density, ``(M, D) -> (M,)``.
    box
        ``D x 2`` integration bounds; mass outside is ignored.
    funcs
        ``(M, D) -> (M, F)`` functionals to track; identity by default.
    rtol
        Stop once successive refinements agree to this level.

    Raises
    ------
    DimensionTooLarge
        If ``D > 4``.
    NoConvergence
        If the grid would exceed ``max_points`` before agreement.
    """
    box = np.atleast_2d(np.asarray(box, dtype=float))
    d = box.shape[0]
    if d > MAX_DIM:
        raise DimensionTooLarge(f"tensor quadrature limited to {MAX_DIM} dimensions, got {d}")
    if box.shape != (d, 2) or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("box must be D x 2 with lo < hi")
    if funcs is None:
        funcs = lambda t: t  # noqa: E731
    n = n_start
    prev = None
    change = np.inf
    while True:
        if float(n) ** d > max_points:
            raise NoConvergence(f"quadrature not converged at {n // 2} points per axis (change {change:.2e})")
        mean, cov, logz = _grid_moments(log_density, funcs, box, n, chunk)
        if prev is not None:
            change = _change(prev, (mean, cov))
            if change < rtol:
                break
        prev = (mean, cov)
        n *= 2
    if labels is None:
        labels = tuple(f"f{i}" for i in range(mean.size))
    return QuadratureResult(tuple(labels), mean, cov, n, change, float(logz), box)


def auto_box(log_density, x0, drop: float = 40.0, step: float = 0.25, max_steps: int = 4000) -> np.ndarray:
    """Axis-aligned box around the mode where the density falls by ``drop``.

    The mode is found from ``x0`` by Nelder-Mead; each axis is then walked
    outward from it (other coordinates held at the mode).
    """
    f = lambda t: -float(log_density(np.asarray(t, dtype=float)[None, :])[0])  # noqa: E731
    res = optimize.minimize(f, np.asarray(x0, dtype=float), method="Nelder-Mead",
                            options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 20000})
    mode = res.x
    top = -res.fun
    box = np.empty((mode.size, 2))
    for j in range(mode.size):
        for side, sgn in ((0, -1.0), (1, 1.0)):
            t = mode.copy()
            for _ in range(max_steps):
                t[j] += sgn * step
                val = -f(t)
                if not np.isfinite(val) or val < top - drop:
                    break
            else:
                raise NoConvergence(f"density does not decay along axis {j}")
            box[j, side] = t[j]
    return box


# --------------------------------------------------------------------------
# model helpers


def _walk(fn, x0: float, drop: float, step: float = 0.05) -> tuple[float, float]:
    """Interval around the maximiser of a scalar log-bound where it drops by ``drop``."""
    res = optimize.minimize_scalar(lambda v: -fn(v), bracket=(x0 - 1.0, x0 + 1.0))
    top = -res.fun
    out = []
    for sgn in (-1.0, 1.0):
        v = res.x
        while fn(v) > top - drop:
            v += sgn * step
        out.append(v)
    return out[0], out[1]


def np_tiny_posterior(data, priors, rtol: float = 1e-6, drop: float = 36.0, **kw) -> QuadratureResult:
    """Exact moments for a normal-Poisson data set with N <= 3 and y >= 1.

    ``beta`` is conjugate given ``(z, tau)`` and is integrated in closed
    form, so the grid runs over ``(log tau, z_1..z_N)``.  Moments of
    ``beta`` follow from its conditional mean and variance.  The box comes
    from two bounds on the joint density: each ``z_n`` is dominated by its
    Poisson factor and ``log tau`` by the gamma prior times the Gaussian
    normaliser.  Tracked functionals are ``beta``, ``log_tau``, ``tau`` and
    each ``z_n``; ``log_evidence`` is the normalised marginal likelihood.
    """
    x, y = np.asarray(data.x, dtype=float), np.asarray(data.y, dtype=float)
    n = y.size
    if n + 1 > MAX_DIM:
        raise DimensionTooLarge("normal-Poisson quadrature supports at most three observations")
    if np.any(y < 1):
        raise ValueError("zero counts leave z unbounded below on a finite box")
    a_t, b_t, s2b = priors.alpha_tau, priors.beta_tau, priors.sigma2_beta
    sxx = float(x @ x)
    const = -special.gammaln(y + 1.0).sum() - 0.5 * n * np.log(2 * np.pi)
    const += a_t * np.log(b_t) - special.gammaln(a_t)

    def beta_cond(t):
        tau = np.exp(t[:, 0])
        prec = 1.0 / s2b + tau * sxx
        return tau * (t[:, 1:] @ x) / prec, 1.0 / prec

    def logp(t):
        s, z = t[:, 0], t[:, 1:]
        tau = np.exp(s)
        # z | tau ~ N(0, I / tau + s2b x x^T), via the matrix determinant lemma
        zx = z @ x
        quad = tau * (z * z).sum(axis=1) - tau**2 * s2b * zx**2 / (1.0 + tau * s2b * sxx)
        logdet = -n * s + np.log1p(tau * s2b * sxx)
        out = a_t * s - b_t * tau - 0.5 * logdet - 0.5 * quad
        return out + (y * z - np.exp(z)).sum(axis=1) + const

    def funcs(t):
        mb, vb = beta_cond(t)
        return np.column_stack([mb, mb * mb + vb, t[:, 0], np.exp(t[:, 0]), t[:, 1:]])

    box = np.empty((n + 1, 2))
    box[0] = _walk(lambda s: (a_t + 0.5 * n) * s - b_t * np.exp(s), 0.0, drop)
    for i in range(n):
        box[i + 1] = _walk(lambda v, yi=y[i]: yi * v - np.exp(v), np.log(y[i]), drop)
    raw = quadrature_posterior(logp, box, funcs, rtol=rtol, **kw)
    # replace (E beta | ., E beta^2 | .) by beta's own moments
    mean = np.delete(raw.mean, 1)
    cov = np.delete(np.delete(raw.cov, 1, axis=0), 1, axis=1)
    cov[0, 0] = raw.mean[1] - raw.mean[0] ** 2
    labels = ("beta", "log_tau", "tau") + tuple(f"z{i}" for i in range(n))
    return QuadratureResult(labels, mean, cov, raw.n_per_axis, raw.rel_change, raw.log_evidence, raw.box)


def gmm_single_posterior(x, priors, rtol: float = 1e-6, drop: float = 40.0, **kw) -> QuadratureResult:
    """Exact moments of the one-component, one-dimensional mixture.

    Integrates over ``(mu, log lambda)`` under the independent normal
    prior on ``mu`` and the Wishart prior (inverse-scale form) on
    ``lambda``.  Tracked: ``mu``, ``mu^2``, ``lambda``, ``log lambda``.
    ``log_evidence`` is the normalised marginal likelihood.
    """
    x = np.asarray(x, dtype=float).ravel()
    n, sx, sxx = x.size, x.sum(), x @ x
    a = priors.mu_precision
    w0_inv = float(np.asarray(priors.lambda_inv_scale).reshape(-1)[0])
    n0 = priors.lambda_dof

    const = 0.5 * np.log(a / (2 * np.pi)) - 0.5 * n * np.log(2 * np.pi)
    const += 0.5 * n0 * np.log(0.5 * w0_inv) - special.gammaln(0.5 * n0)

    def logp(t):
        mu, s = t[:, 0], t[:, 1]
        lam = np.exp(s)
        out = -0.5 * a * mu**2 + 0.5 * (n0 - 2.0) * s - 0.5 * w0_inv * lam + s
        return out + 0.5 * n * s - 0.5 * lam * (sxx - 2.0 * mu * sx + n * mu**2) + const

    def funcs(t):
        return np.column_stack([t[:, 0], t[:, 0] ** 2, np.exp(t[:, 1]), t[:, 1]])

    x0 = np.array([x.mean(), -np.log(max(x.var(), 1e-12))])
    box = auto_box(logp, x0, drop=drop, step=0.01)
    return quadrature_posterior(logp, box, funcs, ("mu", "mu2", "lam", "log_lam"), rtol=rtol, **kw)
