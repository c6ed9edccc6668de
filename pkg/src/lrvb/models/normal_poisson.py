"""Poisson GLMM with a Gaussian latent log-rate per observation.

    z_n | beta, tau ~ N(beta * x_n, 1 / tau)
    y_n | z_n       ~ Poisson(exp(z_n))
    beta ~ N(0, sigma2_beta),  tau ~ Gamma(alpha_tau, beta_tau)

q(beta) is Gaussian and q(tau) gamma (both exact coordinate maximisers);
q(z_n) is restricted to Gaussians and fitted numerically, which is
possible because E_q[exp z] has a closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import special

from .. import expfam as ef
from ..engine import BlockDiagonalZSolver, BlockLayout, LrvbResult
from ..errors import ConfigError, DomainError, InnerNoConvergence
from ..optimizer import FitResult, ModelProblem, coordinate_ascent

BETA, BETA2, TAU, LOG_TAU = 0, 1, 2, 3
ALPHA_LABELS = ("beta", "beta2", "tau", "log_tau")


@dataclass(frozen=True)
class NpDataset:
    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y)
        x = np.asarray(self.x, dtype=float)
        if y.ndim != 1 or x.shape != y.shape or y.size == 0:
            raise ConfigError("y and x must be equal-length non-empty vectors")
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ConfigError("y must be non-negative integer counts")
        if not np.all(np.isfinite(x)):
            raise ConfigError("x must be finite")
        object.__setattr__(self, "y", y.astype(float))
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class NpPriors:
    sigma2_beta: float = 10.0
    alpha_tau: float = 1.0
    beta_tau: float = 1.0

    def __post_init__(self):
        if min(self.sigma2_beta, self.alpha_tau, self.beta_tau) <= 0:
            raise ConfigError("prior hyperparameters must be positive")


def np_simulate(n: int, beta: float, tau: float, seed: int, x_sd: float = 1.0, x=None):
    """Simulate counts; returns ``(dataset, truth)`` with the latent ``z``."""
    if n < 1 or tau <= 0:
        raise ConfigError("need n >= 1 and tau > 0")
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, x_sd, n) if x is None else np.asarray(x, dtype=float)
    z = rng.normal(beta * x, 1.0 / np.sqrt(tau))
    y = rng.poisson(np.exp(z))
    return NpDataset(y, x), {"beta": beta, "tau": tau, "z": z}


def np_expected_exp_z(ez, ez2):
    """E[exp z] for Gaussian z with the given first two moments."""
    ez = np.asarray(ez, dtype=float)
    var = np.asarray(ez2, dtype=float) - ez**2
    if np.any(var < 0):
        raise DomainError("E[z^2] must be at least E[z]^2")
    return np.exp(ez + 0.5 * var)


def _exp_term(z1, z2):
    # as a polynomial in the mean parameters; defined for any input
    return np.exp(z1 + 0.5 * (z2 - z1**2))


class NormalPoissonProblem(ModelProblem):
    log_joint_constant = "none (all normalising constants included)"

    def __init__(self, data: NpDataset, priors: NpPriors = NpPriors(), inner_tol: float = 1e-10):
        self.data = data
        self.priors = priors
        self.inner_tol = inner_tol
        self.layout = BlockLayout(
            [
                ("beta", ef.GaussianUV(), 1, "alpha"),
                ("tau", ef.Gamma(), 1, "alpha"),
                ("z", ef.GaussianUV(), data.n, "z"),
            ]
        )
        self.z_solver = BlockDiagonalZSolver(2)
        self.default_order = ["beta", "tau", "z"]
        self.sum_x2 = float(data.x @ data.x)
        self._log_y_fact = special.gammaln(data.y + 1.0).sum()

    def split(self, m):
        m = np.asarray(m, dtype=float)
        z = m[4:].reshape(-1, 2)
        return m[0], m[1], m[2], m[3], z[:, 0], z[:, 1]

    def expected_log_joint(self, m) -> float:
        b1, b2, t1, t2, z1, z2 = self.split(m)
        x, y = self.data.x, self.data.y
        p = self.priors
        n = self.data.n
        lik_z = (-0.5 * t1 * z2 + x * t1 * b1 * z1 - 0.5 * x**2 * t1 * b2).sum() + 0.5 * n * t2
        lik_z -= 0.5 * n * np.log(2 * np.pi)
        lik_y = (-_exp_term(z1, z2) + y * z1).sum() - self._log_y_fact
        prior_b = -0.5 * b2 / p.sigma2_beta - 0.5 * np.log(2 * np.pi * p.sigma2_beta)
        prior_t = p.alpha_tau * np.log(p.beta_tau) - special.gammaln(p.alpha_tau)
        prior_t += (p.alpha_tau - 1.0) * t2 - p.beta_tau * t1
        return float(lik_z + lik_y + prior_b + prior_t)

    def hessian(self, m):
        b1, b2, t1, t2, z1, z2 = self.split(m)
        x = self.data.x
        n = self.data.n
        iz1 = 4 + 2 * np.arange(n)
        iz2 = iz1 + 1
        e = _exp_term(z1, z2)
        rows = [BETA, BETA2]
        cols = [TAU, TAU]
        vals = [float(x @ z1), -0.5 * self.sum_x2]
        rows += [np.full(n, BETA), np.full(n, TAU), np.full(n, TAU), iz1, iz1, iz2]
        cols += [iz1, iz1, iz2, iz1, iz2, iz2]
        vals += [
            x * t1,
            x * b1,
            np.full(n, -0.5),
            -e * ((1.0 - z1) ** 2 - 1.0),
            -0.5 * e * (1.0 - z1),
            -0.25 * e,
        ]
        r = np.concatenate([np.atleast_1d(v) for v in rows])
        c = np.concatenate([np.atleast_1d(v) for v in cols])
        v = np.concatenate([np.atleast_1d(v) for v in vals])
        off = r != c
        size = self.layout.size
        return sp.csr_matrix(
            (np.concatenate([v, v[off]]), (np.concatenate([r, c[off]]), np.concatenate([c, r[off]]))),
            shape=(size, size),
        )

    # coordinate updates

    def update(self, states, name):
        if name == "beta":
            return np_update_beta(states, self.data, self.priors)
        if name == "tau":
            return np_update_tau(states, self.data, self.priors)
        if name == "z":
            return np_update_z(states, self.data, tol=self.inner_tol)
        raise KeyError(name)

    def initial_states(self, mode="moment"):
        if mode != "moment":
            raise ValueError(f"unknown init mode {mode!r}")
        x, y = self.data.x, self.data.y
        a = np.log(y + 0.5)
        sxx = max(self.sum_x2, 1e-12)
        b = float(x @ a / sxx)
        resid = a - b * x
        tau = 1.0 / max(resid.var(), 1e-2)
        n = self.data.n
        return {
            "beta": ef.gaussian_uv(b, 1.0 / (tau * sxx + 1.0 / self.priors.sigma2_beta)),
            "tau": ef.gamma(0.5 * n + self.priors.alpha_tau, (0.5 * n + self.priors.alpha_tau) / tau),
            "z": ef.gaussian_uv(a, 1.0 / (tau + y + 0.5)),
        }


def np_update_beta(states, data: NpDataset, priors: NpPriors) -> ef.FactorState:
    t1 = states["tau"].mean[0]
    z1 = states["z"].mean[:, 0]
    eta = np.array([t1 * float(data.x @ z1), -0.5 * (t1 * float(data.x @ data.x) + 1.0 / priors.sigma2_beta)])
    return ef.FactorState.from_natural(ef.GaussianUV(), eta)


def np_update_tau(states, data: NpDataset, priors: NpPriors) -> ef.FactorState:
    b1, b2 = states["beta"].mean
    z = states["z"].mean
    x = data.x
    shape = priors.alpha_tau + 0.5 * data.n
    rate = priors.beta_tau + 0.5 * float((z[:, 1] - 2 * x * b1 * z[:, 0] + x**2 * b2).sum())
    if rate <= 0:
        raise DomainError("tau update produced a non-positive rate")
    return ef.gamma(shape, rate)


def _z_objective(a, s, c, t):
    v = np.exp(s)
    return c * a - 0.5 * t * (a * a + v) - np.exp(a + 0.5 * v) + 0.5 * s


def np_update_z(states, data: NpDataset, tol: float = 1e-10, max_newton: int = 100) -> ef.FactorState:
    """Gaussian q(z_n) maximising each observation's ELBO contribution.

    Each problem is two-dimensional in ``(E z, log Var z)``; the objective
    is strictly concave in those coordinates, so damped Newton with Armijo
    backtracking converges from any start.  All ``n`` problems are solved
    together.
    """
    b1 = states["beta"].mean[0]
    t = states["tau"].mean[0]
    prev = states.get("z")
    c = data.x * t * b1 + data.y
    if prev is not None:
        a = prev.mean[:, 0].copy()
        s = np.log(prev.mean[:, 1] - a**2)
    else:
        a = np.log(data.y + 0.5)
        s = -np.log(t + data.y + 0.5)
    active = np.ones(a.size, dtype=bool)
    for _ in range(max_newton):
        v = np.exp(s)
        e = np.exp(a + 0.5 * v)
        ga = c - t * a - e
        gs = -0.5 * t * v - 0.5 * e * v + 0.5
        scale = 1.0 + np.abs(c) + t * np.abs(a) + e
        active = (np.abs(ga) > tol * scale) | (np.abs(gs) > tol * (1.0 + t * v + e * v))
        if not active.any():
            break
        haa = -t - e
        has = -0.5 * e * v
        hss = -0.5 * t * v - 0.5 * e * v - 0.25 * e * v * v
        det = haa * hss - has * has
        da = -(hss * ga - has * gs) / det
        ds = -(-has * ga + haa * gs) / det
        bad = ~np.isfinite(da) | ~np.isfinite(ds)
        da[bad], ds[bad] = ga[bad], gs[bad]
        f0 = _z_objective(a, s, c, t)
        slope = ga * da + gs * ds
        step = np.ones_like(a)
        for _ in range(40):
            with np.errstate(over="ignore", invalid="ignore"):
                f1 = _z_objective(a + step * da, s + step * ds, c, t)
            ok = np.isfinite(f1) & (f1 >= f0 + 1e-4 * step * slope - 1e-12 * (1.0 + np.abs(f0)))
            if np.all(ok | ~active):
                break
            step = np.where(ok | ~active, step, 0.5 * step)
        else:
            # near the optimum roundoff can hide any increase; the full
            # Newton step is then the right move if it stays finite
            with np.errstate(over="ignore", invalid="ignore"):
                f_full = _z_objective(a + da, s + ds, c, t)
            step = np.where(ok | ~np.isfinite(f_full), step, 1.0)
        a = np.where(active, a + step * da, a)
        s = np.where(active, s + step * ds, s)
    else:
        raise InnerNoConvergence(f"z update: {int(active.sum())} problems unconverged after {max_newton} Newton steps")
    return ef.gaussian_uv(a, np.exp(s))


def np_problem(data: NpDataset, priors: NpPriors = NpPriors()) -> NormalPoissonProblem:
    return NormalPoissonProblem(data, priors)


def np_fit(data: NpDataset, priors: NpPriors = NpPriors(), **kw) -> FitResult:
    return coordinate_ascent(NormalPoissonProblem(data, priors), **kw)


def np_lrvb(data: NpDataset, priors: NpPriors = NpPriors(), *, schur: bool = True, **kw) -> tuple[LrvbResult, FitResult]:
    """Fit to convergence and return the corrected covariance of the globals.

    With ``schur=True`` (default) ``sigma_hat`` is 4 x 4 over
    ``(beta, beta^2, tau, log tau)`` and ``cross_covariance()`` gives each
    ``(E z_n, E z_n^2)`` against them.
    """
    fit = np_fit(data, priors, **kw)
    if not fit.converged:
        raise DomainError("MFVB fit did not converge; refusing to differentiate a non-fixed point")
    return fit.lrvb(schur=schur), fit


def z_exp_gradient(m_z: np.ndarray) -> np.ndarray:
    """Gradient of E[exp z_n] with respect to (E z_n, E z_n^2)."""
    z1, z2 = m_z
    e = _exp_term(z1, z2)
    return np.array([e * (1.0 - z1), 0.5 * e])
