"""Random-slope linear model with Gaussian group effects.

    y_n | beta, z, tau ~ N(beta^T x_n + r_n z_{k(n)}, 1 / tau)
    z_k | nu           ~ N(0, 1 / nu)
    beta ~ N(0, Sigma_beta),  tau ~ Gamma(a_tau, b_tau),  nu ~ Gamma(a_nu, b_nu)

Every factor is conjugate.  ``L`` is linear in each factor's mean
parameters, so the natural parameters of a coordinate update are just the
block of ``dL/dm`` for that factor; the updates below use exactly that.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import special

from .. import expfam as ef
from ..engine import BlockDiagonalZSolver, BlockLayout, LrvbResult
from ..errors import ConfigError, DomainError
from ..optimizer import FitResult, ModelProblem, coordinate_ascent

P = 2
_R, _C = ef.vech_indices(P)
_W = np.where(_R == _C, 1.0, 2.0)  # trace weights for vech(beta beta^T)

# alpha-block positions
B0, B1 = 0, 1
BB = slice(2, 5)
TAU, LOG_TAU, NU, LOG_NU = 5, 6, 7, 8
N_ALPHA = 9
ALPHA_LABELS = ("beta1", "beta2", "beta1_beta1", "beta1_beta2", "beta2_beta2", "tau", "log_tau", "nu", "log_nu")


@dataclass(frozen=True)
class ReDataset:
    """Observations with a two-column design.

    ``k`` holds 0-based group indices; every group in ``range(n_groups)``
    must be observed at least once.
    """

    y: np.ndarray
    x: np.ndarray
    r: np.ndarray
    k: np.ndarray
    n_groups: int

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        r = np.asarray(self.r, dtype=float)
        k = np.asarray(self.k)
        n = y.size
        if y.ndim != 1 or n == 0 or x.shape != (n, P) or r.shape != (n,) or k.shape != (n,):
            raise ConfigError(f"need y, r, k of length N and x of shape (N, {P})")
        if not np.issubdtype(k.dtype, np.integer):
            if np.any(k != np.round(k)):
                raise ConfigError("group indices must be integers")
            k = k.astype(int)
        if self.n_groups < 1 or k.min() < 0 or k.max() >= self.n_groups:
            raise ConfigError("group indices must lie in [0, n_groups)")
        if np.any(np.bincount(k, minlength=self.n_groups) == 0):
            raise ConfigError("every group needs at least one observation")
        for a in (y, x, r):
            if not np.all(np.isfinite(a)):
                raise ConfigError("data must be finite")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "k", k)

    @property
    def n(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class RePriors:
    sigma_beta: np.ndarray = field(default_factory=lambda: 10.0 * np.eye(P))
    alpha_tau: float = 2.0
    beta_tau: float = 2.0
    alpha_nu: float = 2.0
    beta_nu: float = 2.0

    def __post_init__(self):
        s = np.asarray(self.sigma_beta, dtype=float)
        if s.shape != (P, P) or not np.allclose(s, s.T):
            raise ConfigError("sigma_beta must be a symmetric 2 x 2 matrix")
        if np.any(np.linalg.eigvalsh(s) <= 0):
            raise ConfigError("sigma_beta must be positive definite")
        if min(self.alpha_tau, self.beta_tau, self.alpha_nu, self.beta_nu) <= 0:
            raise ConfigError("gamma hyperparameters must be positive")
        object.__setattr__(self, "sigma_beta", s)


def re_simulate(
    n: int,
    n_groups: int,
    beta,
    tau: float,
    nu: float,
    seed: int,
    r_noise_var: float = 0.4,
    r_from_x: bool = True,
) -> tuple[ReDataset, dict]:
    """Simulate a dataset; groups are assigned in balanced random order.

    ``r_n = x_{n1} + N(0, r_noise_var)`` when ``r_from_x``; otherwise ``r``
    is drawn independently of ``x`` with the same marginal variance.
    """
    beta = np.asarray(beta, dtype=float)
    if n < n_groups or n_groups < 1 or beta.shape != (P,):
        raise ConfigError("need n >= n_groups >= 1 and a length-2 beta")
    if tau <= 0 or nu <= 0 or r_noise_var < 0:
        raise ConfigError("tau, nu must be positive and r_noise_var non-negative")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, P))
    noise = rng.normal(0.0, np.sqrt(r_noise_var), n)
    r = x[:, 0] + noise if r_from_x else rng.normal(0.0, np.sqrt(1.0 + r_noise_var), n)
    k = rng.permutation(np.arange(n) % n_groups)
    z = rng.normal(0.0, 1.0 / np.sqrt(nu), n_groups)
    y = x @ beta + r * z[k] + rng.normal(0.0, 1.0 / np.sqrt(tau), n)
    return ReDataset(y, x, r, k, n_groups), {"beta": beta, "tau": tau, "nu": nu, "z": z}


class RandomEffectsProblem(ModelProblem):
    log_joint_constant = "none (all normalising constants included)"

    def __init__(self, data: ReDataset, priors: RePriors = RePriors()):
        self.data = data
        self.priors = priors
        self.layout = BlockLayout(
            [
                ("beta", ef.GaussianMV(P), 1, "alpha"),
                ("tau", ef.Gamma(), 1, "alpha"),
                ("nu", ef.Gamma(), 1, "alpha"),
                ("z", ef.GaussianUV(), data.n_groups, "z"),
            ]
        )
        # H_zz is identically zero; the block solver keeps the general path
        self.z_solver = BlockDiagonalZSolver(2)
        self.default_order = ["beta", "tau", "nu", "z"]
        x, y, r = data.x, data.y, data.r
        self.xx = x[:, _R] * x[:, _C]
        self.sum_xx = self.xx.sum(axis=0)
        self.prec_beta = np.linalg.inv(priors.sigma_beta)
        self.prec_vech = self.prec_beta[_R, _C]
        self.r2_by_k = np.bincount(data.k, weights=r * r, minlength=data.n_groups)
        self.ry_by_k = np.bincount(data.k, weights=r * y, minlength=data.n_groups)
        self.rx_by_k = np.stack(
            [np.bincount(data.k, weights=r * x[:, j], minlength=data.n_groups) for j in range(P)], axis=1
        )
        self.xy = x.T @ y
        self.yy = float(y @ y)
        K, N = data.n_groups, data.n
        p = priors
        self._const = (
            -0.5 * (N + K) * np.log(2 * np.pi)
            - 0.5 * np.linalg.slogdet(2 * np.pi * priors.sigma_beta)[1]
            + p.alpha_tau * np.log(p.beta_tau)
            - special.gammaln(p.alpha_tau)
            + p.alpha_nu * np.log(p.beta_nu)
            - special.gammaln(p.alpha_nu)
        )

    def split(self, m):
        m = np.asarray(m, dtype=float)
        z = m[N_ALPHA:].reshape(-1, 2)
        return m[:P], m[BB], m[TAU], m[LOG_TAU], m[NU], m[LOG_NU], z[:, 0], z[:, 1]

    def _sum_sq(self, b, bb, z1, z2) -> float:
        """E of the residual sum of squares, as a multilinear form in m."""
        return (
            self.yy
            - 2.0 * b @ self.xy
            - 2.0 * self.ry_by_k @ z1
            + _W @ (self.sum_xx * bb)
            + self.r2_by_k @ z2
            + 2.0 * z1 @ (self.rx_by_k @ b)
        )

    def expected_log_joint(self, m) -> float:
        b, bb, t1, t2, n1, n2, z1, z2 = self.split(m)
        p = self.priors
        N, K = self.data.n, self.data.n_groups
        out = -0.5 * t1 * self._sum_sq(b, bb, z1, z2) + 0.5 * N * t2
        out += -0.5 * n1 * z2.sum() + 0.5 * K * n2
        out += -0.5 * _W @ (self.prec_vech * bb)
        out += (p.alpha_tau - 1.0) * t2 - p.beta_tau * t1
        out += (p.alpha_nu - 1.0) * n2 - p.beta_nu * n1
        return float(out + self._const)

    def gradient(self, m) -> np.ndarray:
        """``dL/dm``; blockwise equal to the conjugate natural parameters."""
        b, bb, t1, t2, n1, n2, z1, z2 = self.split(m)
        p = self.priors
        N, K = self.data.n, self.data.n_groups
        g = np.empty(self.layout.size)
        g[:P] = t1 * (self.xy - self.rx_by_k.T @ z1)
        g[BB] = -0.5 * _W * (t1 * self.sum_xx + self.prec_vech)
        g[TAU] = -0.5 * self._sum_sq(b, bb, z1, z2) - p.beta_tau
        g[LOG_TAU] = 0.5 * N + p.alpha_tau - 1.0
        g[NU] = -0.5 * z2.sum() - p.beta_nu
        g[LOG_NU] = 0.5 * K + p.alpha_nu - 1.0
        gz = np.empty((K, 2))
        gz[:, 0] = t1 * (self.ry_by_k - self.rx_by_k @ b)
        gz[:, 1] = -0.5 * (t1 * self.r2_by_k + n1)
        g[N_ALPHA:] = gz.reshape(-1)
        return g

    def hessian(self, m):
        b, bb, t1, t2, n1, n2, z1, z2 = self.split(m)
        K = self.data.n_groups
        iz1 = N_ALPHA + 2 * np.arange(K)
        iz2 = iz1 + 1
        rows, cols, vals = [], [], []

        def put(r, c, v):
            rows.append(np.atleast_1d(r))
            cols.append(np.atleast_1d(c))
            vals.append(np.atleast_1d(np.asarray(v, dtype=float)))

        put([B0, B1], [TAU, TAU], self.xy - self.rx_by_k.T @ z1)
        put(np.arange(2, 5), np.full(3, TAU), -0.5 * _W * self.sum_xx)
        for a in range(P):
            put(np.full(K, a), iz1, -t1 * self.rx_by_k[:, a])
        put(np.full(K, TAU), iz1, self.ry_by_k - self.rx_by_k @ b)
        put(np.full(K, TAU), iz2, -0.5 * self.r2_by_k)
        put(np.full(K, NU), iz2, np.full(K, -0.5))
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
        size = self.layout.size
        return sp.csr_matrix((np.concatenate([v, v]), (np.concatenate([r, c]), np.concatenate([c, r]))), shape=(size, size))

    def update(self, states, name):
        if name not in ("beta", "tau", "nu", "z"):
            raise KeyError(name)
        g = self.gradient(self.stack(states))
        eta = self.layout.view(g, name)
        fam = self.layout[name].family
        if fam.tag == "gamma" and (eta[0] >= 0 or eta[1] <= -1):
            raise DomainError(f"{name} update gives non-positive gamma parameters")
        return ef.FactorState.from_natural(fam, eta)

    def initial_states(self, mode="moment"):
        if mode != "moment":
            raise ValueError(f"unknown init mode {mode!r}")
        x, y = self.data.x, self.data.y
        coef, *_ = np.linalg.lstsq(x, y, rcond=None)
        resid_var = max(float(np.var(y - x @ coef)), 1e-3)
        K = self.data.n_groups
        return {
            "beta": ef.gaussian_mv(coef, resid_var * np.linalg.inv(x.T @ x + 1e-8 * np.eye(P))),
            "tau": ef.gamma(self.priors.alpha_tau + 0.5 * self.data.n, (self.priors.alpha_tau + 0.5 * self.data.n) * resid_var),
            "nu": ef.gamma(self.priors.alpha_nu + 0.5 * K, self.priors.alpha_nu + 0.5 * K),
            "z": ef.gaussian_uv(np.zeros(K), np.ones(K)),
        }


def re_problem(data: ReDataset, priors: RePriors = RePriors()) -> RandomEffectsProblem:
    return RandomEffectsProblem(data, priors)


def re_fit(data: ReDataset, priors: RePriors = RePriors(), **kw) -> FitResult:
    return coordinate_ascent(RandomEffectsProblem(data, priors), **kw)


def re_lrvb(data: ReDataset, priors: RePriors = RePriors(), *, schur: bool = True, **kw) -> tuple[LrvbResult, FitResult]:
    """Fit and correct; ``sigma_hat`` covers the nine global statistics
    ``(beta, vech E[beta beta^T], tau, log tau, nu, log nu)`` when
    ``schur=True``."""
    fit = re_fit(data, priors, **kw)
    if not fit.converged:
        raise DomainError("MFVB fit did not converge; refusing to differentiate a non-fixed point")
    return fit.lrvb(schur=schur), fit
