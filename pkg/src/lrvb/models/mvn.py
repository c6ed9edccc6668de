"""Multivariate-normal target approximated by independent univariate factors.

Mean field recovers the means exactly and the linear-response correction
recovers the full covariance exactly, which makes this model the
certification case for the engine.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import expfam as ef
from ..engine import BlockLayout, IdentityZSolver, LrvbResult
from ..errors import DomainError
from ..optimizer import FitResult, ModelProblem, coordinate_ascent


@dataclass(frozen=True)
class MvnTarget:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.shape != (mu.size, mu.size) or not np.allclose(sigma, sigma.T):
            raise DomainError("sigma must be a symmetric D x D matrix")
        try:
            np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            raise DomainError("sigma must be positive definite") from None
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "precision", np.linalg.inv(sigma))

    @property
    def dim(self) -> int:
        return self.mu.size


def random_target(dim: int, rng: np.random.Generator, max_condition: float = 100.0) -> MvnTarget:
    """Random mean and a covariance with condition number at most ``max_condition``."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eig = np.exp(rng.uniform(0.0, np.log(max_condition), dim))
    eig[0], eig[-1] = 1.0, max_condition ** rng.uniform(0.2, 1.0)
    scale = np.exp(rng.uniform(-1, 1))
    sigma = scale * (q * eig) @ q.T
    return MvnTarget(rng.normal(0, 3, dim), 0.5 * (sigma + sigma.T))


def mvn_coordinate_update(target: MvnTarget, m: np.ndarray, j: int) -> np.ndarray:
    """Optimal ``(E theta_j, E theta_j^2)`` given the other factors' means.

    ``m`` holds the first moments (length D).  The factor variance is
    always ``1 / Lambda_jj``.
    """
    lam = target.precision
    m = np.asarray(m, dtype=float)
    others = np.arange(target.dim) != j
    mean = target.mu[j] - lam[j, others] @ (m[others] - target.mu[others]) / lam[j, j]
    var = 1.0 / lam[j, j]
    return np.array([mean, mean**2 + var])


class MvnProblem(ModelProblem):
    log_joint_constant = "none (normalised target density)"

    def __init__(self, target: MvnTarget):
        self.target = target
        d = target.dim
        self.names = [f"theta{j}" for j in range(d)]
        self.layout = BlockLayout([(n, ef.GaussianUV(), 1, "alpha") for n in self.names])
        self.z_solver = IdentityZSolver()
        self.default_order = list(self.names)
        self.first_moment_index = 2 * np.arange(d)

    def _moments(self, m):
        m = np.asarray(m, dtype=float)
        return m[0::2], m[1::2]

    def expected_log_joint(self, m) -> float:
        t = self.target
        m1, m2 = self._moments(m)
        lam = t.precision
        dev = m1 - t.mu
        diag = np.diag(lam)
        quad = diag @ (m2 - 2 * t.mu * m1 + t.mu**2) + dev @ lam @ dev - diag @ dev**2
        _, logdet = np.linalg.slogdet(lam)
        return float(-0.5 * quad + 0.5 * logdet - 0.5 * t.dim * np.log(2 * np.pi))

    def hessian(self, m):
        lam = self.target.precision
        d = self.target.dim
        H = np.zeros((2 * d, 2 * d))
        off = -lam.copy()
        np.fill_diagonal(off, 0.0)
        H[np.ix_(self.first_moment_index, self.first_moment_index)] = off
        return H

    def update(self, states, name):
        j = self.names.index(name)
        m1 = np.array([states[n].mean[0] for n in self.names])
        mean, second = mvn_coordinate_update(self.target, m1, j)
        return ef.gaussian_uv(mean, second - mean**2)

    def initial_states(self, mode="moment"):
        t = self.target
        var = 1.0 / np.diag(t.precision)
        if mode == "truth":
            start = t.mu
        elif mode == "moment":
            start = np.zeros(t.dim)
        else:
            raise ValueError(f"unknown init mode {mode!r}")
        return {n: ef.gaussian_uv(start[j], var[j]) for j, n in enumerate(self.names)}


def mvn_fit(target: MvnTarget, tol: float = 1e-14, max_sweeps: int = 100_000, **kw) -> FitResult:
    return coordinate_ascent(MvnProblem(target), tol=tol, max_sweeps=max_sweeps, **kw)


def mvn_lrvb(target: MvnTarget, tol: float = 1e-14) -> tuple[LrvbResult, FitResult]:
    """Fit, then correct; ``result.sigma_hat[::2, ::2]`` estimates ``Sigma``.

    The default tolerance is much tighter than the global default because
    this model is used to certify exactness at the 1e-9 level.
    """
    fit = mvn_fit(target, tol=tol)
    return fit.lrvb(schur=False), fit
