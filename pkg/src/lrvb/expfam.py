"""Exponential-family variational factors.

Each family is parameterised by its natural parameter ``eta`` with respect
to a fixed sufficient-statistic vector.  Mean parameters are the
expectations of those statistics.  Every function accepts either a single
parameter vector of shape ``(size,)`` or a batch of shape ``(n, size)``;
batches are used for the many identical local factors of hierarchical
models.

Sufficient statistics
---------------------
========================  ==========================================
GaussianUV                ``(x, x**2)``
GaussianMV(P)             ``(x, vech(x x^T))``
Gamma                     ``(tau, log tau)``
Dirichlet(K)              ``log pi``
Wishart(P)                ``(vech(Lambda), log|Lambda|)``
Multinoulli(K)            one-hot indicators
========================  ==========================================

``vech`` keeps the ``a <= b`` entries of a symmetric matrix, ordered as
``numpy.triu_indices``.  Natural parameters are defined against exactly
these entries, so an off-diagonal precision entry enters with weight one
rather than one half.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .errors import DomainError, NoConvergence

__all__ = [
    "FactorFamily",
    "FactorState",
    "GaussianUV",
    "GaussianMV",
    "Gamma",
    "Dirichlet",
    "Wishart",
    "Multinoulli",
    "vech_indices",
    "vech",
    "unvech",
    "log_partition",
    "mean_from_natural",
    "natural_from_mean",
    "covariance_block",
    "entropy",
    "gaussian_uv",
    "gaussian_mv",
    "gamma",
    "dirichlet",
    "wishart",
    "multinoulli",
]

_TAGS = ("gaussian_uv", "gaussian_mv", "gamma", "dirichlet", "wishart", "multinoulli")


# --------------------------------------------------------------------------
# symmetric-matrix helpers


@lru_cache(maxsize=None)
def vech_indices(p: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.triu_indices(p)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def vech(mat: np.ndarray) -> np.ndarray:
    """Stack the ``a <= b`` entries of the trailing two axes."""
    p = mat.shape[-1]
    r, c = vech_indices(p)
    return mat[..., r, c]


def unvech(vec: np.ndarray, p: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    r, c = vech_indices(p)
    out = np.zeros(vec.shape[:-1] + (p, p))
    out[..., r, c] = vec
    out[..., c, r] = vec
    return out


def _vech_dim(p: int) -> int:
    return p * (p + 1) // 2


def _offdiag_weight(p: int) -> np.ndarray:
    """1 on diagonal vech entries, 2 off the diagonal (trace weights)."""
    r, c = vech_indices(p)
    return np.where(r == c, 1.0, 2.0)


# --------------------------------------------------------------------------
# families


@dataclass(frozen=True)
class FactorFamily:
    """Family tag plus dimension; fixes the sufficient-statistic layout."""

    tag: str
    dim: int = 1

    def __post_init__(self):
        if self.tag not in _TAGS:
            raise ValueError(f"unknown family tag {self.tag!r}")
        if self.dim < 1:
            raise ValueError("family dimension must be >= 1")
        if self.tag in ("gaussian_uv", "gamma") and self.dim != 1:
            raise ValueError(f"{self.tag} is scalar")

    @property
    def size(self) -> int:
        """Length of the sufficient-statistic vector."""
        p = self.dim
        return {
            "gaussian_uv": 2,
            "gaussian_mv": p + _vech_dim(p),
            "gamma": 2,
            "dirichlet": p,
            "wishart": _vech_dim(p) + 1,
            "multinoulli": p,
        }[self.tag]

    def layout(self) -> list[tuple[str, slice]]:
        p = self.dim
        if self.tag == "gaussian_uv":
            return [("x", slice(0, 1)), ("x2", slice(1, 2))]
        if self.tag == "gaussian_mv":
            return [("x", slice(0, p)), ("xxT", slice(p, p + _vech_dim(p)))]
        if self.tag == "gamma":
            return [("tau", slice(0, 1)), ("log_tau", slice(1, 2))]
        if self.tag == "wishart":
            d = _vech_dim(p)
            return [("Lambda", slice(0, d)), ("logdet", slice(d, d + 1))]
        if self.tag == "dirichlet":
            return [("log_pi", slice(0, p))]
        return [("z", slice(0, p))]

    def __str__(self):
        return self.tag if self.tag in ("gaussian_uv", "gamma") else f"{self.tag}({self.dim})"


def GaussianUV() -> FactorFamily:
    return FactorFamily("gaussian_uv")


def GaussianMV(p: int) -> FactorFamily:
    return FactorFamily("gaussian_mv", p)


def Gamma() -> FactorFamily:
    return FactorFamily("gamma")


def Dirichlet(k: int) -> FactorFamily:
    return FactorFamily("dirichlet", k)


def Wishart(p: int) -> FactorFamily:
    return FactorFamily("wishart", p)


def Multinoulli(k: int) -> FactorFamily:
    return FactorFamily("multinoulli", k)


# --------------------------------------------------------------------------
# per-family kernels; all operate on 2-D batches (n, size)


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise DomainError(f"non-finite {what}")


class _GaussianUV:
    @staticmethod
    def standard(eta):
        if np.any(eta[:, 1] >= 0):
            raise DomainError("Gaussian precision must be positive (eta[1] < 0)")
        var = -0.5 / eta[:, 1]
        return eta[:, 0] * var, var

    def log_partition(self, eta, fam):
        mu, var = self.standard(eta)
        return 0.5 * mu**2 / var + 0.5 * np.log(2 * np.pi * var)

    def mean(self, eta, fam):
        mu, var = self.standard(eta)
        return np.stack([mu, mu**2 + var], axis=1)

    def natural(self, m, fam):
        var = m[:, 1] - m[:, 0] ** 2
        if np.any(var <= 0):
            raise DomainError("E[x^2] must exceed E[x]^2")
        return np.stack([m[:, 0] / var, -0.5 / var], axis=1)

    def cov(self, eta, m, fam):
        mu, var = self.standard(eta)
        out = np.empty((eta.shape[0], 2, 2))
        out[:, 0, 0] = var
        out[:, 0, 1] = out[:, 1, 0] = 2 * mu * var
        out[:, 1, 1] = 4 * mu**2 * var + 2 * var**2
        return out

    def entropy(self, eta, fam):
        _, var = self.standard(eta)
        return 0.5 * np.log(2 * np.pi * np.e * var)


class _Gamma:
    @staticmethod
    def standard(eta):
        shape = eta[:, 1] + 1.0
        rate = -eta[:, 0]
        if np.any(shape <= 0) or np.any(rate <= 0):
            raise DomainError("gamma shape and rate must be positive")
        return shape, rate

    def log_partition(self, eta, fam):
        a, b = self.standard(eta)
        return special.gammaln(a) - a * np.log(b)

    def mean(self, eta, fam):
        a, b = self.standard(eta)
        return np.stack([a / b, special.digamma(a) - np.log(b)], axis=1)

    def natural(self, m, fam):
        if np.any(m[:, 0] <= 0):
            raise DomainError("E[tau] must be positive")
        gap = np.log(m[:, 0]) - m[:, 1]
        if np.any(gap <= 0):
            raise DomainError("E[log tau] must be below log E[tau]")
        shape = np.array([_invert_log_minus_digamma(g) for g in gap])
        rate = shape / m[:, 0]
        return np.stack([-rate, shape - 1.0], axis=1)

    def cov(self, eta, m, fam):
        a, b = self.standard(eta)
        out = np.empty((eta.shape[0], 2, 2))
        out[:, 0, 0] = a / b**2
        out[:, 0, 1] = out[:, 1, 0] = 1.0 / b
        out[:, 1, 1] = special.polygamma(1, a)
        return out

    def entropy(self, eta, fam):
        a, b = self.standard(eta)
        return a - np.log(b) + special.gammaln(a) + (1 - a) * special.digamma(a)


def _invert_log_minus_digamma(gap: float, tol: float = 1e-14, maxiter: int = 100) -> float:
    """Solve ``log(a) - digamma(a) = gap`` for ``a > 0``.

    Newton on ``log a`` from Minka's Stirling-based starting point, with a
    bisection step whenever Newton leaves the current bracket.  The left
    side decreases monotonically from +inf to 0.
    """
    a = (3.0 - gap + np.sqrt((gap - 3.0) ** 2 + 24.0 * gap)) / (12.0 * gap)
    lo, hi = 0.0, np.inf
    for _ in range(maxiter):
        f = np.log(a) - special.digamma(a) - gap
        if f > 0:
            lo = a
        else:
            hi = a
        if abs(f) <= tol * max(1.0, gap):
            return float(a)
        df = 1.0 / a - special.polygamma(1, a)  # negative
        step = a * np.exp(-f / (a * df)) if a * df != 0 else np.nan
        if not np.isfinite(step) or step <= lo or step >= hi:
            step = 0.5 * (lo + hi) if np.isfinite(hi) else 2.0 * a
        a = step
    raise NoConvergence(f"gamma shape inversion did not converge (gap={gap})")


class _Dirichlet:
    @staticmethod
    def standard(eta):
        alpha = eta + 1.0
        if np.any(alpha <= 0):
            raise DomainError("Dirichlet concentrations must be positive")
        return alpha

    def log_partition(self, eta, fam):
        a = self.standard(eta)
        return special.gammaln(a).sum(axis=1) - special.gammaln(a.sum(axis=1))

    def mean(self, eta, fam):
        a = self.standard(eta)
        return special.digamma(a) - special.digamma(a.sum(axis=1, keepdims=True))

    def natural(self, m, fam):
        if np.any(m >= 0):
            raise DomainError("E[log pi] must be negative")
        return np.stack([_invert_dirichlet(row) for row in m]) - 1.0

    def cov(self, eta, m, fam):
        a = self.standard(eta)
        k = a.shape[1]
        tri = special.polygamma(1, a)
        tri0 = special.polygamma(1, a.sum(axis=1))
        return tri[:, :, None] * np.eye(k) - tri0[:, None, None]

    def entropy(self, eta, fam):
        a = self.standard(eta)
        a0 = a.sum(axis=1)
        k = a.shape[1]
        log_beta = special.gammaln(a).sum(axis=1) - special.gammaln(a0)
        return log_beta + (a0 - k) * special.digamma(a0) - ((a - 1) * special.digamma(a)).sum(axis=1)


def _inverse_digamma(y: np.ndarray, iters: int = 8) -> np.ndarray:
    """Newton inversion of the digamma function (Minka's initialisation)."""
    y = np.asarray(y, dtype=float)
    x = np.where(y >= -2.22, np.exp(y) + 0.5, -1.0 / (y - special.digamma(1.0)))
    for _ in range(iters):
        x = x - (special.digamma(x) - y) / special.polygamma(1, x)
    return x


def _invert_dirichlet(m: np.ndarray, tol: float = 1e-13, maxiter: int = 200) -> np.ndarray:
    """Concentrations with ``digamma(a_k) - digamma(sum a) = m_k``.

    Newton on the full system (diagonal-plus-rank-one Jacobian) after a few
    fixed-point iterations to get inside the basin.
    """
    alpha = np.ones_like(m)
    for _ in range(5):
        alpha = _inverse_digamma(m + special.digamma(alpha.sum()))
    for _ in range(maxiter):
        a0 = alpha.sum()
        resid = special.digamma(alpha) - special.digamma(a0) - m
        if np.max(np.abs(resid)) <= tol * max(1.0, np.max(np.abs(m))):
            return alpha
        d = special.polygamma(1, alpha)
        c = -special.polygamma(1, a0)
        # (diag(d) + c 11^T)^{-1} r via Sherman-Morrison
        dinv_r = resid / d
        step = dinv_r - (c * dinv_r.sum() / (1.0 + c * (1.0 / d).sum())) / d
        t = 1.0
        while np.any(alpha - t * step <= 0):
            t *= 0.5
        alpha = alpha - t * step
    raise NoConvergence("Dirichlet inversion did not converge")


class _Multinoulli:
    def log_partition(self, eta, fam):
        return special.logsumexp(eta, axis=1)

    def mean(self, eta, fam):
        if np.any(np.isnan(eta)) or np.any(eta == np.inf):
            raise DomainError("invalid multinoulli logits")
        return special.softmax(eta, axis=1)

    def natural(self, m, fam):
        if np.any(m <= 0) or np.any(np.abs(m.sum(axis=1) - 1) > 1e-10):
            raise DomainError("multinoulli means must lie in the open simplex")
        return np.log(m)

    def cov(self, eta, m, fam):
        p = special.softmax(eta, axis=1)
        return p[:, :, None] * np.eye(p.shape[1]) - p[:, :, None] * p[:, None, :]

    def entropy(self, eta, fam):
        return special.entr(special.softmax(eta, axis=1)).sum(axis=1)


class _GaussianMV:
    @staticmethod
    def standard(eta, p):
        lam = -unvech(eta[p:], p)
        lam[np.diag_indices(p)] *= 2.0
        try:
            chol = np.linalg.cholesky(lam)
        except np.linalg.LinAlgError:
            raise DomainError("Gaussian precision must be positive definite") from None
        cov = _chol_inverse(chol)
        return cov @ eta[:p], cov, lam, chol

    def log_partition(self, eta, fam):
        p = fam.dim
        out = np.empty(eta.shape[0])
        for i, e in enumerate(eta):
            mu, cov, lam, chol = self.standard(e, p)
            out[i] = 0.5 * mu @ lam @ mu - np.log(np.diag(chol)).sum() + 0.5 * p * np.log(2 * np.pi)
        return out

    def mean(self, eta, fam):
        p = fam.dim
        out = np.empty_like(eta)
        for i, e in enumerate(eta):
            mu, cov, _, _ = self.standard(e, p)
            out[i, :p] = mu
            out[i, p:] = vech(cov + np.outer(mu, mu))
        return out

    def natural(self, m, fam):
        p = fam.dim
        out = np.empty_like(m)
        for i, row in enumerate(m):
            mu = row[:p]
            cov = unvech(row[p:], p) - np.outer(mu, mu)
            try:
                chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise DomainError("second moment minus outer(mean) must be positive definite") from None
            lam = _chol_inverse(chol)
            out[i, :p] = lam @ mu
            r, c = vech_indices(p)
            out[i, p:] = -lam[r, c] * np.where(r == c, 0.5, 1.0)
        return out

    def cov(self, eta, m, fam):
        p = fam.dim
        r, c = vech_indices(p)
        out = []
        for e in eta:
            mu, S, _, _ = self.standard(e, p)
            # Cov(x_a, x_b x_c) = mu_b S_ac + mu_c S_ab
            c12 = mu[r][None, :] * S[:, c] + mu[c][None, :] * S[:, r]
            # Isserlis with non-zero means
            a, b = r[:, None], c[:, None]
            cc, d = r[None, :], c[None, :]
            c22 = (
                S[a, cc] * S[b, d]
                + S[a, d] * S[b, cc]
                + mu[a] * mu[cc] * S[b, d]
                + mu[a] * mu[d] * S[b, cc]
                + mu[b] * mu[cc] * S[a, d]
                + mu[b] * mu[d] * S[a, cc]
            )
            out.append(np.block([[S, c12], [c12.T, c22]]))
        return np.stack(out)

    def entropy(self, eta, fam):
        p = fam.dim
        out = np.empty(eta.shape[0])
        for i, e in enumerate(eta):
            _, _, _, chol = self.standard(e, p)
            out[i] = 0.5 * p * np.log(2 * np.pi * np.e) - np.log(np.diag(chol)).sum()
        return out


class _Wishart:
    @staticmethod
    def standard(eta, p):
        d = _vech_dim(p)
        scale_inv = -unvech(eta[:d], p)
        scale_inv[np.diag_indices(p)] *= 2.0
        dof = 2.0 * eta[d] + p + 1.0
        if dof <= p - 1:
            raise DomainError("Wishart degrees of freedom must exceed P - 1")
        try:
            chol = np.linalg.cholesky(scale_inv)
        except np.linalg.LinAlgError:
            raise DomainError("Wishart scale must be positive definite") from None
        scale = _chol_inverse(chol)
        logdet_scale = -2.0 * np.log(np.diag(chol)).sum()
        return scale, dof, logdet_scale

    def log_partition(self, eta, fam):
        p = fam.dim
        out = np.empty(eta.shape[0])
        for i, e in enumerate(eta):
            W, n, ld = self.standard(e, p)
            out[i] = 0.5 * n * p * np.log(2.0) + 0.5 * n * ld + special.multigammaln(0.5 * n, p)
        return out

    def mean(self, eta, fam):
        p = fam.dim
        out = np.empty_like(eta)
        for i, e in enumerate(eta):
            W, n, ld = self.standard(e, p)
            out[i, :-1] = vech(n * W)
            out[i, -1] = _multidigamma(0.5 * n, p) + p * np.log(2.0) + ld
        return out

    def natural(self, m, fam):
        p = fam.dim
        r, c = vech_indices(p)
        out = np.empty_like(m)
        for i, row in enumerate(m):
            mean_mat = unvech(row[:-1], p)
            sign, logdet_mean = np.linalg.slogdet(mean_mat)
            if sign <= 0 or np.any(np.linalg.eigvalsh(mean_mat) <= 0):
                raise DomainError("E[Lambda] must be positive definite")
            target = row[-1]
            if target >= logdet_mean:
                raise DomainError("E[log|Lambda|] must be below log|E[Lambda]|")

            def f(n):
                return _multidigamma(0.5 * n, p) + p * np.log(2.0) + logdet_mean - p * np.log(n) - target

            lo = p - 1 + 1e-12
            hi = max(2.0 * p, 1.0)
            while f(hi) < 0:
                hi *= 2.0
                if hi > 1e15:
                    raise NoConvergence("Wishart dof bracket expansion failed")
            n = optimize.brentq(f, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)
            scale_inv = np.linalg.inv(mean_mat / n)
            out[i, :-1] = -scale_inv[r, c] * np.where(r == c, 0.5, 1.0)
            out[i, -1] = 0.5 * (n - p - 1.0)
        return out

    def cov(self, eta, m, fam):
        p = fam.dim
        r, c = vech_indices(p)
        out = []
        for e in eta:
            W, n, _ = self.standard(e, p)
            a, b = r[:, None], c[:, None]
            cc, d = r[None, :], c[None, :]
            c11 = n * (W[a, cc] * W[b, d] + W[a, d] * W[b, cc])
            c12 = 2.0 * W[r, c][:, None]
            c22 = special.polygamma(1, 0.5 * (n + 1 - np.arange(1, p + 1))).sum()
            out.append(np.block([[c11, c12], [c12.T, np.array([[c22]])]]))
        return np.stack(out)

    def entropy(self, eta, fam):
        p = fam.dim
        out = np.empty(eta.shape[0])
        for i, e in enumerate(eta):
            W, n, ld = self.standard(e, p)
            out[i] = (
                0.5 * (p + 1) * ld
                + 0.5 * p * (p + 1) * np.log(2.0)
                + special.multigammaln(0.5 * n, p)
                - 0.5 * (n - p - 1) * _multidigamma(0.5 * n, p)
                + 0.5 * n * p
            )
        return out


def _multidigamma(x: float, p: int) -> float:
    return special.digamma(x + 0.5 * (1 - np.arange(1, p + 1))).sum()


def _chol_inverse(chol: np.ndarray) -> np.ndarray:
    linv = np.linalg.inv(chol)
    return linv.T @ linv


_KERNELS = {
    "gaussian_uv": _GaussianUV(),
    "gaussian_mv": _GaussianMV(),
    "gamma": _Gamma(),
    "dirichlet": _Dirichlet(),
    "wishart": _Wishart(),
    "multinoulli": _Multinoulli(),
}


def _batch(family: FactorFamily, arr) -> tuple[np.ndarray, bool]:
    arr = np.asarray(arr, dtype=float)
    single = arr.ndim == 1
    arr2 = np.atleast_2d(arr)
    if arr2.ndim != 2 or arr2.shape[1] != family.size:
        raise DomainError(f"{family} expects {family.size} parameters, got shape {arr.shape}")
    return arr2, single


def _unbatch(out, single):
    return out[0] if single else out


# --------------------------------------------------------------------------
# public operations


def log_partition(family: FactorFamily, eta) -> np.ndarray | float:
    e, single = _batch(family, eta)
    return _unbatch(_KERNELS[family.tag].log_partition(e, family), single)


def mean_from_natural(family: FactorFamily, eta) -> np.ndarray:
    """Expected sufficient statistics, the gradient of the log partition.

    Raises
    ------
    DomainError
        If ``eta`` is outside the natural-parameter domain.
    """
    e, single = _batch(family, eta)
    if family.tag != "multinoulli":
        _check_finite(e, "natural parameters")
    out = _KERNELS[family.tag].mean(e, family)
    return _unbatch(out, single)


def natural_from_mean(family: FactorFamily, mean) -> np.ndarray:
    """Inverse of :func:`mean_from_natural` on the interior.

    Gamma and Wishart inversions are one-dimensional root finds; Dirichlet
    uses Newton on the full system.  Multinoulli logits are returned as
    ``log p`` (the normalised representative).
    """
    m, single = _batch(family, mean)
    _check_finite(m, "mean parameters")
    return _unbatch(_KERNELS[family.tag].natural(m, family), single)


def covariance_block(state: "FactorState") -> np.ndarray:
    """Covariance of the sufficient statistics under the factor.

    Returns shape ``(size, size)`` for a single factor and
    ``(n, size, size)`` for a batch.
    """
    fam = state.family
    e, single = _batch(fam, state.natural)
    m, _ = _batch(fam, state.mean)
    out = _KERNELS[fam.tag].cov(e, m, fam)
    if fam.tag in ("gaussian_uv", "gaussian_mv"):
        if np.any(np.diagonal(out, axis1=1, axis2=2) <= 0):
            raise DomainError("degenerate factor: zero variance")
    return _unbatch(out, single)


def entropy(state: "FactorState") -> np.ndarray | float:
    """Differential entropy (counting entropy for multinoulli)."""
    fam = state.family
    e, single = _batch(fam, state.natural)
    return _unbatch(_KERNELS[fam.tag].entropy(e, fam), single)


@dataclass(frozen=True)
class FactorState:
    """A factor (or batch of identical-family factors) in both parameterisations.

    Build with :meth:`from_natural` or :meth:`from_mean` so the two stay
    consistent; arrays are made read-only.
    """

    family: FactorFamily
    natural: np.ndarray = field(repr=False)
    mean: np.ndarray

    @classmethod
    def from_natural(cls, family: FactorFamily, eta) -> "FactorState":
        eta = np.array(eta, dtype=float)
        m = np.array(mean_from_natural(family, eta))
        eta.setflags(write=False)
        m.setflags(write=False)
        return cls(family, eta, m)

    @classmethod
    def from_mean(cls, family: FactorFamily, mean) -> "FactorState":
        m = np.array(mean, dtype=float)
        eta = np.array(natural_from_mean(family, m))
        eta.setflags(write=False)
        m.setflags(write=False)
        return cls(family, eta, m)

    @property
    def count(self) -> int:
        return 1 if self.natural.ndim == 1 else self.natural.shape[0]

    @property
    def size(self) -> int:
        return self.family.size * self.count

    def flat_mean(self) -> np.ndarray:
        return self.mean.reshape(-1)

    def layout(self) -> list[tuple[str, slice]]:
        return self.family.layout()

    def covariance(self) -> np.ndarray:
        return covariance_block(self)

    def entropy(self) -> float:
        return float(np.sum(entropy(self)))

    def standard_params(self) -> dict:
        """Conventional parameters (mean/var, shape/rate, ...)."""
        return standard_params(self.family, self.natural)


def standard_params(family: FactorFamily, eta) -> dict:
    e, single = _batch(family, eta)
    tag = family.tag
    if tag == "gaussian_uv":
        mu, var = _GaussianUV.standard(e)
        out = {"mean": mu, "var": var}
    elif tag == "gamma":
        a, b = _Gamma.standard(e)
        out = {"shape": a, "rate": b}
    elif tag == "dirichlet":
        out = {"alpha": _Dirichlet.standard(e)}
    elif tag == "multinoulli":
        out = {"p": special.softmax(e, axis=1)}
    elif tag == "gaussian_mv":
        res = [_GaussianMV.standard(row, family.dim) for row in e]
        out = {"mean": np.stack([r[0] for r in res]), "cov": np.stack([r[1] for r in res])}
    else:
        res = [_Wishart.standard(row, family.dim) for row in e]
        out = {"scale": np.stack([r[0] for r in res]), "dof": np.array([r[1] for r in res])}
    if single:
        out = {k: v[0] for k, v in out.items()}
    return out


# --------------------------------------------------------------------------
# constructors from conventional parameters


def gaussian_uv(mean, var) -> FactorState:
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0):
        raise DomainError("variance must be positive")
    eta = np.stack([mean / var, -0.5 / var], axis=-1)
    return FactorState.from_natural(GaussianUV(), eta)


def gamma(shape, rate) -> FactorState:
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    return FactorState.from_natural(Gamma(), np.stack([-rate, shape - 1.0], axis=-1))


def dirichlet(alpha) -> FactorState:
    alpha = np.asarray(alpha, dtype=float)
    return FactorState.from_natural(Dirichlet(alpha.shape[-1]), alpha - 1.0)


def multinoulli(p=None, logits=None) -> FactorState:
    if logits is None:
        p = np.asarray(p, dtype=float)
        with np.errstate(divide="ignore"):
            logits = np.log(p)
    logits = np.asarray(logits, dtype=float)
    return FactorState.from_natural(Multinoulli(logits.shape[-1]), logits)


def _sym_natural(mat: np.ndarray) -> np.ndarray:
    """Natural coefficients of ``-1/2 tr(mat X)`` against vech(X)."""
    p = mat.shape[-1]
    r, c = vech_indices(p)
    return -mat[..., r, c] * np.where(r == c, 0.5, 1.0)


def gaussian_mv(mean, cov) -> FactorState:
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    p = mean.shape[-1]
    lam = np.linalg.inv(cov)
    eta = np.concatenate([np.einsum("...ij,...j->...i", lam, mean), _sym_natural(lam)], axis=-1)
    return FactorState.from_natural(GaussianMV(p), eta)


def wishart(scale, dof) -> FactorState:
    scale = np.asarray(scale, dtype=float)
    dof = np.asarray(dof, dtype=float)
    p = scale.shape[-1]
    eta = np.concatenate([_sym_natural(np.linalg.inv(scale)), (0.5 * (dof - p - 1.0))[..., None]], axis=-1)
    return FactorState.from_natural(Wishart(p), eta)
