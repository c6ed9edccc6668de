"""Reference MCMC samplers for the three hierarchical models.

Each sampler is deterministic given ``seed`` and returns a
:class:`ChainSummary` of post-burn-in draws.  Linear algebra here is kept
to numpy primitives and does not touch the variational code.
"""
from __future__ import annotations

import warnings

import numpy as np
from scipy import special

from ..errors import AcceptanceOutOfRange, ConfigError, NumericalError
from .chain import ChainSummary


def _check_counts(draws, burnin):
    if burnin < 0 or draws <= burnin:
        raise ConfigError("need draws > burnin >= 0")


# --------------------------------------------------------------------------
# normal-Poisson


def mh_gibbs_np(data, priors, draws: int, burnin: int, seed: int, track_z=(), z_steps: int = 2, thin: int = 1):
    """Gibbs for (beta, tau) with random-walk Metropolis on each z_n.

    ``draws`` counts total iterations including ``burnin``.  Proposal
    scales are adapted per observation during burn-in only, aiming at
    acceptance in the 0.2-0.5 band.
    """
    _check_counts(draws, burnin)
    rng = np.random.default_rng(seed)
    x, y = data.x, data.y
    n = y.size
    sxx = float(x @ x)
    z = np.log(y + 0.5)
    beta = float(x @ z) / max(sxx, 1e-12)
    tau = 1.0 / max(np.var(z - beta * x), 1e-2)
    step = 1.0 / np.sqrt(tau + y + 0.5) * 2.0
    acc = np.zeros(n)
    tries = 0
    keep = (draws - burnin) // thin
    out = {"beta": np.empty(keep), "tau": np.empty(keep), "log_tau": np.empty(keep)}
    for i in track_z:
        out[f"z{i}"] = np.empty(keep)
    shape = priors.alpha_tau + 0.5 * n
    post_acc = np.zeros(n)
    post_tries = 0
    k = 0
    for it in range(draws):
        prec = tau * sxx + 1.0 / priors.sigma2_beta
        beta = rng.normal(tau * float(x @ z) / prec, 1.0 / np.sqrt(prec))
        r = z - beta * x
        tau = rng.gamma(shape, 1.0 / (priors.beta_tau + 0.5 * float(r @ r)))
        lin = tau * beta * x + y
        logp = lin * z - 0.5 * tau * z * z - np.exp(z)
        for _ in range(z_steps):
            prop = z + step * rng.standard_normal(n)
            logp_prop = lin * prop - 0.5 * tau * prop * prop - np.exp(prop)
            accept = np.log(rng.random(n)) < logp_prop - logp
            z = np.where(accept, prop, z)
            logp = np.where(accept, logp_prop, logp)
            acc += accept
            tries += 1
            if it >= burnin:
                post_acc += accept
                post_tries += 1
        if it < burnin and (it + 1) % 50 == 0:
            rate = acc / tries
            step *= np.exp(np.clip(rate - 0.35, -0.5, 0.5) * 2.0)
            acc[:] = 0
            tries = 0
        if it >= burnin and (it - burnin) % thin == 0 and k < keep:
            out["beta"][k] = beta
            out["tau"][k] = tau
            out["log_tau"][k] = np.log(tau)
            for i in track_z:
                out[f"z{i}"][k] = z[i]
            k += 1
    rate = float(post_acc.sum() / (post_tries * n))
    if not 0.1 <= rate <= 0.7:
        warnings.warn(f"final MH acceptance {rate:.3f} outside [0.1, 0.7]", AcceptanceOutOfRange, stacklevel=2)
    return ChainSummary(out, seed, keep, {"acceptance": rate, "burnin": burnin, "thin": thin})


# --------------------------------------------------------------------------
# random effects


def gibbs_re(data, priors, draws: int, burnin: int, seed: int, track_z=(), thin: int = 1):
    """Fully conjugate Gibbs over (beta, tau, nu, z)."""
    _check_counts(draws, burnin)
    rng = np.random.default_rng(seed)
    X, y, r, k_idx = data.x, data.y, data.r, data.k
    K = data.n_groups
    sb_inv = np.linalg.inv(priors.sigma_beta)
    XtX = X.T @ X
    r2_by_k = np.bincount(k_idx, weights=r * r, minlength=K)
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    tau, nu = 1.0, 1.0
    z = np.zeros(K)
    keep = (draws - burnin) // thin
    names = ["beta1", "beta2", "tau", "log_tau", "nu", "log_nu"] + [f"z{i}" for i in track_z]
    out = {n: np.empty(keep) for n in names}
    k = 0
    for it in range(draws):
        resid_b = y - r * z[k_idx]
        prec = tau * XtX + sb_inv
        chol = np.linalg.cholesky(prec)
        mean = np.linalg.solve(prec, tau * (X.T @ resid_b))
        beta = mean + np.linalg.solve(chol.T, rng.standard_normal(2))
        resid_z = y - X @ beta
        zprec = nu + tau * r2_by_k
        zmean = tau * np.bincount(k_idx, weights=r * resid_z, minlength=K) / zprec
        z = zmean + rng.standard_normal(K) / np.sqrt(zprec)
        e = resid_z - r * z[k_idx]
        tau = rng.gamma(priors.alpha_tau + 0.5 * y.size, 1.0 / (priors.beta_tau + 0.5 * float(e @ e)))
        nu = rng.gamma(priors.alpha_nu + 0.5 * K, 1.0 / (priors.beta_nu + 0.5 * float(z @ z)))
        if it >= burnin and (it - burnin) % thin == 0 and k < keep:
            out["beta1"][k], out["beta2"][k] = beta
            out["tau"][k], out["log_tau"][k] = tau, np.log(tau)
            out["nu"][k], out["log_nu"][k] = nu, np.log(nu)
            for i in track_z:
                out[f"z{i}"][k] = z[i]
            k += 1
    return ChainSummary(out, seed, keep, {"burnin": burnin, "thin": thin})


# --------------------------------------------------------------------------
# Gaussian mixture


def _wishart_draw(rng, scale: np.ndarray, dof: float) -> np.ndarray:
    """Bartlett decomposition draw from Wishart(scale, dof)."""
    p = scale.shape[0]
    chol = np.linalg.cholesky(scale)
    A = np.zeros((p, p))
    A[np.diag_indices(p)] = np.sqrt(rng.chisquare(dof - np.arange(p)))
    A[np.tril_indices(p, -1)] = rng.standard_normal(p * (p - 1) // 2)
    LA = chol @ A
    return LA @ LA.T


def gibbs_gmm(
    data,
    priors,
    draws: int,
    burnin: int,
    seed: int,
    init=None,
    mu_prior: str = "conditional",
    anchor=None,
    thin: int = 1,
):
    """Conjugate Gibbs on the augmented mixture.

    ``mu_prior="conditional"`` uses ``mu_k | Lambda_k ~ N(0, (a Lambda_k)^{-1})``
    with ``a = priors.mu_precision``; ``"independent"`` uses the same
    ``N(0, a^{-1} I)`` prior as the variational model.  ``init`` is a dict
    with ``mu`` (K x P), ``lam`` (K x P x P) and ``pi`` (K).  Label
    switching is flagged when the component ordering along ``anchor``
    (default: the axis separating the initial means of components 0 and 1)
    changes in any retained draw.
    """
    _check_counts(draws, burnin)
    if mu_prior not in ("conditional", "independent"):
        raise ConfigError(f"unknown mu_prior {mu_prior!r}")
    rng = np.random.default_rng(seed)
    X = data.x
    N, P = X.shape
    K = priors.k
    a = priors.mu_precision
    w0_inv = np.asarray(priors.lambda_inv_scale, dtype=float)
    n0 = priors.lambda_dof
    if init is None:
        raise ConfigError("gibbs_gmm needs an initial state")
    mu = np.array(init["mu"], dtype=float)
    lam = np.array(init["lam"], dtype=float)
    pi = np.array(init["pi"], dtype=float)
    if anchor is None and K > 1:
        anchor = mu[1] - mu[0]
    sign0 = np.sign(anchor @ (mu[1] - mu[0])) if K > 1 else 0.0
    r_idx, c_idx = np.triu_indices(P)
    keep = (draws - burnin) // thin
    mu_s = np.empty((keep, K, P))
    lam_s = np.empty((keep, K, P, P))
    pi_s = np.empty((keep, K))
    switched = False
    k_out = 0
    xx = np.einsum("ni,nj->nij", X, X).reshape(N, P * P)
    ar = np.arange(K)
    for it in range(draws):
        # z | rest
        logp = np.empty((N, K))
        for kk in range(K):
            chol = np.linalg.cholesky(lam[kk])
            dev = (X - mu[kk]) @ chol
            logp[:, kk] = np.log(pi[kk]) + np.log(np.diag(chol)).sum() - 0.5 * np.einsum("ij,ij->i", dev, dev)
        logp -= logp.max(axis=1, keepdims=True)
        cum = np.cumsum(np.exp(logp), axis=1)
        u = rng.random(N) * cum[:, -1]
        labels = np.minimum((u[:, None] > cum).sum(axis=1), K - 1)
        onehot = (labels[:, None] == ar).astype(float)
        counts = onehot.sum(axis=0)
        sums = onehot.T @ X
        sq = (onehot.T @ xx).reshape(K, P, P)
        pi = rng.dirichlet(priors.pi_alpha + counts)
        for kk in range(K):
            nk = counts[kk]
            xbar_sum = sums[kk]
            try:
                if mu_prior == "conditional":
                    # Lambda | z (mu integrated), then mu | Lambda, z
                    post_n = a + nk
                    scale_inv = w0_inv + sq[kk] - np.outer(xbar_sum, xbar_sum) / post_n
                    lam[kk] = _wishart_draw(rng, np.linalg.inv(scale_inv), n0 + nk)
                    prec = post_n * lam[kk]
                    mu[kk] = xbar_sum / post_n + np.linalg.solve(np.linalg.cholesky(prec).T, rng.standard_normal(P))
                else:
                    prec = a * np.eye(P) + nk * lam[kk]
                    mean = np.linalg.solve(prec, lam[kk] @ xbar_sum)
                    mu[kk] = mean + np.linalg.solve(np.linalg.cholesky(prec).T, rng.standard_normal(P))
                    scatter = sq[kk] - np.outer(xbar_sum, mu[kk]) - np.outer(mu[kk], xbar_sum) + nk * np.outer(mu[kk], mu[kk])
                    lam[kk] = _wishart_draw(rng, np.linalg.inv(w0_inv + scatter), n0 + nk)
            except np.linalg.LinAlgError:
                raise NumericalError("singular conditional update in mixture Gibbs") from None
        if it >= burnin and K > 1 and np.sign(anchor @ (mu[1] - mu[0])) != sign0:
            switched = True
        if it >= burnin and (it - burnin) % thin == 0 and k_out < keep:
            mu_s[k_out] = mu
            lam_s[k_out] = lam
            pi_s[k_out] = pi
            k_out += 1
    logdet_s = np.linalg.slogdet(lam_s)[1]
    out = {}
    for kk in range(K):
        for p in range(P):
            out[f"mu{kk}_{p}"] = mu_s[:, kk, p]
        for r_, c_ in zip(r_idx, c_idx):
            out[f"lam{kk}_{r_}{c_}"] = lam_s[:, kk, r_, c_]
        out[f"logdet{kk}"] = logdet_s[:, kk]
        out[f"log_pi{kk}"] = np.log(pi_s[:, kk])
    return ChainSummary(out, seed, keep, {"burnin": burnin, "thin": thin, "label_switched": switched, "mu_prior": mu_prior})
