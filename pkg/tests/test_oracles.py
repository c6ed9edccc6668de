"""Reference tools: ESS, finite differences, quadrature and samplers."""
import numpy as np
import pytest
from scipy import stats

from lrvb.errors import DegenerateChainWarning, DimensionTooLarge, NoConvergence, TooFewDraws
from lrvb.models.gmm import GmmDataset, GmmPriors
from lrvb.models.normal_poisson import NpDataset, NpPriors
from lrvb.models.random_effects import ReDataset, RePriors
from lrvb.oracles.ess import ess, sd_standard_error
from lrvb.oracles.fd import fd_gradient, fd_hessian
from lrvb.oracles.quadrature import np_tiny_posterior, quadrature_posterior
from lrvb.oracles.samplers import gibbs_gmm, gibbs_re, mh_gibbs_np


def _ar1(rng, phi, n):
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - phi**2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    return x


# ---- ESS


def test_ess_iid(rng):
    x = rng.standard_normal(20000)
    assert ess(x) == pytest.approx(20000, rel=0.1)
    assert ess(x) <= 20000


def test_ess_ar1(rng):
    n = 100_000
    x = _ar1(rng, 0.5, n)
    # (1 - phi) / (1 + phi) = 1/3
    assert ess(x) / n == pytest.approx(1 / 3, rel=0.1)


def test_ess_degenerate():
    with pytest.warns(DegenerateChainWarning):
        assert ess(np.ones(100)) == 0.0
    with pytest.raises(TooFewDraws):
        ess(np.arange(3.0))


def test_sd_standard_error_calibrated(rng):
    sds = [np.std(rng.standard_normal(5000)) for _ in range(200)]
    se = sd_standard_error(rng.standard_normal(5000))
    assert se == pytest.approx(np.std(sds), rel=0.35)


# ---- finite differences


def test_fd_quadratic(rng):
    A = rng.standard_normal((4, 4))
    A = A + A.T
    b = rng.standard_normal(4)
    f = lambda m: 0.5 * m @ A @ m + b @ m
    m = rng.standard_normal(4)
    np.testing.assert_allclose(fd_hessian(f, m), A, atol=1e-6)
    np.testing.assert_allclose(fd_gradient(f, m), A @ m + b, atol=1e-6)
    sub = fd_hessian(f, m, index=np.array([1, 3]))
    np.testing.assert_allclose(sub, A[np.ix_([1, 3], [1, 3])], atol=1e-6)


# ---- quadrature


def test_quadrature_gaussian_1d():
    lp = lambda t: stats.norm.logpdf(t[:, 0], 0.3, 0.5)
    r = quadrature_posterior(lp, np.array([[-5.0, 5.0]]))
    assert r.mean[0] == pytest.approx(0.3, abs=1e-8)
    assert r.sd[0] == pytest.approx(0.5, rel=1e-7)
    assert r.log_evidence == pytest.approx(0.0, abs=1e-8)


def test_quadrature_gaussian_2d():
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    d = stats.multivariate_normal([1.0, -1.0], cov)
    r = quadrature_posterior(lambda t: d.logpdf(t), np.array([[-9.0, 11.0], [-15.0, 13.0]]))
    np.testing.assert_allclose(r.mean, [1.0, -1.0], atol=1e-8)
    np.testing.assert_allclose(r.cov, cov, atol=1e-7)


def test_quadrature_limits():
    with pytest.raises(DimensionTooLarge):
        quadrature_posterior(lambda t: -0.5 * (t * t).sum(1), np.tile([-1.0, 1.0], (5, 1)))
    # a kink never settles under the point budget
    with pytest.raises(NoConvergence):
        quadrature_posterior(lambda t: -1e4 * np.abs(t[:, 0] - 0.1234567), np.array([[-1.0, 1.0]]), rtol=1e-12, max_points=2000)


# ---- samplers


def test_gibbs_gmm_single_component_exact():
    """With the conditional mean prior the one-component posterior is
    normal-gamma in closed form."""
    rng = np.random.default_rng(2)
    x = rng.normal(0.5, 1.3, (60, 1))
    pr = GmmPriors(k=1, p=1, mu_precision=0.5, lambda_inv_scale=np.array([[2.0]]), lambda_dof=3.0)
    n, sx, sxx = 60, x.sum(), float((x**2).sum())
    post_n = pr.mu_precision + n
    shape = 0.5 * (pr.lambda_dof + n)
    rate = 0.5 * (2.0 + sxx - sx**2 / post_n)
    e_lam = shape / rate
    sd_lam = np.sqrt(shape) / rate
    e_mu = sx / post_n
    sd_mu = np.sqrt(rate / ((shape - 1) * post_n))
    init = {"mu": [[0.0]], "lam": [[[1.0]]], "pi": [1.0]}
    ch = gibbs_gmm(GmmDataset(x), pr, 41000, 1000, seed=5, init=init)
    for name, m, s in (("mu0_0", e_mu, sd_mu), ("lam0_00", e_lam, sd_lam)):
        d = ch.draws[name]
        se = d.std() / np.sqrt(ch.ess[name])
        assert abs(d.mean() - m) < 4 * se
        assert abs(d.std() - s) < 4 * ch.sd_se(name)


def test_gibbs_re_regression_limit():
    """r = 0 reduces the model to Bayesian linear regression; beta is
    integrated analytically and log tau by quadrature."""
    rng = np.random.default_rng(3)
    n = 40
    X = rng.standard_normal((n, 2))
    y = X @ np.array([0.7, -0.2]) + rng.normal(0, 0.8, n)
    pr = RePriors()
    data = ReDataset(y, X, np.zeros(n), np.zeros(n, dtype=int), 1)
    S_inv = np.linalg.inv(pr.sigma_beta)
    XtX, Xty, yy = X.T @ X, X.T @ y, y @ y

    def parts(s):
        tau = np.exp(s)
        prec = tau[:, None, None] * XtX + S_inv
        mean = np.linalg.solve(prec, (tau[:, None] * Xty)[..., None])[..., 0]
        return tau, prec, mean

    def logp(t):
        s = t[:, 0]
        tau, prec, mean = parts(s)
        quad = tau * yy - np.einsum("ni,nij,nj->n", mean, prec, mean)
        return (pr.alpha_tau + 0.5 * n) * s - pr.beta_tau * tau - 0.5 * np.linalg.slogdet(prec)[1] - 0.5 * quad

    def funcs(t):
        tau, prec, mean = parts(t[:, 0])
        var1 = np.linalg.inv(prec)[:, 0, 0]
        return np.column_stack([mean[:, 0], mean[:, 0] ** 2 + var1, tau])

    q = quadrature_posterior(logp, np.array([[-4.0, 3.0]]), funcs, ("b1", "b1sq", "tau"))
    e_b1 = q.mean[0]
    sd_b1 = np.sqrt(q.mean[1] - e_b1**2)
    ch = gibbs_re(data, pr, 21000, 1000, seed=4)
    d = ch.draws["beta1"]
    assert abs(d.mean() - e_b1) < 4 * d.std() / np.sqrt(ch.ess["beta1"])
    assert abs(d.std() - sd_b1) < 4 * ch.sd_se("beta1")
    t = ch.draws["tau"]
    assert abs(t.mean() - q.mean[2]) < 4 * t.std() / np.sqrt(ch.ess["tau"])


def test_mh_gibbs_np_tiny_vs_quadrature():
    data = NpDataset(np.array([3.0, 1.0]), np.array([0.8, -0.5]))
    pr = NpPriors(alpha_tau=2.0, beta_tau=1.5)
    q = np_tiny_posterior(data, pr)
    ch = mh_gibbs_np(data, pr, 62000, 2000, seed=9, track_z=(0,))
    for name in ("beta", "log_tau", "z0"):
        m, s = q.moment(name)
        d = ch.draws[name]
        assert abs(d.mean() - m) < 4.5 * d.std() / np.sqrt(ch.ess[name])
        assert abs(d.std() - s) < 4.5 * ch.sd_se(name)


def test_samplers_deterministic():
    data = NpDataset(np.array([2.0, 0.0, 5.0]), np.array([0.1, -1.0, 1.2]))
    a = mh_gibbs_np(data, NpPriors(), 600, 100, seed=3)
    b = mh_gibbs_np(data, NpPriors(), 600, 100, seed=3)
    assert a.draws["beta"].tobytes() == b.draws["beta"].tobytes()
    c = mh_gibbs_np(data, NpPriors(), 600, 100, seed=4)
    assert a.draws["beta"].tobytes() != c.draws["beta"].tobytes()
