"""Poisson GLMM with Gaussian latent log-rates."""
import numpy as np
import pytest

from lrvb import expfam as ef
from lrvb.models.normal_poisson import (
    NpDataset,
    NpPriors,
    np_expected_exp_z,
    np_fit,
    np_lrvb,
    np_problem,
    np_simulate,
    np_update_beta,
    np_update_tau,
    np_update_z,
)
from lrvb.oracles.fd import fd_hessian
from lrvb.oracles.quadrature import np_tiny_posterior


@pytest.fixture(scope="module")
def reference_fit():
    data, _ = np_simulate(500, 0.5, 12.0, seed=4)
    res, fit = np_lrvb(data, NpPriors(), tol=1e-9, max_sweeps=1000)
    return data, res, fit


def test_simulate_deterministic():
    a, _ = np_simulate(50, 0.3, 2.0, seed=9)
    b, _ = np_simulate(50, 0.3, 2.0, seed=9)
    assert a.y.tobytes() == b.y.tobytes() and a.x.tobytes() == b.x.tobytes()


def test_simulate_degenerate_limit():
    d, _ = np_simulate(20000, 0.0, 1e8, seed=1, x=np.zeros(20000))
    assert d.y.mean() == pytest.approx(1.0, abs=0.03)


@pytest.mark.parametrize("ez,ez2,expected", [(0.0, 1.0, np.exp(0.5)), (1.0, 1.0, np.e), (0.3, 0.5, np.exp(0.505))])
def test_expected_exp_z(ez, ez2, expected):
    assert np_expected_exp_z(ez, ez2) == pytest.approx(expected, rel=1e-12)


def test_expected_exp_z_monte_carlo(rng):
    draws = rng.normal(0.3, np.sqrt(0.41), 2_000_000)
    mc = np.exp(draws)
    assert np_expected_exp_z(0.3, 0.5) == pytest.approx(mc.mean(), abs=4 * mc.std() / np.sqrt(mc.size))


def test_beta_update_symmetric_and_by_hand():
    data = NpDataset(np.array([2.0]), np.array([1.5]))
    pr = NpPriors()
    states = {"tau": ef.gamma(3.0, 2.0), "z": ef.gaussian_uv(np.array([0.0]), np.array([1.0]))}
    q = np_update_beta(states, data, pr).standard_params()
    assert q["mean"] == pytest.approx(0.0, abs=1e-15)
    # by hand: precision E tau x^2 + 1/s2, mean E tau x E z / precision
    states["z"] = ef.gaussian_uv(np.array([0.7]), np.array([0.2]))
    et = 1.5
    prec = et * 1.5**2 + 1 / 10.0
    q = np_update_beta(states, data, pr).standard_params()
    assert q["var"] == pytest.approx(1 / prec, rel=1e-12)
    assert q["mean"] == pytest.approx(et * 1.5 * 0.7 / prec, rel=1e-12)
    # tau: shape a + 1/2, rate b + E[(z - beta x)^2]/2
    states["beta"] = ef.gaussian_uv(0.4, 0.09)
    qt = np_update_tau(states, data, pr).standard_params()
    ez2 = 0.2 + 0.49
    e_sq = ez2 - 2 * 1.5 * 0.4 * 0.7 + 1.5**2 * (0.09 + 0.16)
    assert qt["shape"] == pytest.approx(1.5) and qt["rate"] == pytest.approx(1 + 0.5 * e_sq, rel=1e-12)


def test_z_update_matches_grid_oracle(rng):
    for _ in range(10):
        n = 1
        y = rng.poisson(3.0, n).astype(float)
        x = rng.normal(size=n)
        data = NpDataset(y, x)
        states = {"beta": ef.gaussian_uv(rng.normal(0.5, 0.3), 0.05), "tau": ef.gamma(20.0, 20.0 / rng.uniform(0.5, 5))}
        q = np_update_z(states, data).standard_params()
        # brute-force grid over (mean, log variance)
        c = x[0] * states["tau"].mean[0] * states["beta"].mean[0] + y[0]
        t = states["tau"].mean[0]
        a = np.linspace(-3, 4, 1401)[:, None]
        s = np.linspace(-6, 1, 1401)[None, :]
        f = c * a - 0.5 * t * (a * a + np.exp(s)) - np.exp(a + 0.5 * np.exp(s)) + 0.5 * s
        i, j = np.unravel_index(np.argmax(f), f.shape)
        assert q["mean"][0] == pytest.approx(a[i, 0], abs=0.006)
        assert np.log(q["var"][0]) == pytest.approx(s[0, j], abs=0.006)


def test_z_update_limits():
    data = NpDataset(np.array([5000.0]), np.array([0.0]))
    st = {"beta": ef.gaussian_uv(0.0, 1.0), "tau": ef.gamma(2.0, 2.0)}
    assert np_update_z(st, data).standard_params()["mean"][0] == pytest.approx(np.log(5000.0), abs=0.01)
    data = NpDataset(np.array([0.0]), np.array([1.0]))
    st = {"beta": ef.gaussian_uv(-1.0, 1e-6), "tau": ef.gamma(1e9, 1.0)}
    assert np_update_z(st, data).standard_params()["mean"][0] == pytest.approx(-1.0, abs=1e-6)


def test_reference_regime_converges(reference_fit):
    data, res, fit = reference_fit
    assert fit.converged and fit.trace.sweeps <= 1000
    assert fit.trace.elbo_decreases().max(initial=0.0) < 1e-9
    prob = fit.problem
    for name in ("beta", "tau"):
        new = prob.update(fit.states, name)
        np.testing.assert_allclose(new.mean, fit.states[name].mean, rtol=1e-8)


def test_hessian_structure_and_fd():
    data, _ = np_simulate(30, 0.5, 3.0, seed=2)
    fit = np_fit(data, tol=1e-12)
    prob = fit.problem
    H = prob.hessian(fit.m)
    H = H.toarray() if hasattr(H, "toarray") else H
    np.testing.assert_allclose(H, H.T, atol=0)
    Hfd = fd_hessian(prob.expected_log_joint, fit.m)
    assert np.abs(H - Hfd).max() < 1e-4
    iz = prob.layout.z_index
    Hz = H[np.ix_(iz, iz)]
    off = Hz.copy()
    for n in range(data.n):
        off[2 * n : 2 * n + 2, 2 * n : 2 * n + 2] = 0
    assert np.count_nonzero(off) == 0


def test_schur_equals_full(reference_fit):
    data, res, fit = reference_fit
    full = fit.lrvb(schur=False)
    ia = fit.problem.layout.alpha_index
    np.testing.assert_allclose(res.sigma_hat, full.sigma_hat[np.ix_(ia, ia)], atol=1e-8)


def test_lrvb_inflates_mfvb(reference_fit):
    _, res, _ = reference_fit
    assert res.sd()[0] > res.mfvb_sd()[0]
    assert res.sd()[2] > res.mfvb_sd()[2]


def test_zero_covariate_decouples_beta():
    data, _ = np_simulate(200, 0.5, 2.0, seed=3, x=np.zeros(200))
    res, _ = np_lrvb(data)
    # with x = 0 beta enters no cross term, so LRVB leaves its variance alone
    assert res.sd()[0] == pytest.approx(res.mfvb_sd()[0], rel=1e-10)
    assert np.abs(res.sigma_hat[0, 2:]).max() < 1e-12


def test_elbo_below_exact_evidence():
    data = NpDataset(np.array([3.0, 1.0]), np.array([0.8, -0.5]))
    pr = NpPriors(alpha_tau=2.0, beta_tau=1.5)
    q = np_tiny_posterior(data, pr)
    fit = np_fit(data, pr, tol=1e-12)
    assert fit.trace.elbo[-1] < q.log_evidence


def test_config_errors():
    from lrvb.errors import ConfigError

    with pytest.raises(ConfigError):
        NpDataset(np.array([1.5]), np.array([0.0]))
    with pytest.raises(ConfigError):
        NpPriors(sigma2_beta=-1.0)
