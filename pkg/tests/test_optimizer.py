"""Coordinate ascent driver."""
import numpy as np
import pytest
from scipy import stats

from lrvb import expfam as ef
from lrvb.engine import BlockLayout, IdentityZSolver
from lrvb.errors import MaxSweepsExceeded
from lrvb.models.mvn import MvnProblem, random_target
from lrvb.optimizer import ModelProblem, check_fixed_point, coordinate_ascent, elbo


class KnownVarianceMean(ModelProblem):
    """y_i ~ N(mu, 1/lam), mu ~ N(0, s0^2): conjugate, so q(mu) is exact."""

    def __init__(self, y, lam=2.0, s0=3.0):
        self.y, self.lam, self.s0 = np.asarray(y, float), lam, s0
        self.layout = BlockLayout([("mu", ef.GaussianUV(), 1, "alpha")])
        self.z_solver = IdentityZSolver()
        self.default_order = ["mu"]

    def natural(self):
        n = self.y.size
        return np.array([self.lam * self.y.sum(), -0.5 * self.lam * n - 0.5 / self.s0**2])

    def expected_log_joint(self, m):
        y, lam, s0 = self.y, self.lam, self.s0
        m1, m2 = m
        lik = -0.5 * y.size * np.log(2 * np.pi / lam) - 0.5 * lam * (y @ y - 2 * y.sum() * m1 + y.size * m2)
        return float(lik - 0.5 * np.log(2 * np.pi * s0**2) - 0.5 * m2 / s0**2)

    def hessian(self, m):
        return np.zeros((2, 2))

    def update(self, states, name):
        return ef.FactorState.from_natural(ef.GaussianUV(), self.natural())

    def initial_states(self, mode="moment"):
        return {"mu": ef.gaussian_uv(0.0, 1.0)}


def test_conjugate_elbo_equals_log_evidence(rng):
    y = rng.normal(1.2, 0.7, size=25)
    prob = KnownVarianceMean(y)
    fit = coordinate_ascent(prob, tol=1e-14)
    cov = np.eye(y.size) / prob.lam + prob.s0**2
    log_ev = stats.multivariate_normal(np.zeros(y.size), cov).logpdf(y)
    assert fit.converged
    assert fit.trace.elbo[-1] == pytest.approx(log_ev, abs=1e-9)
    # and q(mu) is the exact posterior
    post_var = 1.0 / (prob.lam * y.size + 1 / prob.s0**2)
    sp = fit.states["mu"].standard_params()
    assert sp["var"] == pytest.approx(post_var, rel=1e-12)
    assert sp["mean"] == pytest.approx(post_var * prob.lam * y.sum(), rel=1e-12)


def test_mvn_converges_to_fixed_point_with_monotone_elbo(rng):
    prob = MvnProblem(random_target(5, rng, 50.0))
    fit = coordinate_ascent(prob, tol=1e-12, max_sweeps=50_000)
    assert fit.converged
    assert fit.trace.elbo_decreases().max(initial=0.0) < 1e-12
    assert check_fixed_point(prob, fit.m) < 1e-10
    assert elbo(prob, fit.m) == pytest.approx(fit.trace.elbo[-1], abs=1e-10)


def test_max_sweeps_warns_or_raises(rng):
    prob = MvnProblem(random_target(4, rng, 80.0))
    with pytest.warns(RuntimeWarning, match="max_sweeps"):
        fit = coordinate_ascent(prob, max_sweeps=1)
    assert not fit.converged
    with pytest.raises(MaxSweepsExceeded):
        coordinate_ascent(prob, max_sweeps=1, strict=True)


def test_argument_validation(rng):
    prob = MvnProblem(random_target(3, rng))
    with pytest.raises(ValueError):
        coordinate_ascent(prob, tol=0.0)
    with pytest.raises(ValueError):
        coordinate_ascent(prob, order=["theta0", "theta1"])


def test_update_order_does_not_change_optimum(rng):
    t = random_target(4, rng, 20.0)
    a = coordinate_ascent(MvnProblem(t), tol=1e-13, max_sweeps=50_000)
    b = coordinate_ascent(MvnProblem(t), tol=1e-13, max_sweeps=50_000, order=["theta3", "theta1", "theta0", "theta2"])
    np.testing.assert_allclose(a.m, b.m, atol=1e-9)


def test_explicit_initial_states(rng):
    t = random_target(3, rng)
    prob = MvnProblem(t)
    fit = coordinate_ascent(prob, prob.initial_states("truth"), tol=1e-13)
    assert fit.trace.sweeps <= 2
    np.testing.assert_allclose(fit.m[0::2], t.mu, atol=1e-10)
