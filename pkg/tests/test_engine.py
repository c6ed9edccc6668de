"""Linear-response solves: identities, Schur reduction, error paths."""
import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from lrvb import engine
from lrvb import expfam as ef
from lrvb.engine import BlockLayout, assemble_V, lrvb_full, lrvb_schur, make_z_solver
from lrvb.errors import DimensionMismatch, LayoutMismatch, NotPositiveDefiniteWarning, SingularSystem


def random_system(rng, n_alpha=3, n_z=5, z_coupled=True):
    """Random admissible (V, H, layout) with an alpha/z split.

    alpha: ``n_alpha`` univariate Gaussians plus one gamma; z: a batch of
    univariate Gaussians.  ``H`` is scaled so that ``I - V H`` is well
    conditioned; ``H_z`` is 2x2 block diagonal (or zero).
    """
    layout = BlockLayout(
        [("a", ef.GaussianUV(), n_alpha, "alpha"), ("g", ef.Gamma(), 1, "alpha"), ("z", ef.GaussianUV(), n_z, "z")]
    )
    states = [
        ef.gaussian_uv(rng.normal(size=n_alpha), rng.uniform(0.3, 2.0, n_alpha)),
        ef.gamma(rng.uniform(2, 8), rng.uniform(0.5, 2)),
        ef.gaussian_uv(rng.normal(size=n_z), rng.uniform(0.3, 2.0, n_z)),
    ]
    V = assemble_V(states, layout).toarray()
    n = layout.size
    H = rng.normal(size=(n, n))
    H = 0.5 * (H + H.T)
    ia, iz = layout.alpha_index, layout.z_index
    Hz = np.zeros((iz.size, iz.size))
    if z_coupled:
        for b in range(n_z):
            blk = H[np.ix_(iz[2 * b : 2 * b + 2], iz[2 * b : 2 * b + 2])]
            Hz[2 * b : 2 * b + 2, 2 * b : 2 * b + 2] = blk
    H[np.ix_(iz, iz)] = Hz
    rho = np.abs(np.linalg.eigvals(V @ H)).max()
    H *= rng.uniform(0.1, 0.6) / rho
    return V, H, layout


def test_linear_response_matches_inverse_form(rng):
    for _ in range(100):
        V, H, _ = random_system(rng)
        X = lrvb_full(V, H).sigma_hat
        ref = -np.linalg.inv(H - np.linalg.inv(V))
        assert np.abs(X - ref).max() <= 1e-8 * max(1.0, np.abs(ref).max())


@pytest.mark.parametrize("solver", ["block", "dense"])
def test_schur_matches_full_alpha_block(rng, solver):
    for _ in range(100):
        V, H, layout = random_system(rng)
        full = lrvb_full(V, H, layout=layout)
        red = lrvb_schur(sp.csr_matrix(V), sp.csr_matrix(H), layout, make_z_solver(solver, block_size=2))
        ia = layout.alpha_index
        np.testing.assert_allclose(red.sigma_hat, full.sigma_hat[np.ix_(ia, ia)], atol=1e-8, rtol=0)
        # the z-alpha cross block is recoverable from the elimination map
        iz = layout.z_index
        np.testing.assert_allclose(red.cross_covariance(), full.sigma_hat[np.ix_(iz, ia)], atol=1e-8, rtol=0)


def test_identity_solver_when_hz_zero(rng):
    V, H, layout = random_system(rng, z_coupled=False)
    red = lrvb_schur(sp.csr_matrix(V), sp.csr_matrix(H), layout, make_z_solver("identity"))
    ia = layout.alpha_index
    np.testing.assert_allclose(red.sigma_hat, lrvb_full(V, H).sigma_hat[np.ix_(ia, ia)], atol=1e-10)


def test_identity_solver_rejects_nonzero_hz(rng):
    V, H, layout = random_system(rng, z_coupled=True)
    with pytest.raises(DimensionMismatch):
        lrvb_schur(sp.csr_matrix(V), sp.csr_matrix(H), layout, make_z_solver("identity"))


def test_zero_hessian_returns_v(rng):
    V, H, layout = random_system(rng)
    res = lrvb_full(V, np.zeros_like(H))
    np.testing.assert_allclose(res.sigma_hat, V, atol=1e-14)


def test_singular_system_raises():
    with pytest.raises(SingularSystem):
        lrvb_full(np.eye(3), np.eye(3))


def test_shape_mismatch_raises():
    with pytest.raises(DimensionMismatch):
        lrvb_full(np.eye(3), np.eye(2))


def test_bad_partition_raises():
    with pytest.raises(LayoutMismatch):
        BlockLayout([("a", ef.GaussianUV(), 1, "beta")])


def test_assemble_v_is_block_diagonal(rng):
    layout = BlockLayout([("w", ef.Wishart(2), 1, "alpha"), ("z", ef.Multinoulli(3), 4, "z")])
    wish = ef.wishart(np.array([[1.0, 0.3], [0.3, 2.0]]), 5.0)
    mult = ef.multinoulli(rng.dirichlet(np.ones(3), size=4))
    V = assemble_V([wish, mult], layout).toarray()
    np.testing.assert_allclose(V[:4, :4], wish.covariance())
    for i in range(4):
        s = slice(4 + 3 * i, 7 + 3 * i)
        np.testing.assert_allclose(V[s, s], mult.covariance()[i])
    assert np.count_nonzero(V[:4, 4:]) == 0


def test_check_pd_warns_on_indefinite():
    V = np.eye(2)
    H = np.array([[0.0, 0.9], [0.9, 0.0]])
    # Sigma = (I - H)^{-1} has eigenvalues 1/(1 -+ 0.9): positive; flip sign of V to get an indefinite answer
    with pytest.warns(NotPositiveDefiniteWarning):
        lrvb_full(np.diag([1.0, -1.0]), H, check_pd=True)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        lrvb_full(V, H, check_pd=True)


def test_function_covariance_linear_function(rng):
    V, H, layout = random_system(rng)
    res = lrvb_full(V, H, layout=layout)
    g = rng.normal(size=layout.size)
    np.testing.assert_allclose(engine.function_covariance(res, g), res.sigma_hat @ g)
    assert engine.function_function_covariance(res, g, g) == pytest.approx(g @ res.sigma_hat @ g)
    with pytest.raises(DimensionMismatch):
        engine.function_covariance(res, g[:-1])
