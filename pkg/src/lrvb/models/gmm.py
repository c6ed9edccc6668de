"""Finite mixture of multivariate normals with conjugate mean-field factors.

    z_n ~ Multinoulli(pi),  x_n | z_nk = 1 ~ N(mu_k, Lambda_k^{-1})
    mu_k ~ N(0, a^{-1} I),  Lambda_k ~ Wishart(W0, n0),  pi ~ Dirichlet(alpha0 1_K)

q(mu_k) is normal, q(Lambda_k) Wishart, q(pi) Dirichlet and q(z_n)
multinoulli.  ``L`` is linear in each factor's statistics, so every update
reads its natural parameters off ``dL/dm``.  ``H_zz`` is identically zero,
which lets the Schur step replace the z-block inverse by the identity.

With ``K = 1`` the ``pi`` and ``z`` blocks are dropped (they are constant)
and the model reduces to a normal/Wishart posterior with independent priors.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import special
from scipy.cluster.vq import kmeans2

from .. import engine
from .. import expfam as ef
from ..engine import BlockLayout, IdentityZSolver, LrvbResult
from ..errors import ConfigError, DomainError
from ..optimizer import FitResult, ModelProblem, coordinate_ascent


@dataclass(frozen=True)
class GmmDataset:
    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
            raise ConfigError("x must be a non-empty N x P matrix")
        if not np.all(np.isfinite(x)):
            raise ConfigError("x must be finite")
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class GmmPriors:
    """Prior hyperparameters; defaults are diffuse (``a = 0.01``,
    ``W0^{-1} = 0.01 I``, ``n0 = 1``, ``alpha0 = 5``).

    The Wishart prior is given by its inverse scale ``W0^{-1}``, which is
    what adds to the scatter matrix in the conjugate update:
    ``log p(Lambda) = (n0 - P - 1)/2 log|Lambda| - tr(W0^{-1} Lambda)/2 + c``.
    """

    k: int
    p: int
    mu_precision: float = 0.01
    lambda_inv_scale: np.ndarray | None = None
    lambda_dof: float = 1.0
    pi_alpha: float = 5.0

    def __post_init__(self):
        if self.k < 1 or self.p < 1:
            raise ConfigError("k and p must be positive")
        s = 0.01 * np.eye(self.p) if self.lambda_inv_scale is None else np.asarray(self.lambda_inv_scale, dtype=float)
        if s.shape != (self.p, self.p) or not np.allclose(s, s.T):
            raise ConfigError("lambda_inv_scale must be a symmetric P x P matrix")
        if np.any(np.linalg.eigvalsh(s) <= 0):
            raise ConfigError("lambda_inv_scale must be positive definite")
        if self.mu_precision <= 0 or self.lambda_dof <= 0 or self.pi_alpha <= 0:
            raise ConfigError("prior scalars must be positive")
        object.__setattr__(self, "lambda_inv_scale", s)

    @property
    def wishart_proper(self) -> bool:
        return self.lambda_dof > self.p - 1


# --------------------------------------------------------------------------
# simulation


def overlapping_truth(k: int, p: int, separation: float, seed: int, weights=None) -> dict:
    """Component parameters whose means sit ``separation`` apart along
    random directions, with unit-scale random covariances."""
    if k < 1 or p < 1 or separation < 0:
        raise ConfigError("need k, p >= 1 and separation >= 0")
    rng = np.random.default_rng(seed)
    mu = np.zeros((k, p))
    for j in range(1, k):
        d = rng.standard_normal(p)
        mu[j] = mu[j - 1] + separation * d / np.linalg.norm(d)
    cov = np.empty((k, p, p))
    for j in range(k):
        A = rng.standard_normal((p, p)) * 0.3
        cov[j] = np.eye(p) + A @ A.T
    pi = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    return {"mu": mu, "cov": cov, "pi": pi}


def gmm_simulate(n: int, truth: dict, seed: int) -> tuple[GmmDataset, dict]:
    """Draw ``n`` points from the mixture described by ``truth``
    (``mu`` K x P, ``cov`` K x P x P, ``pi`` K).  The returned truth record
    adds ``lam`` and the sampled labels."""
    mu = np.atleast_2d(np.asarray(truth["mu"], dtype=float))
    cov = np.asarray(truth["cov"], dtype=float).reshape(mu.shape[0], mu.shape[1], mu.shape[1])
    pi = np.asarray(truth["pi"], dtype=float)
    k, p = mu.shape
    if n < 1 or pi.shape != (k,) or np.any(pi < 0) or abs(pi.sum() - 1) > 1e-10:
        raise ConfigError("need n >= 1 and pi on the simplex")
    try:
        chols = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ConfigError("component covariances must be positive definite") from None
    rng = np.random.default_rng(seed)
    labels = rng.choice(k, size=n, p=pi)
    eps = rng.standard_normal((n, p))
    x = mu[labels] + np.einsum("nij,nj->ni", chols[labels], eps)
    record = {"mu": mu, "cov": cov, "lam": np.linalg.inv(cov), "pi": pi, "labels": labels}
    return GmmDataset(x), record


# --------------------------------------------------------------------------
# problem


class GmmProblem(ModelProblem):
    def __init__(self, data: GmmDataset, priors: GmmPriors):
        if priors.p != data.p:
            raise ConfigError(f"priors are for P={priors.p}, data has P={data.p}")
        self.data = data
        self.priors = priors
        K, P = priors.k, data.p
        self.K, self.P = K, P
        self.r, self.c = ef.vech_indices(P)
        self.D = len(self.r)
        self.w = np.where(self.r == self.c, 1.0, 2.0)
        self.diag_vech = (self.r == self.c).astype(float)
        specs = [("mu", ef.GaussianMV(P), K, "alpha"), ("lam", ef.Wishart(P), K, "alpha")]
        if K > 1:
            specs += [("pi", ef.Dirichlet(K), 1, "alpha"), ("z", ef.Multinoulli(K), data.n, "z")]
        self.layout = BlockLayout(specs)
        self.z_solver = IdentityZSolver()
        self.default_order = ["z", "pi", "mu", "lam"] if K > 1 else ["mu", "lam"]
        x = data.x
        self.xx = x[:, self.r] * x[:, self.c]
        self.w0_inv_vech = priors.lambda_inv_scale[self.r, self.c]
        self.log_joint_constant = self._constant_note()
        self._const = self._constant()

    # ---- bookkeeping

    def _constant_note(self) -> str:
        if self.priors.wishart_proper:
            return "none (all normalising constants included)"
        return "Wishart prior normaliser omitted (prior is improper for lambda_dof <= P - 1)"

    def _constant(self) -> float:
        K, P = self.K, self.P
        p = self.priors
        c = K * 0.5 * P * math.log(p.mu_precision / (2 * math.pi))
        if K > 1:
            c += special.gammaln(K * p.pi_alpha) - K * special.gammaln(p.pi_alpha)
        if p.wishart_proper:
            ld_w0 = -np.linalg.slogdet(p.lambda_inv_scale)[1]
            c -= K * (0.5 * p.lambda_dof * P * math.log(2) + 0.5 * p.lambda_dof * ld_w0 + special.multigammaln(0.5 * p.lambda_dof, P))
        return float(c)

    def unpack(self, m) -> dict:
        m = np.asarray(m, dtype=float)
        K, P, D, N = self.K, self.P, self.D, self.data.n
        lay = self.layout
        mu = lay.view(m, "mu").reshape(K, P + D)
        lam = lay.view(m, "lam").reshape(K, D + 1)
        out = {"b": mu[:, :P], "M": mu[:, P:], "Lv": lam[:, :D], "ld": lam[:, D]}
        if K > 1:
            out["lp"] = lay.view(m, "pi").reshape(K)
            out["Z"] = lay.view(m, "z").reshape(N, K)
        else:
            out["lp"] = np.zeros(1)
            out["Z"] = np.ones((N, 1))
        return out

    def _quad(self, u) -> np.ndarray:
        """E_q[(x_n - mu_k)^T Lambda_k (x_n - mu_k)] as an N x K array."""
        x = self.data.x
        lam = ef.unvech(u["Lv"], self.P)
        xlx = np.einsum("np,kpq,nq->nk", x, lam, x)
        xlb = np.einsum("np,kpq,kq->nk", x, lam, u["b"])
        trace = (self.w * u["Lv"] * u["M"]).sum(axis=1)
        return xlx - 2.0 * xlb + trace[None, :]

    def expected_log_joint(self, m) -> float:
        u = self.unpack(m)
        Z = u["Z"]
        p = self.priors
        out = float((Z * self.block_gradient("z", u)).sum())
        out += -0.5 * p.mu_precision * float((u["M"] * self.diag_vech).sum())
        out += float((0.5 * (p.lambda_dof - self.P - 1.0) * u["ld"]).sum())
        out += -0.5 * float((self.w * self.w0_inv_vech * u["Lv"]).sum())
        if self.K > 1:
            out += (p.pi_alpha - 1.0) * float(u["lp"].sum())
        return out + self._const

    # ---- natural parameters of each block (= dL/dm restricted to it)

    def block_gradient(self, name: str, u: dict) -> np.ndarray:
        p = self.priors
        x, Z = self.data.x, u["Z"]
        P, D = self.P, self.D
        Nk = Z.sum(axis=0)
        if name == "mu":
            lam = ef.unvech(u["Lv"], P)
            sx = Z.T @ x
            g_b = np.einsum("kpq,kq->kp", lam, sx)
            g_M = -0.5 * self.w * (Nk[:, None] * u["Lv"] + p.mu_precision * self.diag_vech)
            return np.concatenate([g_b, g_M], axis=1)
        if name == "lam":
            b, M = u["b"], u["M"]
            sxx = Z.T @ self.xx
            sx = Z.T @ x
            cross = sx[:, self.r] * b[:, self.c] + sx[:, self.c] * b[:, self.r]
            scatter = sxx - cross + Nk[:, None] * M
            g_L = -0.5 * self.w * (scatter + self.w0_inv_vech)
            g_ld = 0.5 * (Nk + p.lambda_dof - P - 1.0)
            return np.concatenate([g_L, g_ld[:, None]], axis=1)
        if name == "pi":
            return Nk + p.pi_alpha - 1.0
        if name == "z":
            return u["lp"][None, :] + 0.5 * u["ld"][None, :] - 0.5 * self._quad(u) - 0.5 * P * math.log(2 * math.pi)
        raise KeyError(name)

    def gradient(self, m) -> np.ndarray:
        u = self.unpack(m)
        return np.concatenate([self.block_gradient(b.name, u).reshape(-1) for b in self.layout])

    def hessian(self, m):
        u = self.unpack(m)
        K, P, D, N = self.K, self.P, self.D, self.data.n
        x, Z = self.data.x, u["Z"]
        r, c, w = self.r, self.c, self.w
        mu_blk, lam_blk = self.layout["mu"], self.layout["lam"]
        size = self.layout.size
        rows, cols, vals = [], [], []
        Nk = Z.sum(axis=0)
        sx = Z.T @ x
        for k in range(K):
            b0 = mu_blk.start + k * (P + D)
            l0 = lam_blk.start + k * (D + 1)
            # mu_a -- Lambda_j : 1/2 w_j (s_c [d = a] + s_d [c = a])
            for j in range(D):
                for a in {int(r[j]), int(c[j])}:
                    v = 0.5 * w[j] * ((sx[k, c[j]] if r[j] == a else 0.0) + (sx[k, r[j]] if c[j] == a else 0.0))
                    rows.append([b0 + a])
                    cols.append([l0 + j])
                    vals.append([v])
            # E mu mu^T -- Lambda (same vech entry)
            rows.append(b0 + P + np.arange(D))
            cols.append(l0 + np.arange(D))
            vals.append(-0.5 * w * Nk[k])
        if K > 1:
            lam = ef.unvech(u["Lv"], P)
            z0 = self.layout["z"].start
            pi0 = self.layout["pi"].start
            zcol = z0 + np.arange(N)[:, None] * K  # + k
            for k in range(K):
                b0 = mu_blk.start + k * (P + D)
                l0 = lam_blk.start + k * (D + 1)
                zc = zcol[:, 0] + k
                lx = x @ lam[k]  # (N, P): sum_b Lambda_ab x_b
                dev = self.xx - x[:, r] * u["b"][k, c] - x[:, c] * u["b"][k, r] + u["M"][k]
                blocks = [
                    (b0 + np.arange(P), lx),
                    (b0 + P + np.arange(D), np.broadcast_to(-0.5 * w * u["Lv"][k], (N, D))),
                    (l0 + np.arange(D), -0.5 * w * dev),
                    (np.array([l0 + D]), np.full((N, 1), 0.5)),
                    (np.array([pi0 + k]), np.ones((N, 1))),
                ]
                for a_idx, val in blocks:
                    rows.append(np.broadcast_to(a_idx[None, :], val.shape).ravel())
                    cols.append(np.broadcast_to(zc[:, None], val.shape).ravel())
                    vals.append(np.asarray(val).ravel())
        rr = np.concatenate([np.asarray(v, dtype=np.int64).ravel() for v in rows])
        cc = np.concatenate([np.asarray(v, dtype=np.int64).ravel() for v in cols])
        vv = np.concatenate([np.asarray(v, dtype=float).ravel() for v in vals])
        return sp.csr_matrix(
            (np.concatenate([vv, vv]), (np.concatenate([rr, cc]), np.concatenate([cc, rr]))), shape=(size, size)
        )

    # ---- updates

    def update(self, states, name):
        m = self.stack(states)
        u = self.unpack(m)
        if name in ("mu", "lam") and self.K > 1:
            Nk = u["Z"].sum(axis=0)
            if np.any(Nk < self.P + 1):
                raise DomainError(f"component with expected count {Nk.min():.3g} < P + 1; the mixture has collapsed")
        eta = self.block_gradient(name, u)
        blk = self.layout[name]
        if not blk.batched:
            eta = eta.reshape(blk.family.size)
        return ef.FactorState.from_natural(blk.family, eta)

    def states_from_params(self, mu, lam, pi, spread: float = 1e3) -> dict:
        """Factors centred on given parameter values (spread = pseudo-count)."""
        K, P = self.K, self.P
        mu = np.asarray(mu, dtype=float).reshape(K, P)
        lam = np.asarray(lam, dtype=float).reshape(K, P, P)
        pi = np.asarray(pi, dtype=float).reshape(K)
        states = {
            "mu": ef.gaussian_mv(mu if K > 1 else mu[0], np.linalg.inv(lam) / spread if K > 1 else np.linalg.inv(lam[0]) / spread),
            "lam": ef.wishart(lam / spread if K > 1 else lam[0] / spread, np.full(K, spread) if K > 1 else spread),
        }
        if K > 1:
            states["pi"] = ef.dirichlet(spread * pi)
            # responsibilities implied by the parameter values
            logits = np.log(pi)[None, :] + np.stack(
                [
                    0.5 * np.linalg.slogdet(lam[k])[1]
                    - 0.5 * np.einsum("np,pq,nq->n", self.data.x - mu[k], lam[k], self.data.x - mu[k])
                    for k in range(K)
                ],
                axis=1,
            )
            states["z"] = ef.FactorState.from_natural(ef.Multinoulli(K), logits)
        return states

    def initial_states(self, mode="kmeans", truth=None, seed: int = 0):
        """``"truth"`` (needs ``truth`` with mu/lam/pi), ``"kmeans"`` or
        ``"moment"`` (a single pooled component copied K times, then split
        by k-means labels)."""
        x = self.data.x
        K, P = self.K, self.P
        if mode == "truth":
            if truth is None:
                raise ValueError("truth init needs a truth record")
            return self.states_from_params(truth["mu"], truth["lam"], truth["pi"])
        if mode not in ("kmeans", "moment"):
            raise ValueError(f"unknown init mode {mode!r}")
        if K == 1:
            labels = np.zeros(x.shape[0], dtype=int)
        else:
            _, labels = kmeans2(x, K, minit="++", seed=seed)
        mu = np.empty((K, P))
        lam = np.empty((K, P, P))
        for k in range(K):
            xk = x[labels == k]
            if xk.shape[0] < P + 1:
                xk = x
            mu[k] = xk.mean(axis=0)
            lam[k] = np.linalg.inv(np.cov(xk, rowvar=False).reshape(P, P) + 1e-6 * np.eye(P))
        pi = np.bincount(labels, minlength=K) + 1.0
        return self.states_from_params(mu, lam, pi / pi.sum(), spread=10.0)


def gmm_problem(data: GmmDataset, priors: GmmPriors | None = None, k: int = 2) -> GmmProblem:
    return GmmProblem(data, priors or GmmPriors(k=k, p=data.p))


def gmm_fit(data: GmmDataset, priors: GmmPriors, init: str = "kmeans", truth=None, seed: int = 0, **kw) -> FitResult:
    prob = GmmProblem(data, priors)
    states = prob.initial_states(init, truth=truth, seed=seed)
    return coordinate_ascent(prob, states, **kw)


def gmm_lrvb(data: GmmDataset, priors: GmmPriors, *, schur: bool = True, **kw) -> tuple[LrvbResult, FitResult]:
    """Fit and correct.  ``sigma_hat`` covers ``(mu, Lambda, log pi)``
    statistics; ``result.labels`` names each row."""
    fit = gmm_fit(data, priors, **kw)
    if not fit.converged:
        raise DomainError("MFVB fit did not converge; refusing to differentiate a non-fixed point")
    return fit.lrvb(schur=schur), fit


def alpha_index(problem: GmmProblem) -> dict:
    """Positions (within the alpha block) of the named scalar summaries,
    keyed like the Gibbs sampler's functionals."""
    K, P, D = problem.K, problem.P, problem.D
    out = {}
    lam0 = problem.layout["lam"].start
    for k in range(K):
        b0 = k * (P + D)
        for a in range(P):
            out[f"mu{k}_{a}"] = b0 + a
        l0 = lam0 + k * (D + 1)
        for j in range(D):
            out[f"lam{k}_{problem.r[j]}{problem.c[j]}"] = l0 + j
        out[f"logdet{k}"] = l0 + D
        if K > 1:
            out[f"log_pi{k}"] = problem.layout["pi"].start + k
    return out


# --------------------------------------------------------------------------
# scaling harness


@dataclass
class ScalingReport:
    rows: list = field(default_factory=list)  # (N, K, P, rep, phase, seconds)
    slope_n: float | None = None
    slope_p: float | None = None

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("N,K,P,rep,phase,seconds\n")
            for row in self.rows:
                fh.write(",".join(str(v) for v in row) + "\n")


def time_lrvb(fit: FitResult) -> dict:
    """Wall-clock of the LRVB stages at a converged fit."""
    prob = fit.problem
    t0 = time.perf_counter()
    H = prob.hessian(fit.m)
    V = engine.assemble_V(prob.factors(fit.states), prob.layout)
    t1 = time.perf_counter()
    res = engine.lrvb_schur(V, H, prob.layout, prob.z_solver)
    d = res.diagnostics
    assembly = t1 - t0
    return {
        "assembly": assembly,
        "products": d["products_seconds"],
        "solve": d["solve_seconds"],
        "total": assembly + d["products_seconds"] + d["solve_seconds"],
    }


def _slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def gmm_scaling_run(
    n_grid=(2000, 4000, 8000, 16000),
    p_grid=(2, 4, 6, 8),
    k: int = 2,
    n_for_p: int = 5000,
    p_for_n: int = 2,
    reps: int = 3,
    seed: int = 0,
    separation: float = 4.0,
) -> ScalingReport:
    """Time LRVB over an N grid and a P grid; slopes use per-point medians
    of total LRVB time."""
    report = ScalingReport()

    def run(n, p, rep_seed):
        truth = overlapping_truth(k, p, separation, seed=rep_seed)
        data, rec = gmm_simulate(n, truth, seed=rep_seed + 1)
        fit = gmm_fit(data, GmmPriors(k=k, p=p), init="truth", truth=rec, track_elbo=False, tol=1e-8)
        return time_lrvb(fit)

    med_n, med_p = [], []
    for n in n_grid:
        tot = []
        for rep in range(reps):
            t = run(n, p_for_n, seed + 1000 * rep)
            tot.append(t["total"])
            for phase, s in t.items():
                report.rows.append((n, k, p_for_n, rep, phase, s))
        med_n.append(float(np.median(tot)))
    for p in p_grid:
        tot = []
        for rep in range(reps):
            t = run(n_for_p, p, seed + 1000 * rep + 7)
            tot.append(t["total"])
            for phase, s in t.items():
                report.rows.append((n_for_p, k, p, rep, phase, s))
        med_p.append(float(np.median(tot)))
    if len(n_grid) > 1:
        report.slope_n = _slope(n_grid, med_n)
    if len(p_grid) > 1:
        report.slope_p = _slope(p_grid, med_p)
    return report
