"""Linear response covariance from a mean-field fixed point.

Given the block-diagonal covariance ``V`` of the variational sufficient
statistics and the Hessian ``H`` of the expected log joint with respect to
the mean parameters, the corrected covariance is the solution ``X`` of
``(I - V H) X = V``.  When the parameters split into globals ``alpha`` and
nuisance locals ``z``, the ``alpha`` block can be had from a Schur
complement that only needs an ``alpha``-sized factorisation plus a cheap
solve against ``I_z - V_z H_z``.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import DimensionMismatch, LayoutMismatch, NotPositiveDefiniteWarning, SingularSystem
from .expfam import FactorFamily, FactorState

RESIDUAL_TOL = 1e-6
ASYMMETRY_TOL = 1e-6
PD_TOL = -1e-8


# --------------------------------------------------------------------------
# layout


@dataclass(frozen=True)
class Block:
    name: str
    family: FactorFamily
    count: int
    start: int
    partition: str

    @property
    def stop(self) -> int:
        return self.start + self.count * self.family.size

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)

    @property
    def batched(self) -> bool:
        return self.count > 1 or self.partition == "z"


class BlockLayout:
    """Index ranges of each factor (or batch of factors) inside ``m``.

    Parameters
    ----------
    specs : sequence of (name, family, count, partition)
        ``count`` is the number of identical-family factors stored
        contiguously; ``partition`` is ``"alpha"`` or ``"z"``.
    """

    def __init__(self, specs: Iterable[tuple[str, FactorFamily, int, str]]):
        blocks = []
        start = 0
        for name, fam, count, part in specs:
            if part not in ("alpha", "z"):
                raise LayoutMismatch(f"partition must be 'alpha' or 'z', got {part!r}")
            if count < 1:
                raise LayoutMismatch(f"block {name!r} has no factors")
            b = Block(name, fam, int(count), start, part)
            blocks.append(b)
            start = b.stop
        names = [b.name for b in blocks]
        if len(set(names)) != len(names):
            raise LayoutMismatch("block names must be unique")
        self.blocks: tuple[Block, ...] = tuple(blocks)
        self.size = start
        self._by_name = {b.name: b for b in blocks}

    def __getitem__(self, name: str) -> Block:
        return self._by_name[name]

    def __iter__(self):
        return iter(self.blocks)

    def __len__(self):
        return len(self.blocks)

    def names(self) -> list[str]:
        return [b.name for b in self.blocks]

    def view(self, m: np.ndarray, name: str) -> np.ndarray:
        """The slice of ``m`` for a block, shaped ``(count, size)`` when batched."""
        b = self._by_name[name]
        seg = m[b.slice]
        return seg.reshape(b.count, b.family.size) if b.batched else seg

    def indices(self, partition: str) -> np.ndarray:
        idx = [np.arange(b.start, b.stop) for b in self.blocks if b.partition == partition]
        return np.concatenate(idx) if idx else np.zeros(0, dtype=int)

    @property
    def alpha_index(self) -> np.ndarray:
        return self.indices("alpha")

    @property
    def z_index(self) -> np.ndarray:
        return self.indices("z")

    def labels(self) -> list[str]:
        """Human-readable name for every coordinate of ``m``."""
        out = []
        for b in self.blocks:
            stat_names = []
            for stat, sl in b.family.layout():
                n = sl.stop - sl.start
                stat_names += [stat] if n == 1 else [f"{stat}[{i}]" for i in range(n)]
            for i in range(b.count):
                prefix = f"{b.name}[{i}]" if b.batched else b.name
                out += [f"{prefix}.{s}" for s in stat_names]
        return out

    def to_json(self) -> list[dict]:
        return [
            {
                "name": b.name,
                "family": b.family.tag,
                "dim": b.family.dim,
                "count": b.count,
                "start": b.start,
                "stop": b.stop,
                "partition": b.partition,
            }
            for b in self.blocks
        ]

    def check(self, factors: Sequence[FactorState]) -> None:
        if len(factors) != len(self.blocks):
            raise LayoutMismatch(f"{len(factors)} factors for {len(self.blocks)} layout blocks")
        for b, f in zip(self.blocks, factors):
            if f.family != b.family or f.count != b.count:
                raise LayoutMismatch(
                    f"block {b.name!r} expects {b.count} x {b.family}, got {f.count} x {f.family}"
                )


# --------------------------------------------------------------------------
# V


def assemble_V(factors: Sequence[FactorState], layout: BlockLayout) -> sp.csr_matrix:
    """Block-diagonal covariance of all sufficient statistics (sparse)."""
    layout.check(factors)
    rows, cols, vals = [], [], []
    for b, f in zip(layout.blocks, factors):
        blk = np.asarray(f.covariance()).reshape(b.count, b.family.size, b.family.size)
        d = b.family.size
        off = b.start + d * np.arange(b.count)[:, None, None]
        ii = np.broadcast_to(off + np.arange(d)[None, :, None], blk.shape)
        jj = np.broadcast_to(off + np.arange(d)[None, None, :], blk.shape)
        rows.append(ii.ravel())
        cols.append(jj.ravel())
        vals.append(blk.ravel())
    n = layout.size
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


# --------------------------------------------------------------------------
# results


@dataclass
class LrvbResult:
    """Corrected covariance plus the ingredients that produced it.

    ``index`` lists the coordinates of ``m`` that ``sigma_hat`` covers (all
    of them for the full solve, the ``alpha`` coordinates for the Schur
    form).  ``z_map`` is ``(I_z - V_z H_z)^{-1} V_z H_{z alpha}``; the
    ``z``-``alpha`` cross covariance is ``z_map @ sigma_hat``.
    """

    sigma_hat: np.ndarray
    V: object
    H: object
    index: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    layout: BlockLayout | None = None
    z_map: np.ndarray | None = None
    z_index: np.ndarray | None = None

    @property
    def labels(self) -> list[str] | None:
        if self.layout is None:
            return None
        lab = self.layout.labels()
        return [lab[i] for i in self.index]

    def mfvb_cov(self) -> np.ndarray:
        return _dense(_submatrix(self.V, self.index, self.index))

    def sd(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.sigma_hat), 0, None))

    def mfvb_sd(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.mfvb_cov()), 0, None))

    def position(self, coord: int) -> int:
        """Row of ``sigma_hat`` holding coordinate ``coord`` of ``m``."""
        hit = np.flatnonzero(self.index == coord)
        if hit.size == 0:
            raise DimensionMismatch(f"coordinate {coord} not covered by this result")
        return int(hit[0])

    def cross_covariance(self) -> np.ndarray:
        """Covariance between every ``z`` coordinate and the ``alpha`` block."""
        if self.z_map is None:
            raise DimensionMismatch("result has no z elimination map")
        return self.z_map @ self.sigma_hat


def _dense(a) -> np.ndarray:
    return a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)


def _lu_solve_checked(A: np.ndarray, B: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise SingularSystem(f"{what}: non-finite entries")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=False)
    diag = np.abs(np.diag(lu))
    if diag.size and (diag.min() == 0.0 or diag.min() <= np.finfo(float).eps * diag.max() * A.shape[0]):
        raise SingularSystem(f"{what}: matrix is singular")
    X = sla.lu_solve((lu, piv), B, check_finite=False)
    if not np.all(np.isfinite(X)):
        raise SingularSystem(f"{what}: solve produced non-finite values")
    resid = float(np.max(np.abs(A @ X - B))) if X.size else 0.0
    if resid > RESIDUAL_TOL:
        raise SingularSystem(f"{what}: residual {resid:.3g} exceeds {RESIDUAL_TOL}")
    return X, resid


def _finish(X: np.ndarray, diagnostics: dict, check_pd: bool) -> np.ndarray:
    asym = float(np.max(np.abs(X - X.T))) if X.size else 0.0
    diagnostics["asymmetry"] = asym
    sigma = 0.5 * (X + X.T)
    if asym > ASYMMETRY_TOL:
        warnings.warn(
            f"LRVB covariance asymmetry {asym:.3g} > {ASYMMETRY_TOL}; the MFVB optimum is probably not converged",
            RuntimeWarning,
            stacklevel=3,
        )
    if check_pd:
        lam_min = float(np.linalg.eigvalsh(sigma).min())
        diagnostics["min_eigenvalue"] = lam_min
        if lam_min < PD_TOL:
            warnings.warn(
                f"LRVB covariance has eigenvalue {lam_min:.3g}; the fixed point may not be a local maximum",
                NotPositiveDefiniteWarning,
                stacklevel=3,
            )
    return sigma


def lrvb_full(V, H, *, layout: BlockLayout | None = None, check_pd: bool = False) -> LrvbResult:
    """Solve ``(I - V H) X = V`` densely and symmetrise.

    Raises
    ------
    SingularSystem
        If ``I - V H`` is singular or the solve residual exceeds 1e-6.
    """
    Vd, Hd = _dense(V), _dense(H)
    if Vd.shape != Hd.shape or Vd.shape[0] != Vd.shape[1]:
        raise DimensionMismatch(f"V {Vd.shape} and H {Hd.shape} must be equal square matrices")
    n = Vd.shape[0]
    t0 = time.perf_counter()
    A = np.eye(n) - Vd @ Hd
    X, resid = _lu_solve_checked(A, Vd, "I - V H")
    diag = {"residual": resid, "solve_seconds": time.perf_counter() - t0}
    sigma = _finish(X, diag, check_pd)
    return LrvbResult(sigma, V, H, np.arange(n), diag, layout)


# --------------------------------------------------------------------------
# inner solvers for I_z - V_z H_z


class ZSolver:
    """Applies ``(I_z - V_z H_z)^{-1}`` to a dense right-hand side."""

    name = "abstract"

    def solve(self, Vz, Hz, R: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class IdentityZSolver(ZSolver):
    """For models with ``H_z = 0`` (the inner matrix is the identity)."""

    name = "identity"

    def solve(self, Vz, Hz, R):
        nnz = Hz.count_nonzero() if sp.issparse(Hz) else np.count_nonzero(Hz)
        if nnz:
            raise DimensionMismatch("identity z-solver requires H_z == 0")
        return R


class BlockDiagonalZSolver(ZSolver):
    """Independent ``b x b`` diagonal blocks, solved in one batched call."""

    name = "block"

    def __init__(self, block_size: int):
        self.block_size = int(block_size)

    def _blocks(self, M, nb: int) -> np.ndarray:
        b = self.block_size
        out = np.zeros((nb, b, b))
        C = sp.coo_matrix(M)
        bi, bj = C.row // b, C.col // b
        if np.any(bi != bj):
            raise DimensionMismatch("matrix is not block diagonal with the declared block size")
        np.add.at(out, (bi, C.row % b, C.col % b), C.data)
        return out

    def solve(self, Vz, Hz, R):
        nz = R.shape[0]
        b = self.block_size
        if nz % b:
            raise DimensionMismatch(f"z dimension {nz} not a multiple of block size {b}")
        nb = nz // b
        Vb = self._blocks(Vz, nb)
        Hb = self._blocks(Hz, nb)
        A = np.eye(b)[None] - Vb @ Hb
        try:
            X = np.linalg.solve(A, R.reshape(nb, b, -1))
        except np.linalg.LinAlgError:
            raise SingularSystem("singular z block in I_z - V_z H_z") from None
        return X.reshape(nz, -1)


class DenseZSolver(ZSolver):
    name = "dense"

    def solve(self, Vz, Hz, R):
        A = np.eye(R.shape[0]) - _dense(Vz) @ _dense(Hz)
        X, _ = _lu_solve_checked(A, R, "I_z - V_z H_z")
        return X


def make_z_solver(tag: str, block_size: int = 1) -> ZSolver:
    if tag == "identity":
        return IdentityZSolver()
    if tag == "block":
        return BlockDiagonalZSolver(block_size)
    if tag == "dense":
        return DenseZSolver()
    raise ValueError(f"unknown z-solver {tag!r}")


def _submatrix(M, rows, cols):
    if sp.issparse(M):
        M = sp.csr_matrix(M)
        return M[rows][:, cols]
    return np.asarray(M)[np.ix_(rows, cols)]


def lrvb_schur(
    V,
    H,
    layout: BlockLayout,
    z_solver: ZSolver | None = None,
    *,
    check_pd: bool = False,
) -> LrvbResult:
    """Corrected covariance of the ``alpha`` block only.

    Computes ``(I_a - V_a H_a - V_a H_az (I_z - V_z H_z)^{-1} V_z H_za)^{-1} V_a``
    without forming any ``z``-sized dense matrix beyond ``z x alpha``.
    """
    ia, iz = layout.alpha_index, layout.z_index
    if V.shape != (layout.size, layout.size) or H.shape != V.shape:
        raise DimensionMismatch("V and H must match the layout size")
    z_solver = z_solver or DenseZSolver()
    t0 = time.perf_counter()
    Va = _dense(_submatrix(V, ia, ia))
    Ha = _dense(_submatrix(H, ia, ia))
    if iz.size:
        Vz = _submatrix(V, iz, iz)
        Hz = _submatrix(H, iz, iz)
        Hza = _submatrix(H, iz, ia)
        Haz = _submatrix(H, ia, iz)
        R = Vz @ Hza
        R = _dense(R)
        Zmap = z_solver.solve(Vz, Hz, R)
        coupling = _dense(Haz @ Zmap)
    else:
        Zmap = np.zeros((0, ia.size))
        coupling = np.zeros_like(Ha)
    t1 = time.perf_counter()
    M = np.eye(ia.size) - Va @ Ha - Va @ coupling
    X, resid = _lu_solve_checked(M, Va, "Schur complement")
    t2 = time.perf_counter()
    diag = {
        "residual": resid,
        "z_solver": z_solver.name,
        "products_seconds": t1 - t0,
        "solve_seconds": t2 - t1,
    }
    sigma = _finish(X, diag, check_pd)
    return LrvbResult(sigma, V, H, ia, diag, layout, z_map=Zmap, z_index=iz)


# --------------------------------------------------------------------------
# functions of theta


def function_covariance(result: LrvbResult, grad_f) -> np.ndarray:
    """Covariance of every covered statistic with ``phi(theta)``.

    ``grad_f`` is the gradient of ``E_q[phi]`` with respect to the mean
    parameters covered by ``result``.
    """
    g = np.asarray(grad_f, dtype=float)
    if g.shape != (result.sigma_hat.shape[0],):
        raise DimensionMismatch(f"gradient of length {g.size} for a {result.sigma_hat.shape[0]}-dim result")
    return result.sigma_hat @ g


def function_function_covariance(result: LrvbResult, grad_g, grad_f) -> float:
    """Covariance of two scalar functions from their mean-parameter gradients."""
    g = np.asarray(grad_g, dtype=float)
    if g.shape != (result.sigma_hat.shape[0],):
        raise DimensionMismatch(f"gradient of length {g.size} for a {result.sigma_hat.shape[0]}-dim result")
    return float(g @ function_covariance(result, grad_f))
