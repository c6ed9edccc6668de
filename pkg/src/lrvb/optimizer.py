"""Coordinate-ascent driver for mean-field models.

A model supplies its :class:`~lrvb.engine.BlockLayout`, a closed-form (or
inner-numeric) maximiser for each block, the expected log joint ``L(m)``
and its Hessian.  The driver sweeps the blocks in order until one more
sweep moves no mean parameter by more than ``tol`` (relative), i.e. until
``m`` is a fixed point of the sweep map.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import engine
from .engine import BlockLayout, LrvbResult, ZSolver
from .errors import DomainError, MaxSweepsExceeded
from .expfam import FactorState

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_SWEEPS = 10_000

States = dict  # name -> FactorState


class ModelProblem:
    """Interface every model implements.

    Subclasses set ``layout``, ``z_solver`` and ``default_order`` and
    implement :meth:`expected_log_joint`, :meth:`hessian`, :meth:`update`
    and :meth:`initial_states`.  ``L`` is the expectation of the log joint
    up to the additive constant ``log_joint_constant`` documents.
    """

    layout: BlockLayout
    z_solver: ZSolver
    default_order: Sequence[str]
    log_joint_constant: str = "none"

    def expected_log_joint(self, m: np.ndarray) -> float:
        raise NotImplementedError

    def hessian(self, m: np.ndarray):
        raise NotImplementedError

    def update(self, states: Mapping[str, FactorState], name: str) -> FactorState:
        raise NotImplementedError

    def initial_states(self, mode: str = "moment") -> States:
        raise NotImplementedError

    # shared helpers

    def stack(self, states: Mapping[str, FactorState]) -> np.ndarray:
        return np.concatenate([np.asarray(states[b.name].mean).reshape(-1) for b in self.layout])

    def states_from_mean(self, m: np.ndarray) -> States:
        m = np.asarray(m, dtype=float)
        if m.shape != (self.layout.size,):
            raise DomainError(f"m has shape {m.shape}, layout needs ({self.layout.size},)")
        return {b.name: FactorState.from_mean(b.family, self.layout.view(m, b.name)) for b in self.layout}

    def factors(self, states: Mapping[str, FactorState]) -> list[FactorState]:
        return [states[b.name] for b in self.layout]


@dataclass
class FitTrace:
    elbo: list = field(default_factory=list)
    max_change: list = field(default_factory=list)
    sweeps: int = 0
    converged: bool = False

    def elbo_decreases(self) -> np.ndarray:
        """Size of every ELBO decrease between consecutive sweeps."""
        e = np.asarray(self.elbo)
        return np.clip(e[:-1] - e[1:], 0, None) if e.size > 1 else np.zeros(0)


@dataclass
class FitResult:
    problem: ModelProblem
    states: States
    trace: FitTrace

    @property
    def m(self) -> np.ndarray:
        return self.problem.stack(self.states)

    @property
    def converged(self) -> bool:
        return self.trace.converged

    def V(self):
        return engine.assemble_V(self.problem.factors(self.states), self.problem.layout)

    def H(self):
        return self.problem.hessian(self.m)

    def lrvb(self, schur: bool = True, check_pd: bool = False) -> LrvbResult:
        return lrvb_from_states(self.problem, self.states, schur=schur, check_pd=check_pd)


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.max(np.abs(new - old) / (1.0 + np.abs(old)))) if old.size else 0.0


def elbo(problem: ModelProblem, m: np.ndarray | None = None, states: Mapping[str, FactorState] | None = None) -> float:
    """``L(m) + sum of factor entropies``.

    Pass either the stacked mean vector (factors are reconstructed by
    inverting each block) or the factor states themselves.
    """
    if states is None:
        if m is None:
            raise ValueError("need m or states")
        states = problem.states_from_mean(m)
    if m is None:
        m = problem.stack(states)
    return float(problem.expected_log_joint(m) + sum(s.entropy() for s in states.values()))


def sweep(problem: ModelProblem, states: Mapping[str, FactorState], order: Sequence[str] | None = None) -> States:
    """One pass of coordinate updates; returns new states (inputs untouched)."""
    new = dict(states)
    for name in order or problem.default_order:
        new[name] = problem.update(new, name)
    return new


def check_fixed_point(problem: ModelProblem, m=None, states=None, order=None) -> float:
    """Relative max-norm change produced by one full sweep from ``m``."""
    if states is None:
        states = problem.states_from_mean(m)
    before = problem.stack(states)
    after = problem.stack(sweep(problem, states, order))
    return _relative_change(after, before)


def coordinate_ascent(
    problem: ModelProblem,
    init: Mapping[str, FactorState] | str | None = None,
    *,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    order: Sequence[str] | None = None,
    track_elbo: bool = True,
    strict: bool = False,
) -> FitResult:
    """Iterate full sweeps until the fixed-point residual drops below ``tol``.

    ``init`` is a dict of factor states or an initialisation mode understood
    by the model (default ``"moment"``).  If ``max_sweeps`` is exhausted the
    last iterate is returned with ``trace.converged = False`` and a warning;
    with ``strict=True`` :class:`MaxSweepsExceeded` is raised instead.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if init is None or isinstance(init, str):
        states = problem.initial_states(init or "moment")
    else:
        states = dict(init)
    order = list(order or problem.default_order)
    if sorted(order) != sorted(problem.layout.names()):
        raise ValueError(f"update order {order} must list every block once")
    trace = FitTrace()
    m_old = problem.stack(states)
    if track_elbo:
        trace.elbo.append(elbo(problem, m_old, states))
    for s in range(1, max_sweeps + 1):
        states = sweep(problem, states, order)
        m_new = problem.stack(states)
        if not np.all(np.isfinite(m_new)):
            raise DomainError(f"non-finite mean parameters after sweep {s}")
        change = _relative_change(m_new, m_old)
        trace.max_change.append(change)
        trace.sweeps = s
        if track_elbo:
            trace.elbo.append(elbo(problem, m_new, states))
        m_old = m_new
        if change <= tol:
            trace.converged = True
            break
    if not trace.converged:
        msg = f"coordinate ascent hit max_sweeps={max_sweeps} (last change {trace.max_change[-1]:.3g})"
        if strict:
            raise MaxSweepsExceeded(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    log.debug("coordinate ascent: %d sweeps, converged=%s", trace.sweeps, trace.converged)
    return FitResult(problem, states, trace)


def lrvb_from_states(problem: ModelProblem, states, *, schur: bool = True, check_pd: bool = False) -> LrvbResult:
    factors = problem.factors(states)
    V = engine.assemble_V(factors, problem.layout)
    H = problem.hessian(problem.stack(states))
    if schur:
        return engine.lrvb_schur(V, H, problem.layout, problem.z_solver, check_pd=check_pd)
    return engine.lrvb_full(V, H, layout=problem.layout, check_pd=check_pd)
