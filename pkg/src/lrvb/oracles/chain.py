"""Container for tracked MCMC functionals."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .ess import cov_standard_error, ess, sd_standard_error


@dataclass
class ChainSummary:
    """Post-burn-in draws of named scalar functionals plus summaries.

    ``draws[name]`` is a 1-D array with one entry per retained iteration.
    """

    draws: dict[str, np.ndarray]
    seed: int
    n_draws: int
    info: dict = field(default_factory=dict)

    def names(self) -> list[str]:
        return list(self.draws)

    def mean(self, name: str) -> float:
        return float(np.mean(self.draws[name]))

    def sd(self, name: str) -> float:
        return float(np.std(self.draws[name]))

    def sd_se(self, name: str) -> float:
        return sd_standard_error(self.draws[name])

    def cov(self, a: str, b: str) -> float:
        x, y = self.draws[a], self.draws[b]
        return float(np.mean((x - x.mean()) * (y - y.mean())))

    def cov_se(self, a: str, b: str) -> float:
        return cov_standard_error(self.draws[a], self.draws[b])

    @cached_property
    def ess(self) -> dict[str, float]:
        return {k: ess(v) for k, v in self.draws.items()}

    def min_ess(self, names=None) -> float:
        names = names or self.names()
        return min(self.ess[n] for n in names)

    def cov_matrix(self, names) -> np.ndarray:
        return np.cov(np.stack([self.draws[n] for n in names]), bias=True)

    def summary(self) -> dict:
        return {
            n: {"mean": self.mean(n), "sd": self.sd(n), "sd_se": self.sd_se(n), "ess": self.ess[n]}
            for n in self.names()
        }

    def to_json(self) -> str:
        return json.dumps(
            {"seed": self.seed, "n_draws": self.n_draws, "info": self.info, "functionals": self.summary()},
            indent=2,
            default=float,
        )

    def to_csv(self, path) -> None:
        names = self.names()
        arr = np.column_stack([self.draws[n] for n in names])
        np.savetxt(path, arr, delimiter=",", header=",".join(names), comments="")
