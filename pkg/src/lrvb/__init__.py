"""Mean-field variational Bayes with linear-response covariance correction."""
from .engine import BlockLayout, LrvbResult, assemble_V, function_covariance, lrvb_full, lrvb_schur
from .optimizer import FitResult, ModelProblem, coordinate_ascent, elbo

__version__ = "0.1.0"

__all__ = [
    "BlockLayout",
    "FitResult",
    "LrvbResult",
    "ModelProblem",
    "assemble_V",
    "coordinate_ascent",
    "elbo",
    "function_covariance",
    "lrvb_full",
    "lrvb_schur",
]
