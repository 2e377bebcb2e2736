from .base import CEFModel, ModelState
from .gmm import GaussianMixture, dp_gmm_prior, kmeanspp_seeds
from .lda import LDA
from .pmf import MatrixFactorization

__all__ = [
    "CEFModel",
    "ModelState",
    "GaussianMixture",
    "dp_gmm_prior",
    "kmeanspp_seeds",
    "LDA",
    "MatrixFactorization",
]
