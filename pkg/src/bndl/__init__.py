"""Bayesian non-negative decision layer.

A variational classifier head that factorizes class probabilities
through non-negative latent factors with Weibull posteriors, trained by
hand-derived reparameterization gradients.  Includes uncertainty
estimation via Monte-Carlo top-2 t-tests, sparsity control and
measurement, and a synthetic lab for factor-recovery experiments.
"""

__version__ = "0.1.0"

from .backend import BACKEND  # noqa: F401
