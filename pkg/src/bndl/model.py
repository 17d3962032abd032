"""The non-negative decision layer: inference heads, sampling, forward pass.

A sample's features h are mapped to a per-dimension Weibull posterior
over the factor scores theta (shape head: softplus + clamp; scale head:
ReLU floored at the scale minimum, divided by Gamma(1 + 1/k) so the
posterior mean equals the ReLU output exactly).  A shared Weibull
posterior over the factor loading matrix phi uses free parameter
matrices, with the sparsifying activation ReLU(w2 - alpha) producing
exact zeros that propagate through sampling and prediction.

Class scores are u = theta @ phi, normalized by their sum (floored at
CAT_EPS) rather than softmax, which preserves the non-negative
factorization reading of the forward pass.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .distributions import (
    SCALE_FLOOR,
    SHAPE_MAX,
    SHAPE_MIN,
    GammaParams,
)
from .errors import ConfigError, DomainError, LabelError, ShapeError
from .special import log_gamma, normalize_nonneg, softplus

CAT_EPS = 1e-10

# softplus(x) = 1 at x = ln(e - 1); used to start shapes near 1.
_SOFTPLUS_INV_ONE = float(np.log(np.e - 1.0))
_INIT_NOISE = 0.1


@dataclass
class ModelParams:
    """All trainable weights of the decision layer plus fixed priors.

    Arrays are mutated in place by the optimizer; forward passes never
    write to them.
    """

    wk: np.ndarray  # (D, K) shape head
    bk: np.ndarray  # (K,)
    wl: np.ndarray  # (D, K) scale head
    bl: np.ndarray  # (K,)
    w1: np.ndarray  # (K, C) global shape parameters
    w2: np.ndarray  # (K, C) global scale parameters
    alpha_sparsity: float = 0.0
    prior_theta: GammaParams = field(default_factory=lambda: GammaParams(1.0, 1.0))
    prior_phi: GammaParams = field(default_factory=lambda: GammaParams(1.0, 1.0))

    @property
    def dim(self):
        return self.wk.shape[0]

    @property
    def latent(self):
        return self.wk.shape[1]

    @property
    def classes(self):
        return self.w1.shape[1]

    def blocks(self):
        """Trainable arrays in the fixed serialization order."""
        return {
            "wk": self.wk,
            "bk": self.bk,
            "wl": self.wl,
            "bl": self.bl,
            "w1": self.w1,
            "w2": self.w2,
        }

    def copy(self):
        return replace(
            self,
            wk=self.wk.copy(),
            bk=self.bk.copy(),
            wl=self.wl.copy(),
            bl=self.bl.copy(),
            w1=self.w1.copy(),
            w2=self.w2.copy(),
        )

    def validate(self):
        d, k = self.wk.shape
        if self.wl.shape != (d, k):
            raise ShapeError("wk and wl disagree on dimensions")
        if self.bk.shape != (k,) or self.bl.shape != (k,):
            raise ShapeError("bias vectors must have length K")
        if self.w1.shape != self.w2.shape or self.w1.shape[0] != k:
            raise ShapeError("global parameter matrices must be (K, C)")
        for name, arr in self.blocks().items():
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"non-finite values in parameter block '{name}'")
        if self.alpha_sparsity < 0.0:
            raise ConfigError("alpha_sparsity must be non-negative")


@dataclass(frozen=True)
class LocalPosterior:
    """Per-sample factor-score posterior; (K,) vectors or (B, K) arrays."""

    k: np.ndarray
    lam: np.ndarray


@dataclass(frozen=True)
class GlobalPosterior:
    """Factor-loading posterior; (K, C) arrays, zeros where sparsified."""

    k_phi: np.ndarray
    lam_phi: np.ndarray


@dataclass(frozen=True)
class PredictiveDistribution:
    probs: np.ndarray       # simplex C-vector
    raw_scores: np.ndarray  # theta @ phi before normalization


def init_model(
    dim, latent, classes, alpha_sparsity=0.0, seed=0,
    prior_theta=None, prior_phi=None,
) -> ModelParams:
    """Seeded initialization with shapes near 1 and raw scales near 1.

    Feature-head weights are Gaussian with std 1/sqrt(D); biases place
    softplus and ReLU outputs at 1.  Global matrices start at the same
    operating point with small noise to break factor symmetry.
    """
    if dim < 1 or latent < 1 or classes < 1:
        raise ConfigError("model dimensions must all be >= 1")
    rng = np.random.default_rng(seed)
    std = 1.0 / np.sqrt(dim)
    wk = rng.normal(0.0, std, size=(dim, latent))
    wl = rng.normal(0.0, std, size=(dim, latent))
    w1 = _SOFTPLUS_INV_ONE + _INIT_NOISE * rng.normal(size=(latent, classes))
    w2 = 1.0 + _INIT_NOISE * rng.normal(size=(latent, classes))
    return ModelParams(
        wk=wk,
        bk=np.full(latent, _SOFTPLUS_INV_ONE),
        wl=wl,
        bl=np.ones(latent),
        w1=w1,
        w2=w2,
        alpha_sparsity=float(alpha_sparsity),
        prior_theta=prior_theta or GammaParams(1.0, 1.0),
        prior_phi=prior_phi or GammaParams(1.0, 1.0),
    )


def _features_2d(p, h):
    h = np.asarray(h, dtype=np.float64)
    single = h.ndim == 1
    if single:
        h = h[None, :]
    if h.ndim != 2 or h.shape[1] != p.dim:
        raise ShapeError(
            f"features have dimension {h.shape[-1]}, model expects {p.dim}"
        )
    return h, single


def infer_local(p: ModelParams, h) -> LocalPosterior:
    """Weibull posterior over theta for one feature vector (or a batch)."""
    h2, single = _features_2d(p, h)
    k = np.clip(softplus(h2 @ p.wk + p.bk), SHAPE_MIN, SHAPE_MAX)
    raw = np.maximum(h2 @ p.wl + p.bl, 0.0)
    mean = np.maximum(raw, SCALE_FLOOR)
    lam = mean / np.exp(log_gamma(1.0 + 1.0 / k))
    if single:
        return LocalPosterior(k=k[0], lam=lam[0])
    return LocalPosterior(k=k, lam=lam)


def infer_global(p: ModelParams) -> GlobalPosterior:
    """Weibull posterior over phi with exact zeros where sparsified."""
    k_phi = np.clip(softplus(p.w1), SHAPE_MIN, SHAPE_MAX)
    raw = np.maximum(p.w2 - p.alpha_sparsity, 0.0)
    live = raw > 0.0
    mean = np.maximum(raw, SCALE_FLOOR)
    lam_phi = np.where(live, mean / np.exp(log_gamma(1.0 + 1.0 / k_phi)), 0.0)
    return GlobalPosterior(k_phi=k_phi, lam_phi=lam_phi)


def local_mean(lp: LocalPosterior) -> np.ndarray:
    """Posterior mean of theta: lam * Gamma(1 + 1/k)."""
    return lp.lam * np.exp(log_gamma(1.0 + 1.0 / lp.k))


def global_mean(gp: GlobalPosterior) -> np.ndarray:
    """Posterior mean of phi; sparsified entries stay exactly zero."""
    return gp.lam_phi * np.exp(log_gamma(1.0 + 1.0 / gp.k_phi))


def _check_open_unit(eps, shape):
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != shape:
        raise ShapeError(f"noise shape {eps.shape} does not match {shape}")
    if np.any(eps <= 0.0) or np.any(eps >= 1.0):
        raise DomainError("uniform noise must lie strictly inside (0, 1)")
    return eps


def sample_theta(lp: LocalPosterior, eps) -> np.ndarray:
    """Elementwise reparameterized draw of the factor scores."""
    eps = _check_open_unit(eps, lp.k.shape)
    return lp.lam * np.power(-np.log1p(-eps), 1.0 / lp.k)


def sample_phi(gp: GlobalPosterior, eps) -> np.ndarray:
    """Elementwise draw of the factor loadings; zero scales give zeros."""
    eps = _check_open_unit(eps, gp.k_phi.shape)
    return gp.lam_phi * np.power(-np.log1p(-eps), 1.0 / gp.k_phi)


def predict_proba(theta, phi) -> PredictiveDistribution:
    """Class distribution from non-negative scores u = theta @ phi."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if np.any(theta < 0.0) or np.any(phi < 0.0):
        raise DomainError("predict_proba requires non-negative inputs")
    raw = theta @ phi
    return PredictiveDistribution(
        probs=normalize_nonneg(raw, CAT_EPS), raw_scores=raw
    )


def expected_forward(p: ModelParams, h) -> PredictiveDistribution:
    """Deterministic forward pass through the posterior means.

    This is the factorization-mode prediction the sampled forward pass
    collapses to as the shape parameters grow large.
    """
    h2, single = _features_2d(p, h)
    if not single:
        raise ShapeError("expected_forward takes a single feature vector")
    return predict_proba(local_mean(infer_local(p, h)), global_mean(infer_global(p)))


def expected_scores(p: ModelParams, h) -> np.ndarray:
    """Batched mean raw scores (B, C); argmax gives expected-mode labels."""
    h2, _ = _features_2d(p, h)
    theta = local_mean(infer_local(p, h2))
    return theta @ global_mean(infer_global(p))


def log_likelihood(y, pd: PredictiveDistribution) -> float:
    """ln p(y) under a predictive distribution; finite by the CAT_EPS floor."""
    c = pd.probs.shape[0]
    if not (0 <= y < c):
        raise LabelError(f"label {y} outside [0, {c})")
    return float(np.log(pd.probs[int(y)]))
