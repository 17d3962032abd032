"""Weibull reparameterized sampling, moments, and the analytic KL to gamma priors.

The KL divergence KL(Weibull(k, lam) || Gamma(alpha, beta)) has the
closed form

    g*alpha/k - alpha*ln(lam) + ln(k) + beta*lam*Gamma(1 + 1/k)
        - g - 1 - alpha*ln(beta) + lnGamma(alpha)

with g the Euler-Mascheroni constant.  ``kl_numeric_oracle`` checks it
by adaptive quadrature and is used by the test suite only.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, OracleError
from .special import EULER_MASCHERONI, digamma, log_gamma

# Parameter clamps applied at the distribution boundary.  ln(k), ln(lam)
# and Gamma(1 + 1/k) all blow up at zero, and ReLU-produced scales can
# be exactly zero.
SHAPE_MIN = 1e-2
SHAPE_MAX = 1e3
SCALE_FLOOR = 1e-4


@dataclass(frozen=True)
class WeibullParams:
    """Shape/scale pair (k, lambda); clamped on construction."""

    k: float
    lam: float

    def __post_init__(self):
        k = float(np.clip(self.k, SHAPE_MIN, SHAPE_MAX))
        lam = float(max(self.lam, SCALE_FLOOR))
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "lam", lam)


@dataclass(frozen=True)
class GammaParams:
    """Shape/rate pair (alpha, beta)."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0.0 and self.beta > 0.0):
            raise DomainError("gamma parameters must be positive")


def _check_open_unit(eps):
    arr = np.asarray(eps, dtype=np.float64)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("uniform noise must lie strictly inside (0, 1)")
    return arr


def weibull_sample(w: WeibullParams, eps):
    """Deterministic reparameterized draw lam * (-ln(1 - eps))**(1/k)."""
    arr = _check_open_unit(eps)
    x = w.lam * np.power(-np.log1p(-arr), 1.0 / w.k)
    return float(x) if arr.ndim == 0 else x


def weibull_mean(w: WeibullParams) -> float:
    """E[X] = lam * Gamma(1 + 1/k)."""
    return w.lam * np.exp(log_gamma(1.0 + 1.0 / w.k))


def weibull_sample_grad(w: WeibullParams, eps):
    """Pathwise partials (dx/dk, dx/dlam) of the reparameterized draw."""
    arr = _check_open_unit(eps)
    z = -np.log1p(-arr)
    pow_term = np.power(z, 1.0 / w.k)
    dx_dlam = pow_term
    dx_dk = w.lam * pow_term * np.log(z) * (-1.0 / (w.k * w.k))
    if arr.ndim == 0:
        return float(dx_dk), float(dx_dlam)
    return dx_dk, dx_dlam


def kl_weibull_gamma(w: WeibullParams, g: GammaParams) -> float:
    """Analytic KL(Weibull(k, lam) || Gamma(alpha, beta))."""
    k, lam = w.k, w.lam
    a, b = g.alpha, g.beta
    gamma1k = np.exp(log_gamma(1.0 + 1.0 / k))
    return (
        EULER_MASCHERONI * a / k
        - a * np.log(lam)
        + np.log(k)
        + b * lam * gamma1k
        - EULER_MASCHERONI
        - 1.0
        - a * np.log(b)
        + log_gamma(a)
    )


def kl_weibull_gamma_grad(w: WeibullParams, g: GammaParams):
    """Partials (d/dk, d/dlam) of the analytic KL.

    d/dk runs through Gamma(1 + 1/k), whose log-derivative is
    -psi(1 + 1/k)/k^2.
    """
    k, lam = w.k, w.lam
    a, b = g.alpha, g.beta
    gamma1k = np.exp(log_gamma(1.0 + 1.0 / k))
    psi1k = digamma(1.0 + 1.0 / k)
    d_k = (
        -EULER_MASCHERONI * a / (k * k)
        + 1.0 / k
        - b * lam * gamma1k * psi1k / (k * k)
    )
    d_lam = -a / lam + b * gamma1k
    return d_k, d_lam


def kl_numeric_oracle(w: WeibullParams, g: GammaParams) -> float:
    """Quadrature evaluation of the KL integral (test oracle).

    Integrates q*ln(q/p) over (0, x_hi), where x_hi leaves Weibull
    survival mass below 1e-12.  The interval is split near zero when
    k < 1 because the Weibull density has an integrable singularity
    there.
    """
    from scipy import integrate

    k, lam = w.k, w.lam
    a, b = g.alpha, g.beta
    ln_norm_q = np.log(k / lam)
    ln_norm_p = a * np.log(b) - log_gamma(a)

    def integrand(x):
        t = x / lam
        ln_q = ln_norm_q + (k - 1.0) * np.log(t) - t**k
        ln_p = ln_norm_p + (a - 1.0) * np.log(x) - b * x
        return np.exp(ln_q) * (ln_q - ln_p)

    x_hi = lam * np.log(1e12) ** (1.0 / k)
    points = [x_hi * 1e-6, x_hi * 1e-3] if k < 1.0 else None
    value, abserr = integrate.quad(
        integrand, 0.0, x_hi, points=points, limit=200,
        epsabs=1e-10, epsrel=1e-10,
    )
    if not np.isfinite(value) or abserr > 1e-7:
        raise OracleError(
            f"KL quadrature did not converge: value={value}, abserr={abserr}"
        )
    return value
