"""Numpy implementation of the fused training kernel.

This is the portable fallback for the compiled extension in
``bndl._ckern``; both expose the same ``elbo_batch_kernel`` contract
and must stay numerically interchangeable (the backend test suite
compares them directly).

Parameterization used throughout: a Weibull posterior entry is carried
as (a, m) where a is the shape and m the *mean* lam * Gamma(1 + 1/a).
In that form the KL to Gamma(alpha, beta) simplifies to

    g*alpha/a - alpha*ln(m) + alpha*lnGamma(1 + 1/a) + ln(a) + beta*m
        - g - 1 - alpha*ln(beta) + lnGamma(alpha)

and a reparameterized draw is x = m * z**(1/a) / Gamma(1 + 1/a) with
z = -ln(1 - eps).
"""

import numpy as np

from .distributions import SCALE_FLOOR, SHAPE_MAX, SHAPE_MIN
from .model import CAT_EPS
from .special import EULER_MASCHERONI, digamma, log_gamma

BACKEND_NAME = "python"


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def local_posterior(h, wk, bk, wl, bl):
    """Shape/mean form of the per-sample posteriors plus backprop factors.

    Returns (a, m, da_dpre, dm_dpre): clamped shapes, floored means, and
    the subgradients of each through its pre-activation (zero at clamp
    boundaries and kinks).
    """
    pk = h @ wk + bk
    sp = _softplus(pk)
    a = np.clip(sp, SHAPE_MIN, SHAPE_MAX)
    da_dpre = _sigmoid(pk) * ((sp > SHAPE_MIN) & (sp < SHAPE_MAX))
    pl = h @ wl + bl
    m = np.maximum(pl, SCALE_FLOOR)
    dm_dpre = (pl > SCALE_FLOOR).astype(np.float64)
    return a, m, da_dpre, dm_dpre


def global_posterior(w1, w2, alpha_sparsity):
    """Shape/mean form of the shared factor-loading posterior.

    ``live`` marks entries whose sparsifying activation is positive;
    dead entries sample exactly zero while their KL term is evaluated
    at the scale floor.
    """
    sp = _softplus(w1)
    a = np.clip(sp, SHAPE_MIN, SHAPE_MAX)
    da_dw1 = _sigmoid(w1) * ((sp > SHAPE_MIN) & (sp < SHAPE_MAX))
    raw = w2 - alpha_sparsity
    live = raw > 0.0
    m = np.where(live, np.maximum(raw, SCALE_FLOOR), SCALE_FLOOR)
    dm_dw2 = (raw > SCALE_FLOOR).astype(np.float64)
    return a, m, live, da_dw1, dm_dw2


def _kl_terms(a, m, alpha, beta):
    """KL(Weibull||Gamma) in (shape, mean) form plus its partials."""
    inv_a = 1.0 / a
    lg = log_gamma(1.0 + inv_a)
    psi = digamma(1.0 + inv_a)
    const = -EULER_MASCHERONI - 1.0 - alpha * np.log(beta) + log_gamma(alpha)
    kl = (
        EULER_MASCHERONI * alpha * inv_a
        - alpha * np.log(m)
        + alpha * lg
        + np.log(a)
        + beta * m
        + const
    )
    dkl_da = -(EULER_MASCHERONI * alpha + alpha * psi) * inv_a * inv_a + inv_a
    dkl_dm = -alpha / m + beta
    return kl, dkl_da, dkl_dm, lg, psi


def elbo_batch_kernel(
    h,
    targets,
    wk,
    bk,
    wl,
    bl,
    w1,
    w2,
    alpha_sparsity,
    prior_theta_alpha,
    prior_theta_beta,
    prior_phi_alpha,
    prior_phi_beta,
    eps_theta,
    eps_phi,
    kl_scale_local,
    inv_n_total,
):
    """Fused ELBO objective and analytic gradients for one minibatch.

    h:         (B, D) features
    targets:   (B, C) label distributions (one-hot rows for hard labels)
    eps_theta: (M, B, K) uniform noise in (0, 1)
    eps_phi:   (M, B, K, C) uniform noise in (0, 1)

    Returns (objective, ll_mean, kl_local_mean, kl_global, grads-dict)
    where the objective is

        mean_j [ ll_j - kl_scale_local * KL_local_j ] - inv_n_total * KL_global

    with the likelihood term averaged over the M noise draws.
    """
    batch = h.shape[0]
    n_draws = eps_theta.shape[0]

    a, m, da_dpre, dm_dpre = local_posterior(h, wk, bk, wl, bl)
    kl_loc, dkl_da, dkl_dm, lg_loc, psi_loc = _kl_terms(
        a, m, prior_theta_alpha, prior_theta_beta
    )
    inv_a = 1.0 / a
    g1_loc = np.exp(lg_loc)

    ag, mg, live, dag_dw1, dmg_dw2 = global_posterior(w1, w2, alpha_sparsity)
    kl_glob, dklg_da, dklg_dm, lg_glob, psi_glob = _kl_terms(
        ag, mg, prior_phi_alpha, prior_phi_beta
    )
    inv_ag = 1.0 / ag
    lam_glob = np.where(live, mg / np.exp(lg_glob), 0.0)

    ll_sum = 0.0
    ga = np.zeros_like(a)
    gm = np.zeros_like(m)
    gag = np.zeros_like(ag)
    gmg = np.zeros_like(mg)
    for i in range(n_draws):
        z = -np.log1p(-eps_theta[i])
        lnz = np.log(z)
        theta = (m / g1_loc) * np.exp(lnz * inv_a)

        zg = -np.log1p(-eps_phi[i])
        lnzg = np.log(zg)
        phi = lam_glob[None, :, :] * np.exp(lnzg * inv_ag[None, :, :])

        u = np.einsum("bk,bkc->bc", theta, phi) + CAT_EPS
        s = u.sum(axis=1, keepdims=True)
        ll_sum += (targets * (np.log(u) - np.log(s))).sum()

        gu = targets / u - 1.0 / s
        gtheta = np.einsum("bc,bkc->bk", gu, phi)
        gphi = theta[:, :, None] * gu[:, None, :]

        ga += gtheta * theta * (psi_loc - lnz) * inv_a * inv_a
        gm += gtheta * theta / m
        gag += (gphi * phi * (psi_glob[None, :, :] - lnzg)).sum(axis=0) * (
            inv_ag * inv_ag
        )
        gmg += (gphi * phi).sum(axis=0) / mg

    inv_b = 1.0 / batch
    inv_draws = 1.0 / n_draws

    g_pre_k = (ga * inv_draws - kl_scale_local * dkl_da) * da_dpre
    g_pre_l = (gm * inv_draws - kl_scale_local * dkl_dm) * dm_dpre
    grads = {
        "wk": (h.T @ g_pre_k) * inv_b,
        "bk": g_pre_k.sum(axis=0) * inv_b,
        "wl": (h.T @ g_pre_l) * inv_b,
        "bl": g_pre_l.sum(axis=0) * inv_b,
        "w1": (gag * (inv_b * inv_draws) - inv_n_total * dklg_da) * dag_dw1,
        "w2": (gmg * (inv_b * inv_draws) - inv_n_total * dklg_dm) * dmg_dw2,
    }

    ll_mean = ll_sum * inv_b * inv_draws
    kl_local_mean = kl_loc.sum() * inv_b
    kl_global = kl_glob.sum()
    objective = (
        ll_mean - kl_scale_local * kl_local_mean - inv_n_total * kl_global
    )
    return objective, ll_mean, kl_local_mean, kl_global, grads
