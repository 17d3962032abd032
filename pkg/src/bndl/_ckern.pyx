# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twin of ``bndl._pykern``: fused ELBO objective + gradients.

The special functions below mirror the algorithms of ``bndl.special``
coefficient-for-coefficient so both backends agree to rounding error.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport M_PI, exp, log, log1p, sin

cnp.import_array()

BACKEND_NAME = "compiled"

cdef double SHAPE_MIN = 1e-2
cdef double SHAPE_MAX = 1e3
cdef double SCALE_FLOOR = 1e-4
cdef double CAT_EPS = 1e-10
cdef double EULER_MASCHERONI = 0.57721566490153286
cdef double HALF_LOG_TWO_PI = 0.9189385332046727
cdef double LANCZOS_G = 7.0

cdef double[9] LANCZOS_COEF
LANCZOS_COEF[0] = 0.99999999999980993
LANCZOS_COEF[1] = 676.5203681218851
LANCZOS_COEF[2] = -1259.1392167224028
LANCZOS_COEF[3] = 771.32342877765313
LANCZOS_COEF[4] = -176.61502916214059
LANCZOS_COEF[5] = 12.507343278686905
LANCZOS_COEF[6] = -0.13857109526572012
LANCZOS_COEF[7] = 9.9843695780195716e-6
LANCZOS_COEF[8] = 1.5056327351493116e-7

cdef double[7] DIGAMMA_TAIL
DIGAMMA_TAIL[0] = 1.0 / 12.0
DIGAMMA_TAIL[1] = -1.0 / 120.0
DIGAMMA_TAIL[2] = 1.0 / 252.0
DIGAMMA_TAIL[3] = -1.0 / 240.0
DIGAMMA_TAIL[4] = 1.0 / 132.0
DIGAMMA_TAIL[5] = -691.0 / 32760.0
DIGAMMA_TAIL[6] = 1.0 / 12.0


cdef inline double _lanczos_main(double x) noexcept nogil:
    # Lanczos approximation for x >= 0.5.
    cdef double zm1 = x - 1.0
    cdef double acc = LANCZOS_COEF[0]
    cdef int i
    for i in range(1, 9):
        acc += LANCZOS_COEF[i] / (zm1 + i)
    cdef double t = zm1 + LANCZOS_G + 0.5
    return HALF_LOG_TWO_PI + (zm1 + 0.5) * log(t) - t + log(acc)


cdef inline double _log_gamma(double x) noexcept nogil:
    if x < 0.5:
        return log(M_PI / sin(M_PI * x)) - _lanczos_main(1.0 - x)
    return _lanczos_main(x)


cdef inline double _digamma(double x) noexcept nogil:
    cdef double res = 0.0
    cdef double inv, inv2, tail
    cdef int i
    while x < 6.0:
        res -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    tail = 0.0
    for i in range(6, -1, -1):
        tail = inv2 * (DIGAMMA_TAIL[i] + tail)
    return res + log(x) - 0.5 * inv - tail


cdef inline double _softplus(double x) noexcept nogil:
    if x > 0.0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _sigmoid(double x) noexcept nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def elbo_batch_kernel(
    double[:, ::1] h,
    double[:, ::1] targets,
    double[:, ::1] wk,
    double[::1] bk,
    double[:, ::1] wl,
    double[::1] bl,
    double[:, ::1] w1,
    double[:, ::1] w2,
    double alpha_sparsity,
    double prior_theta_alpha,
    double prior_theta_beta,
    double prior_phi_alpha,
    double prior_phi_beta,
    double[:, :, ::1] eps_theta,
    double[:, :, :, ::1] eps_phi,
    double kl_scale_local,
    double inv_n_total,
):
    """See ``bndl._pykern.elbo_batch_kernel`` for the contract."""
    cdef Py_ssize_t B = h.shape[0]
    cdef Py_ssize_t D = h.shape[1]
    cdef Py_ssize_t K = wk.shape[1]
    cdef Py_ssize_t C = w1.shape[1]
    cdef Py_ssize_t M = eps_theta.shape[0]

    out_gwk = np.zeros((D, K))
    out_gbk = np.zeros(K)
    out_gwl = np.zeros((D, K))
    out_gbl = np.zeros(K)
    out_gw1 = np.empty((K, C))
    out_gw2 = np.empty((K, C))
    cdef double[:, ::1] gwk = out_gwk
    cdef double[::1] gbk = out_gbk
    cdef double[:, ::1] gwl = out_gwl
    cdef double[::1] gbl = out_gbl
    cdef double[:, ::1] gw1 = out_gw1
    cdef double[:, ::1] gw2 = out_gw2

    # Global posterior in (shape, mean) form.
    glob = np.empty((10, K, C))
    cdef double[:, :, ::1] G = glob
    # Rows: 0 inv_ag, 1 psi_g, 2 lam_g, 3 mg, 4 dag_dw1, 5 dmg_dw2,
    #       6 dklg_da, 7 dklg_dm, 8 gag accumulator, 9 gmg accumulator.
    cdef double kl_global = 0.0
    cdef double const_p = (
        -EULER_MASCHERONI - 1.0 - prior_phi_alpha * log(prior_phi_beta)
        + _log_gamma(prior_phi_alpha)
    )
    cdef double const_t = (
        -EULER_MASCHERONI - 1.0 - prior_theta_alpha * log(prior_theta_beta)
        + _log_gamma(prior_theta_alpha)
    )
    cdef Py_ssize_t j, d, k, c, i
    cdef double pk, pl, sp, a, m, inv_a, lg, psi, g1, raw
    for k in range(K):
        for c in range(C):
            sp = _softplus(w1[k, c])
            a = sp
            if a < SHAPE_MIN:
                a = SHAPE_MIN
            if a > SHAPE_MAX:
                a = SHAPE_MAX
            G[4, k, c] = _sigmoid(w1[k, c]) if (SHAPE_MIN < sp < SHAPE_MAX) else 0.0
            raw = w2[k, c] - alpha_sparsity
            if raw > 0.0:
                m = raw if raw > SCALE_FLOOR else SCALE_FLOOR
            else:
                m = SCALE_FLOOR
            G[5, k, c] = 1.0 if raw > SCALE_FLOOR else 0.0
            inv_a = 1.0 / a
            lg = _log_gamma(1.0 + inv_a)
            psi = _digamma(1.0 + inv_a)
            G[0, k, c] = inv_a
            G[1, k, c] = psi
            G[2, k, c] = m / exp(lg) if raw > 0.0 else 0.0
            G[3, k, c] = m
            kl_global += (
                EULER_MASCHERONI * prior_phi_alpha * inv_a
                - prior_phi_alpha * log(m)
                + prior_phi_alpha * lg
                + log(a)
                + prior_phi_beta * m
                + const_p
            )
            G[6, k, c] = (
                -(EULER_MASCHERONI * prior_phi_alpha + prior_phi_alpha * psi)
                * inv_a * inv_a + inv_a
            )
            G[7, k, c] = -prior_phi_alpha / m + prior_phi_beta
            G[8, k, c] = 0.0
            G[9, k, c] = 0.0

    # Per-sample work arrays.
    loc = np.empty((9, K))
    cdef double[:, ::1] L = loc
    # Rows: 0 a, 1 m, 2 da_dpre, 3 dm_dpre, 4 inv_a, 5 psi, 6 g1,
    #       7 dkl_da, 8 dkl_dm.
    work = np.empty((4, K))
    cdef double[:, ::1] W = work  # 0 theta, 1 lnz, 2 ga acc, 3 gm acc
    phi_w = np.empty((2, K, C))
    cdef double[:, :, ::1] P = phi_w  # 0 phi, 1 lnzg
    uvec = np.empty(C)
    cdef double[::1] u = uvec
    guvec = np.empty(C)
    cdef double[::1] gu = guvec

    cdef double ll_sum = 0.0
    cdef double kl_local_sum = 0.0
    cdef double inv_b = 1.0 / B
    cdef double inv_draws = 1.0 / M
    cdef double z, lnz, s, inv_s, ll, t_jc, gtheta, gphi, gpk, gpl, theta_k

    for j in range(B):
        for k in range(K):
            pk = bk[k]
            pl = bl[k]
            for d in range(D):
                pk += h[j, d] * wk[d, k]
                pl += h[j, d] * wl[d, k]
            sp = _softplus(pk)
            a = sp
            if a < SHAPE_MIN:
                a = SHAPE_MIN
            if a > SHAPE_MAX:
                a = SHAPE_MAX
            L[2, k] = _sigmoid(pk) if (SHAPE_MIN < sp < SHAPE_MAX) else 0.0
            m = pl if pl > SCALE_FLOOR else SCALE_FLOOR
            L[3, k] = 1.0 if pl > SCALE_FLOOR else 0.0
            inv_a = 1.0 / a
            lg = _log_gamma(1.0 + inv_a)
            psi = _digamma(1.0 + inv_a)
            L[0, k] = a
            L[1, k] = m
            L[4, k] = inv_a
            L[5, k] = psi
            L[6, k] = exp(lg)
            kl_local_sum += (
                EULER_MASCHERONI * prior_theta_alpha * inv_a
                - prior_theta_alpha * log(m)
                + prior_theta_alpha * lg
                + log(a)
                + prior_theta_beta * m
                + const_t
            )
            L[7, k] = (
                -(EULER_MASCHERONI * prior_theta_alpha
                  + prior_theta_alpha * psi) * inv_a * inv_a + inv_a
            )
            L[8, k] = -prior_theta_alpha / m + prior_theta_beta
            W[2, k] = 0.0
            W[3, k] = 0.0

        for i in range(M):
            for k in range(K):
                z = -log1p(-eps_theta[i, j, k])
                lnz = log(z)
                W[1, k] = lnz
                W[0, k] = (L[1, k] / L[6, k]) * exp(lnz * L[4, k])
                for c in range(C):
                    z = -log1p(-eps_phi[i, j, k, c])
                    lnz = log(z)
                    P[1, k, c] = lnz
                    P[0, k, c] = G[2, k, c] * exp(lnz * G[0, k, c])
            s = 0.0
            for c in range(C):
                u[c] = CAT_EPS
                for k in range(K):
                    u[c] += W[0, k] * P[0, k, c]
                s += u[c]
            inv_s = 1.0 / s
            ll = 0.0
            for c in range(C):
                t_jc = targets[j, c]
                if t_jc != 0.0:
                    ll += t_jc * (log(u[c]) - log(s))
                gu[c] = t_jc / u[c] - inv_s
            ll_sum += ll
            for k in range(K):
                gtheta = 0.0
                theta_k = W[0, k]
                for c in range(C):
                    gtheta += gu[c] * P[0, k, c]
                    gphi = theta_k * gu[c]
                    G[8, k, c] += (
                        gphi * P[0, k, c] * (G[1, k, c] - P[1, k, c])
                        * G[0, k, c] * G[0, k, c]
                    )
                    G[9, k, c] += gphi * P[0, k, c] / G[3, k, c]
                W[2, k] += (
                    gtheta * theta_k * (L[5, k] - W[1, k]) * L[4, k] * L[4, k]
                )
                W[3, k] += gtheta * theta_k / L[1, k]

        for k in range(K):
            gpk = (W[2, k] * inv_draws - kl_scale_local * L[7, k]) * L[2, k]
            gpl = (W[3, k] * inv_draws - kl_scale_local * L[8, k]) * L[3, k]
            gbk[k] += gpk
            gbl[k] += gpl
            for d in range(D):
                gwk[d, k] += h[j, d] * gpk
                gwl[d, k] += h[j, d] * gpl

    for k in range(K):
        gbk[k] *= inv_b
        gbl[k] *= inv_b
        for d in range(D):
            gwk[d, k] *= inv_b
            gwl[d, k] *= inv_b
        for c in range(C):
            gw1[k, c] = (
                G[8, k, c] * inv_b * inv_draws - inv_n_total * G[6, k, c]
            ) * G[4, k, c]
            gw2[k, c] = (
                G[9, k, c] * inv_b * inv_draws - inv_n_total * G[7, k, c]
            ) * G[5, k, c]

    cdef double ll_mean = ll_sum * inv_b * inv_draws
    cdef double kl_local_mean = kl_local_sum * inv_b
    cdef double objective = (
        ll_mean - kl_scale_local * kl_local_mean - inv_n_total * kl_global
    )
    grads = {
        "wk": out_gwk,
        "bk": out_gbk,
        "wl": out_gwl,
        "bl": out_gbl,
        "w1": out_gw1,
        "w2": out_gw2,
    }
    return objective, ll_mean, kl_local_mean, kl_global, grads
