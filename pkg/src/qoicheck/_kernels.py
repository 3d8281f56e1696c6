"""Compiled MCMC chain kernels.

Both kernels consume pre-generated proposal randomness so the draw sequence
is a pure function of the owning seed stream, independent of compilation or
scheduling. Adaptation is Robbins-Monro on per-coordinate log step sizes and
is frozen once warmup ends.

The `fault_shrink` argument exists for fault-injection tests: with a value
below one, accepted post-warmup moves land only `fault_shrink` of the way to
the evaluated proposal, so the realized proposal sd is scaled down while
acceptance still targets the full-step point. That breaks detailed balance
and yields an underdispersed chain; the calibration checks must detect it.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_ADAPT_DECAY = 0.6


@njit(cache=True)
def cs1_chain(
    y,
    x,
    starts,
    n_iter,
    n_warmup,
    state0,
    prior,
    lstep0,
    normals,
    unifs,
    target_accept,
    fault_shrink,
):
    """Componentwise random-walk Metropolis for the multilevel log-link model.

    Rows must be sorted by group; `starts` holds the G+1 block boundaries.
    State layout: [beta0, beta1, gamma_1..gamma_G, log sigma_gamma, log sigma].
    Prior layout: [m_b0, s_b0, m_b1, s_b1, loc_sg, sd_sg, loc_s, sd_s].

    Each sweep ends with two joint ridge proposals that the componentwise
    moves cannot traverse efficiently: a location shift (beta0 + d, all
    gamma_i - d; likelihood-invariant, prior-only acceptance) and a slope
    shift (beta1 + d, gamma_g - d * xbar_g; linear predictor changes only
    through within-group x deviations). Proposal slots p and p + 1 hold
    their step sizes and randomness.
    """
    N = y.shape[0]
    G = starts.shape[0] - 1
    p = G + 4
    state = state0.copy()
    lstep = lstep0.copy()

    xbar = np.zeros(G)
    for g in range(G):
        cnt = starts[g + 1] - starts[g]
        if cnt > 0:
            s = 0.0
            for i in range(starts[g], starts[g + 1]):
                s += x[i]
            xbar[g] = s / cnt

    eta = np.empty(N)
    mu = np.empty(N)
    for g in range(G):
        for i in range(starts[g], starts[g + 1]):
            eta[i] = state[0] + state[1] * x[i] + state[2 + g]
            mu[i] = math.exp(eta[i])
    sse = 0.0
    for i in range(N):
        sse += (y[i] - mu[i]) ** 2
    sum_g = 0.0
    sum_g2 = 0.0
    for g in range(G):
        sum_g += state[2 + g]
        sum_g2 += state[2 + g] ** 2

    n_keep = n_iter - n_warmup
    draws = np.empty((n_keep, p))
    accepts = np.zeros(p + 2)

    for t in range(n_iter):
        shrink = fault_shrink if t >= n_warmup else 1.0
        sigma_g = math.exp(state[p - 2])
        sigma = math.exp(state[p - 1])
        inv2s2 = 1.0 / (2.0 * sigma * sigma)

        for j in range(p):
            d = math.exp(lstep[j]) * normals[t, j]
            log_alpha = 0.0

            if j == 0 or j == 1:
                prop_sse = 0.0
                if j == 0:
                    f = math.exp(d)
                    for i in range(N):
                        r = y[i] - mu[i] * f
                        prop_sse += r * r
                    m0, s0 = prior[0], prior[1]
                else:
                    for i in range(N):
                        r = y[i] - mu[i] * math.exp(d * x[i])
                        prop_sse += r * r
                    m0, s0 = prior[2], prior[3]
                old, new = state[j], state[j] + d
                log_alpha = (
                    -(prop_sse - sse) * inv2s2
                    - ((new - m0) ** 2 - (old - m0) ** 2) / (2.0 * s0 * s0)
                )
                if math.log(unifs[t, j]) < log_alpha:
                    accepts[j] += 1.0
                    da = shrink * d
                    if da == d:
                        sse = prop_sse
                        if j == 0:
                            f = math.exp(da)
                            for i in range(N):
                                mu[i] *= f
                        else:
                            for i in range(N):
                                mu[i] *= math.exp(da * x[i])
                    else:
                        if j == 0:
                            f = math.exp(da)
                            for i in range(N):
                                mu[i] *= f
                        else:
                            for i in range(N):
                                mu[i] *= math.exp(da * x[i])
                        sse = 0.0
                        for i in range(N):
                            sse += (y[i] - mu[i]) ** 2
                    state[j] += da

            elif j < p - 2:
                g = j - 2
                f = math.exp(d)
                delta_sse = 0.0
                for i in range(starts[g], starts[g + 1]):
                    r = y[i] - mu[i] * f
                    delta_sse += r * r - (y[i] - mu[i]) ** 2
                gam = state[j]
                log_alpha = (
                    -delta_sse * inv2s2
                    - (2.0 * gam * d + d * d) / (2.0 * sigma_g * sigma_g)
                )
                if math.log(unifs[t, j]) < log_alpha:
                    accepts[j] += 1.0
                    da = shrink * d
                    fa = math.exp(da)
                    for i in range(starts[g], starts[g + 1]):
                        mu_new = mu[i] * fa
                        sse += (y[i] - mu_new) ** 2 - (y[i] - mu[i]) ** 2
                        mu[i] = mu_new
                    sum_g += da
                    sum_g2 += 2.0 * gam * da + da * da
                    state[j] += da

            elif j == p - 2:
                v, vn = state[j], state[j] + d
                sg_n = math.exp(vn)
                loc, sd = prior[4], prior[5]
                log_alpha = (
                    -G * (vn - v)
                    - sum_g2 / (2.0 * sg_n * sg_n)
                    + sum_g2 / (2.0 * sigma_g * sigma_g)
                    - ((sg_n - loc) ** 2 - (sigma_g - loc) ** 2) / (2.0 * sd * sd)
                    + (vn - v)
                )
                if math.log(unifs[t, j]) < log_alpha:
                    accepts[j] += 1.0
                    state[j] += shrink * d
                    sigma_g = math.exp(state[j])

            else:
                v, vn = state[j], state[j] + d
                s_n = math.exp(vn)
                loc, sd = prior[6], prior[7]
                log_alpha = (
                    -N * (vn - v)
                    - sse / (2.0 * s_n * s_n)
                    + sse * inv2s2
                    - ((s_n - loc) ** 2 - (sigma - loc) ** 2) / (2.0 * sd * sd)
                    + (vn - v)
                )
                if math.log(unifs[t, j]) < log_alpha:
                    accepts[j] += 1.0
                    state[j] += shrink * d
                    sigma = math.exp(state[j])
                    inv2s2 = 1.0 / (2.0 * sigma * sigma)

            if t < n_warmup:
                alpha = math.exp(min(0.0, log_alpha))
                lstep[j] += (alpha - target_accept) / (t + 1.0) ** _ADAPT_DECAY

        # Joint shift beta0 + d, gamma_i - d: eta (hence mu, sse) is invariant,
        # so only the prior terms enter the acceptance ratio.
        d = math.exp(lstep[p]) * normals[t, p]
        m0, s0 = prior[0], prior[1]
        log_alpha = (
            -(2.0 * (state[0] - m0) * d + d * d) / (2.0 * s0 * s0)
            - (-2.0 * sum_g * d + G * d * d) / (2.0 * sigma_g * sigma_g)
        )
        if math.log(unifs[t, p]) < log_alpha:
            accepts[p] += 1.0
            da = shrink * d
            state[0] += da
            for g in range(G):
                state[2 + g] -= da
            sum_g2 += -2.0 * da * sum_g + G * da * da
            sum_g -= G * da
        if t < n_warmup:
            alpha = math.exp(min(0.0, log_alpha))
            lstep[p] += (alpha - target_accept) / (t + 1.0) ** _ADAPT_DECAY

        # Joint slope shift beta1 + d, gamma_g - d * xbar_g: eta changes only
        # through within-group x deviations, so this traverses the
        # beta1/group-effect ridge that componentwise moves crawl along.
        d = math.exp(lstep[p + 1]) * normals[t, p + 1]
        prop_sse = 0.0
        for g in range(G):
            fg = math.exp(-d * xbar[g])
            for i in range(starts[g], starts[g + 1]):
                r = y[i] - mu[i] * math.exp(d * x[i]) * fg
                prop_sse += r * r
        m1, s1 = prior[2], prior[3]
        gam_delta = 0.0
        for g in range(G):
            xb = xbar[g]
            gam_delta += 2.0 * state[2 + g] * d * xb - d * d * xb * xb
        log_alpha = (
            -(prop_sse - sse) * inv2s2
            - (2.0 * (state[1] - m1) * d + d * d) / (2.0 * s1 * s1)
            + gam_delta / (2.0 * sigma_g * sigma_g)
        )
        if math.log(unifs[t, p + 1]) < log_alpha:
            accepts[p + 1] += 1.0
            da = shrink * d
            state[1] += da
            for g in range(G):
                gam = state[2 + g]
                xb = xbar[g]
                sum_g -= da * xb
                sum_g2 += -2.0 * gam * da * xb + da * da * xb * xb
                state[2 + g] = gam - da * xb
                fg = math.exp(-da * xb)
                for i in range(starts[g], starts[g + 1]):
                    mu[i] *= math.exp(da * x[i]) * fg
            if da == d:
                sse = prop_sse
            else:
                sse = 0.0
                for i in range(N):
                    sse += (y[i] - mu[i]) ** 2
        if t < n_warmup:
            alpha = math.exp(min(0.0, log_alpha))
            lstep[p + 1] += (alpha - target_accept) / (t + 1.0) ** _ADAPT_DECAY

        if t >= n_warmup:
            for j in range(p):
                draws[t - n_warmup, j] = state[j]

    return draws, accepts / n_iter


@njit(cache=True)
def cs2_chain(
    y,
    A,
    AtA,
    Aty,
    cov_sums,
    n_iter,
    n_warmup,
    lin0,
    scal0,
    prior,
    lstep0,
    normals_lin,
    normals_scal,
    unifs_scal,
    target_accept,
):
    """Metropolis-within-Gibbs for the joint smooth model.

    The linear block (beta0_y, beta_s1, beta_s2, b_1..b_L) is drawn exactly
    from its Gaussian conditional; the scales and the two Beta covariate
    models move by adaptive random walks.

    Scalar state: [log sigma_y, log sigma_s, beta0_x, log phi_x,
                   beta0_z, log phi_z].
    cov_sums: [sum log x, sum log(1-x), sum log z, sum log(1-z)].
    Prior layout: [m_b0y, s_b0y, m_bs1, s_bs1, m_bs2, s_bs2, loc_ss, sd_ss,
                   loc_sy, sd_sy, m_b0x, s_b0x, loc_phix, sd_phix,
                   m_b0z, s_b0z, loc_phiz, sd_phiz].
    """
    N = y.shape[0]
    q = AtA.shape[0]
    L = q - 3
    n_scal = 6
    lin = lin0.copy()
    scal = scal0.copy()
    lstep = lstep0.copy()

    mu0 = np.zeros(q)
    mu0[0], mu0[1], mu0[2] = prior[0], prior[2], prior[4]
    prec_fixed = np.zeros(q)
    prec_fixed[0] = 1.0 / (prior[1] * prior[1])
    prec_fixed[1] = 1.0 / (prior[3] * prior[3])
    prec_fixed[2] = 1.0 / (prior[5] * prior[5])

    n_keep = n_iter - n_warmup
    draws = np.empty((n_keep, n_scal + q))
    accepts = np.zeros(n_scal)

    sse = 0.0
    sum_b2 = 0.0

    for t in range(n_iter):
        sigma_y = math.exp(scal[0])
        sigma_s = math.exp(scal[1])

        # exact Gibbs draw of the linear block given the scales
        inv_sy2 = 1.0 / (sigma_y * sigma_y)
        inv_ss2 = 1.0 / (sigma_s * sigma_s)
        Q = AtA * inv_sy2
        rhs = Aty * inv_sy2
        for i in range(q):
            prec_i = prec_fixed[i] if i < 3 else inv_ss2
            Q[i, i] += prec_i
            rhs[i] += prec_i * mu0[i]
        C = np.linalg.cholesky(Q)
        m = np.linalg.solve(Q, rhs)
        zdraw = np.linalg.solve(np.ascontiguousarray(C.T), normals_lin[t])
        for i in range(q):
            lin[i] = m[i] + zdraw[i]

        sse = 0.0
        for i in range(N):
            fit = 0.0
            for jj in range(q):
                fit += A[i, jj] * lin[jj]
            r = y[i] - fit
            sse += r * r
        sum_b2 = 0.0
        for jj in range(3, q):
            sum_b2 += lin[jj] * lin[jj]

        for j in range(n_scal):
            d = math.exp(lstep[j]) * normals_scal[t, j]
            v, vn = scal[j], scal[j] + d
            log_alpha = 0.0

            if j == 0:
                s_old, s_new = math.exp(v), math.exp(vn)
                loc, sd = prior[8], prior[9]
                log_alpha = (
                    -N * (vn - v)
                    - sse / (2.0 * s_new * s_new)
                    + sse / (2.0 * s_old * s_old)
                    - ((s_new - loc) ** 2 - (s_old - loc) ** 2) / (2.0 * sd * sd)
                    + (vn - v)
                )
            elif j == 1:
                s_old, s_new = math.exp(v), math.exp(vn)
                loc, sd = prior[6], prior[7]
                log_alpha = (
                    -L * (vn - v)
                    - sum_b2 / (2.0 * s_new * s_new)
                    + sum_b2 / (2.0 * s_old * s_old)
                    - ((s_new - loc) ** 2 - (s_old - loc) ** 2) / (2.0 * sd * sd)
                    + (vn - v)
                )
            else:
                # Beta covariate models; x uses slots 2,3 and z uses 4,5
                if j < 4:
                    b0, lphi = scal[2], scal[3]
                    slog, slog1m = cov_sums[0], cov_sums[1]
                    m_b0, s_b0 = prior[10], prior[11]
                    loc_phi, sd_phi = prior[12], prior[13]
                else:
                    b0, lphi = scal[4], scal[5]
                    slog, slog1m = cov_sums[2], cov_sums[3]
                    m_b0, s_b0 = prior[14], prior[15]
                    loc_phi, sd_phi = prior[16], prior[17]
                if j == 2 or j == 4:
                    b0_new, lphi_new = b0 + d, lphi
                else:
                    b0_new, lphi_new = b0, lphi + d

                phi_old, phi_new = math.exp(lphi), math.exp(lphi_new)
                mu_old = 1.0 / (1.0 + math.exp(-b0))
                mu_new = 1.0 / (1.0 + math.exp(-b0_new))
                a_o, b_o = mu_old * phi_old, (1.0 - mu_old) * phi_old
                a_n, b_n = mu_new * phi_new, (1.0 - mu_new) * phi_new
                ll_old = (
                    (a_o - 1.0) * slog
                    + (b_o - 1.0) * slog1m
                    - N * (math.lgamma(a_o) + math.lgamma(b_o) - math.lgamma(phi_old))
                )
                ll_new = (
                    (a_n - 1.0) * slog
                    + (b_n - 1.0) * slog1m
                    - N * (math.lgamma(a_n) + math.lgamma(b_n) - math.lgamma(phi_new))
                )
                log_alpha = ll_new - ll_old
                if j == 2 or j == 4:
                    log_alpha -= ((b0_new - m_b0) ** 2 - (b0 - m_b0) ** 2) / (
                        2.0 * s_b0 * s_b0
                    )
                else:
                    log_alpha += (
                        -((phi_new - loc_phi) ** 2 - (phi_old - loc_phi) ** 2)
                        / (2.0 * sd_phi * sd_phi)
                        + (lphi_new - lphi)
                    )

            if math.log(unifs_scal[t, j]) < log_alpha:
                accepts[j] += 1.0
                scal[j] = vn

            if t < n_warmup:
                alpha = math.exp(min(0.0, log_alpha))
                lstep[j] += (alpha - target_accept) / (t + 1.0) ** _ADAPT_DECAY

        if t >= n_warmup:
            row = t - n_warmup
            draws[row, 0] = scal[2]
            draws[row, 1] = math.exp(scal[3])
            draws[row, 2] = scal[4]
            draws[row, 3] = math.exp(scal[5])
            for jj in range(q):
                draws[row, 4 + jj] = lin[jj]
            draws[row, 4 + q] = math.exp(scal[1])
            draws[row, 5 + q] = math.exp(scal[0])

    return draws, accepts / n_iter
