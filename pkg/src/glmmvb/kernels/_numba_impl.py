"""Numba kernels.

Signature-for-signature twin of `_numpy_impl`, with the block loops spelled
out so the whole inner iteration runs JIT-compiled and nogil.  Block
dimensions (p, u) are tiny, so the factorizations and solves are unblocked
hand-written loops rather than LAPACK calls.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

BERNOULLI = 0
POISSON = 1

STATUS_OK = 0
STATUS_BAD_BLOCK = 1
STATUS_BAD_CORNER = 2
STATUS_NEWTON_FAIL = 3

_LOG_2PI = math.log(2.0 * math.pi)

_JIT = dict(cache=True, nogil=True)


# ---------------------------------------------------------------------------
# tiny dense helpers


@njit(**_JIT)
def _chol_lower(a, out):
    """Unblocked lower Cholesky; returns 0 or the failing pivot (1-based)."""
    d = a.shape[0]
    for i in range(d):
        for j in range(d):
            out[i, j] = 0.0
    for j in range(d):
        s = a[j, j]
        for k in range(j):
            s -= out[j, k] * out[j, k]
        if not (s > 0.0) or not np.isfinite(s):
            return j + 1
        out[j, j] = math.sqrt(s)
        inv = 1.0 / out[j, j]
        for i in range(j + 1, d):
            t = a[i, j]
            for k in range(j):
                t -= out[i, k] * out[j, k]
            out[i, j] = t * inv
    return 0


@njit(**_JIT)
def _solve_lower(L, b, x):
    d = L.shape[0]
    for i in range(d):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * x[k]
        x[i] = s / L[i, i]


@njit(**_JIT)
def _solve_lower_t(L, b, x):
    d = L.shape[0]
    for i in range(d - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, d):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]


@njit(**_JIT)
def _bern_eval(eta):
    if eta >= 0.0:
        e = math.exp(-eta)
        bdot = 1.0 / (1.0 + e)
        bval = eta + math.log1p(e)
    else:
        e = math.exp(eta)
        bdot = e / (1.0 + e)
        bval = math.log1p(e)
    return bval, bdot, bdot * (1.0 - bdot)


# ---------------------------------------------------------------------------
# family functions


@njit(**_JIT)
def family_eval(tag, eta):
    n = eta.shape[0]
    bval = np.empty(n)
    bdot = np.empty(n)
    bddot = np.empty(n)
    if tag == BERNOULLI:
        for r in range(n):
            bval[r], bdot[r], bddot[r] = _bern_eval(eta[r])
    else:
        for r in range(n):
            e = math.exp(eta[r])
            bval[r] = e
            bdot[r] = e
            bddot[r] = e
    return bval, bdot, bddot


@njit(**_JIT)
def response_logconst(tag, y):
    if tag == BERNOULLI:
        return 0.0
    total = 0.0
    for r in range(y.shape[0]):
        total -= math.lgamma(y[r] + 1.0)
    return total


@njit(**_JIT)
def linear_predictor(X, Z, offsets, subj_idx, beta, b):
    n, p = X.shape
    u = Z.shape[1]
    eta = np.empty(n)
    for r in range(n):
        s = offsets[r]
        for a in range(p):
            s += X[r, a] * beta[a]
        i = subj_idx[r]
        for a in range(u):
            s += Z[r, a] * b[i, a]
        eta[r] = s
    return eta


# ---------------------------------------------------------------------------
# GLMM gradient / Hessian assembly


@njit(**_JIT)
def grad_hess(y, X, Z, offsets, row_start, subj_idx, tag, phi,
              prior_prec, prior_mean, eq, beta, b):
    n, p = X.shape
    u = Z.shape[1]
    m = row_start.shape[0] - 1
    g_beta = np.zeros(p)
    g_b = np.zeros((m, u))
    h_corner = np.zeros((p, p))
    h_border = np.zeros((m, p, u))
    h_diag = np.zeros((m, u, u))
    inv_phi = 1.0 / phi
    for i in range(m):
        for r in range(row_start[i], row_start[i + 1]):
            eta = offsets[r]
            for a in range(p):
                eta += X[r, a] * beta[a]
            for a in range(u):
                eta += Z[r, a] * b[i, a]
            if tag == BERNOULLI:
                _, bdot, bddot = _bern_eval(eta)
            else:
                e = math.exp(eta)
                bdot = e
                bddot = e
            resid = (y[r] - bdot) * inv_phi
            w = bddot * inv_phi
            for a in range(p):
                g_beta[a] += X[r, a] * resid
                xw = X[r, a] * w
                for c in range(p):
                    h_corner[a, c] -= xw * X[r, c]
                for c in range(u):
                    h_border[i, a, c] -= xw * Z[r, c]
            for a in range(u):
                g_b[i, a] += Z[r, a] * resid
                zw = Z[r, a] * w
                for c in range(u):
                    h_diag[i, a, c] -= zw * Z[r, c]
        for a in range(u):
            s = 0.0
            for c in range(u):
                s += eq[a, c] * b[i, c]
                h_diag[i, a, c] -= eq[a, c]
            g_b[i, a] -= s
    for a in range(p):
        s = 0.0
        for c in range(p):
            s += prior_prec[a, c] * (beta[c] - prior_mean[c])
            h_corner[a, c] -= prior_prec[a, c]
        g_beta[a] -= s
    return g_beta, g_b, h_corner, h_border, h_diag


# ---------------------------------------------------------------------------
# block-arrow Cholesky, solves, marginals, sampling


@njit(**_JIT)
def arrow_factor(corner, border, diag):
    m, p, u = border.shape
    Ls = np.zeros((p, p))
    C = np.zeros((m, p, u))
    Ld = np.zeros((m, u, u))
    schur = corner.copy()
    tmp = np.empty(u)
    sol = np.empty(u)
    for i in range(m):
        if _chol_lower(diag[i], Ld[i]) != 0:
            return STATUS_BAD_BLOCK, i, Ls, C, Ld
        for a in range(p):
            for k in range(u):
                tmp[k] = border[i, a, k]
            _solve_lower(Ld[i], tmp, sol)
            for k in range(u):
                C[i, a, k] = sol[k]
        for a in range(p):
            for c in range(p):
                s = 0.0
                for k in range(u):
                    s += C[i, a, k] * C[i, c, k]
                schur[a, c] -= s
    if _chol_lower(schur, Ls) != 0:
        return STATUS_BAD_CORNER, -1, Ls, C, Ld
    return STATUS_OK, -1, Ls, C, Ld


@njit(**_JIT)
def arrow_solve(Ls, C, Ld, rhs_beta, rhs_b):
    m, p, u = C.shape
    w_b = np.empty((m, u))
    x_b = np.empty((m, u))
    acc = np.empty(p)
    w_beta = np.empty(p)
    x_beta = np.empty(p)
    tmp = np.empty(u)
    for a in range(p):
        acc[a] = rhs_beta[a]
    for i in range(m):
        _solve_lower(Ld[i], rhs_b[i], w_b[i])
        for a in range(p):
            s = 0.0
            for k in range(u):
                s += C[i, a, k] * w_b[i, k]
            acc[a] -= s
    _solve_lower(Ls, acc, w_beta)
    _solve_lower_t(Ls, w_beta, x_beta)
    for i in range(m):
        for k in range(u):
            s = w_b[i, k]
            for a in range(p):
                s -= C[i, a, k] * x_beta[a]
            tmp[k] = s
        _solve_lower_t(Ld[i], tmp, x_b[i])
    return x_beta, x_b


@njit(**_JIT)
def arrow_sample(Ls, C, Ld, mu_beta, mu_b, z_beta, z_b):
    m, p, u = C.shape
    x_beta = np.empty(p)
    x_b = np.empty((m, u))
    tmp = np.empty(u)
    sol = np.empty(u)
    _solve_lower_t(Ls, z_beta, x_beta)
    for i in range(m):
        for k in range(u):
            s = z_b[i, k]
            for a in range(p):
                s -= C[i, a, k] * x_beta[a]
            tmp[k] = s
        _solve_lower_t(Ld[i], tmp, sol)
        for k in range(u):
            x_b[i, k] = mu_b[i, k] + sol[k]
    for a in range(p):
        x_beta[a] += mu_beta[a]
    return x_beta, x_b


@njit(**_JIT)
def arrow_marginals(Ls, C, Ld):
    m, p, u = C.shape
    e = np.empty(p)
    col = np.empty(p)
    Ls_inv = np.empty((p, p))
    for j in range(p):
        for k in range(p):
            e[k] = 1.0 if k == j else 0.0
        _solve_lower(Ls, e, col)
        for k in range(p):
            Ls_inv[k, j] = col[k]
    corner_cov = np.empty((p, p))
    for a in range(p):
        for c in range(p):
            s = 0.0
            for k in range(p):
                s += Ls_inv[k, a] * Ls_inv[k, c]
            corner_cov[a, c] = s
    border_cov = np.empty((m, p, u))
    diag_cov = np.empty((m, u, u))
    W = np.empty((u, p))
    wcol = np.empty(u)
    eu = np.empty(u)
    ucol = np.empty(u)
    Ld_inv = np.empty((u, u))
    for i in range(m):
        for a in range(p):
            _solve_lower_t(Ld[i], C[i, a], wcol)
            for k in range(u):
                W[k, a] = wcol[k]
        for a in range(p):
            for k in range(u):
                s = 0.0
                for q in range(p):
                    s += corner_cov[a, q] * W[k, q]
                border_cov[i, a, k] = -s
        for j in range(u):
            for k in range(u):
                eu[k] = 1.0 if k == j else 0.0
            _solve_lower(Ld[i], eu, ucol)
            for k in range(u):
                Ld_inv[k, j] = ucol[k]
        for a in range(u):
            for c in range(u):
                s = 0.0
                for k in range(u):
                    s += Ld_inv[k, a] * Ld_inv[k, c]
                for q1 in range(p):
                    for q2 in range(p):
                        s += W[a, q1] * corner_cov[q1, q2] * W[c, q2]
                diag_cov[i, a, c] = s
    return corner_cov, border_cov, diag_cov


@njit(**_JIT)
def arrow_logdet(Ls, Ld):
    total = 0.0
    for k in range(Ls.shape[0]):
        total += math.log(Ls[k, k])
    for i in range(Ld.shape[0]):
        for k in range(Ld.shape[1]):
            total += math.log(Ld[i, k, k])
    return 2.0 * total


# ---------------------------------------------------------------------------
# fused inner loop of the stochastic Gaussian update


@njit(**_JIT)
def alpha_inner_loop(y, X, Z, offsets, row_start, subj_idx, tag, phi,
                     prior_prec, prior_mean, eq,
                     t_beta0, t_b0, g_corner0, g_border0, g_diag0, z):
    n_iter = z.shape[0]
    c = 1.0 / math.sqrt(n_iter)
    m, p, u = g_border0.shape
    half = n_iter // 2

    t_beta = t_beta0.copy()
    t_b = t_b0.copy()
    g_beta = np.zeros(p)
    g_b = np.zeros((m, u))
    gc = g_corner0.copy()
    gb = g_border0.copy()
    gd = g_diag0.copy()

    tb_bar = np.zeros(p)
    tb_b_bar = np.zeros((m, u))
    gb_beta_bar = np.zeros(p)
    gb_b_bar = np.zeros((m, u))
    gc_bar = np.zeros((p, p))
    gb_bar = np.zeros((m, p, u))
    gd_bar = np.zeros((m, u, u))

    fail_beta = np.zeros(p)
    fail_b = np.zeros((m, u))

    status, bad, Ls, C, Ld = arrow_factor(gc, gb, gd)
    if status != STATUS_OK:
        return (status, 0, bad, fail_beta, fail_b, gc_bar, gb_bar, gd_bar)
    mu_beta = t_beta.copy()
    mu_b = t_b.copy()

    w = 2.0 / n_iter
    z_b = np.empty((m, u))
    for i in range(n_iter):
        z_beta = z[i, :p]
        for j in range(m):
            for k in range(u):
                z_b[j, k] = z[i, p + j * u + k]
        th_beta, th_b = arrow_sample(Ls, C, Ld, mu_beta, mu_b, z_beta, z_b)

        status, bad, Ls, C, Ld = arrow_factor(gc, gb, gd)
        if status != STATUS_OK:
            return (status, i + 1, bad, fail_beta, fail_b,
                    gc_bar, gb_bar, gd_bar)
        mu_beta, mu_b = arrow_solve(Ls, C, Ld, g_beta, g_b)
        for a in range(p):
            mu_beta[a] += t_beta[a]
        for j in range(m):
            for k in range(u):
                mu_b[j, k] += t_b[j, k]

        gi_beta, gi_b, hc, hb, hd = grad_hess(
            y, X, Z, offsets, row_start, subj_idx, tag, phi,
            prior_prec, prior_mean, eq, th_beta, th_b)

        omc = 1.0 - c
        for a in range(p):
            g_beta[a] = omc * g_beta[a] + c * gi_beta[a]
            t_beta[a] = omc * t_beta[a] + c * th_beta[a]
            for q in range(p):
                gc[a, q] = omc * gc[a, q] - c * hc[a, q]
        for j in range(m):
            for k in range(u):
                g_b[j, k] = omc * g_b[j, k] + c * gi_b[j, k]
                t_b[j, k] = omc * t_b[j, k] + c * th_b[j, k]
                for l in range(u):
                    gd[j, k, l] = omc * gd[j, k, l] - c * hd[j, k, l]
            for a in range(p):
                for k in range(u):
                    gb[j, a, k] = omc * gb[j, a, k] - c * hb[j, a, k]

        if i >= half:
            for a in range(p):
                gb_beta_bar[a] += w * gi_beta[a]
                tb_bar[a] += w * th_beta[a]
                for q in range(p):
                    gc_bar[a, q] -= w * hc[a, q]
            for j in range(m):
                for k in range(u):
                    gb_b_bar[j, k] += w * gi_b[j, k]
                    tb_b_bar[j, k] += w * th_b[j, k]
                    for l in range(u):
                        gd_bar[j, k, l] -= w * hd[j, k, l]
                for a in range(p):
                    for k in range(u):
                        gb_bar[j, a, k] -= w * hb[j, a, k]

    status, bad, Ls, C, Ld = arrow_factor(gc_bar, gb_bar, gd_bar)
    if status != STATUS_OK:
        return (status, n_iter + 1, bad, fail_beta, fail_b,
                gc_bar, gb_bar, gd_bar)
    mu_beta, mu_b = arrow_solve(Ls, C, Ld, gb_beta_bar, gb_b_bar)
    for a in range(p):
        mu_beta[a] += tb_bar[a]
    for j in range(m):
        for k in range(u):
            mu_b[j, k] += tb_b_bar[j, k]
    return STATUS_OK, -1, -1, mu_beta, mu_b, gc_bar, gb_bar, gd_bar


# ---------------------------------------------------------------------------
# per-subject Laplace machinery


@njit(**_JIT)
def _subject_logintegrand(y, X, Z, offsets, lo, hi, tag, inv_phi, beta, Q,
                          c_i, half_logdet_q, b, grad, neg_hess):
    """Log integrand and derivatives at b; fills grad and neg_hess."""
    p = X.shape[1]
    u = Q.shape[0]
    for k in range(u):
        grad[k] = 0.0
        for l in range(u):
            neg_hess[k, l] = Q[k, l]
    acc = 0.0
    for r in range(lo, hi):
        eta = offsets[r]
        for a in range(p):
            eta += X[r, a] * beta[a]
        for a in range(u):
            eta += Z[r, a] * b[a]
        if tag == BERNOULLI:
            bval, bdot, bddot = _bern_eval(eta)
        else:
            e = math.exp(eta)
            bval = e
            bdot = e
            bddot = e
        acc += y[r] * eta - bval
        resid = (y[r] - bdot) * inv_phi
        w = bddot * inv_phi
        for k in range(u):
            grad[k] += Z[r, k] * resid
            zw = Z[r, k] * w
            for l in range(u):
                neg_hess[k, l] += zw * Z[r, l]
    quad = 0.0
    for k in range(u):
        s = 0.0
        for l in range(u):
            s += Q[k, l] * b[l]
        grad[k] -= s
        quad += b[k] * s
    return (acc * inv_phi + c_i + half_logdet_q
            - 0.5 * u * _LOG_2PI - 0.5 * quad)


@njit(**_JIT)
def _newton_mode(y, X, Z, offsets, lo, hi, tag, inv_phi, beta, Q, c_i,
                 half_logdet_q, b, grad, neg_hess, max_iter, tol):
    """In-place Newton ascent from b = 0; returns (ok, h_at_mode)."""
    u = Q.shape[0]
    for k in range(u):
        b[k] = 0.0
    h = _subject_logintegrand(y, X, Z, offsets, lo, hi, tag, inv_phi, beta,
                              Q, c_i, half_logdet_q, b, grad, neg_hess)
    if not np.isfinite(h):
        return False, h
    step = np.empty(u)
    cand = np.empty(u)
    grad_new = np.empty(u)
    hess_new = np.empty((u, u))
    L = np.empty((u, u))
    wvec = np.empty(u)
    for _ in range(max_iter):
        gmax = 0.0
        for k in range(u):
            if abs(grad[k]) > gmax:
                gmax = abs(grad[k])
        if gmax < tol:
            return True, h
        if _chol_lower(neg_hess, L) != 0:
            return False, h
        _solve_lower(L, grad, wvec)
        _solve_lower_t(L, wvec, step)
        scale = 1.0
        ok = False
        for _ in range(40):
            for k in range(u):
                cand[k] = b[k] + scale * step[k]
            h_new = _subject_logintegrand(
                y, X, Z, offsets, lo, hi, tag, inv_phi, beta, Q, c_i,
                half_logdet_q, cand, grad_new, hess_new)
            if np.isfinite(h_new) and h_new >= h:
                ok = True
                break
            scale *= 0.5
        if not ok:
            return False, h
        h = h_new
        for k in range(u):
            b[k] = cand[k]
            grad[k] = grad_new[k]
            for l in range(u):
                neg_hess[k, l] = hess_new[k, l]
    gmax = 0.0
    for k in range(u):
        if abs(grad[k]) > gmax:
            gmax = abs(grad[k])
    return gmax < tol, h


@njit(**_JIT)
def laplace_batch(y, X, Z, offsets, row_start, tag, phi, beta, Q):
    m = row_start.shape[0] - 1
    u = Q.shape[0]
    out = np.zeros(m)
    Lq = np.empty((u, u))
    if _chol_lower(Q, Lq) != 0:
        return STATUS_BAD_BLOCK, -1, out
    half_logdet_q = 0.0
    for k in range(u):
        half_logdet_q += math.log(Lq[k, k])
    inv_phi = 1.0 / phi
    b = np.empty(u)
    grad = np.empty(u)
    neg_hess = np.empty((u, u))
    Lh = np.empty((u, u))
    for i in range(m):
        lo, hi = row_start[i], row_start[i + 1]
        c_i = response_logconst(tag, y[lo:hi])
        ok, h_hat = _newton_mode(y, X, Z, offsets, lo, hi, tag, inv_phi,
                                 beta, Q, c_i, half_logdet_q, b, grad,
                                 neg_hess, 100, 1e-8)
        if not ok:
            return STATUS_NEWTON_FAIL, i, out
        if _chol_lower(neg_hess, Lh) != 0:
            return STATUS_NEWTON_FAIL, i, out
        half_logdet_h = 0.0
        for k in range(u):
            half_logdet_h += math.log(Lh[k, k])
        out[i] = h_hat + 0.5 * u * _LOG_2PI - half_logdet_h
    return STATUS_OK, -1, out


@njit(**_JIT)
def is_loglik_batch(y, X, Z, offsets, row_start, tag, phi, beta, Q, zdraws):
    m = row_start.shape[0] - 1
    u = Q.shape[0]
    n_samples = zdraws.shape[1]
    Lq = np.empty((u, u))
    if _chol_lower(Q, Lq) != 0:
        return STATUS_BAD_BLOCK, -1, 0.0
    half_logdet_q = 0.0
    for k in range(u):
        half_logdet_q += math.log(Lq[k, k])
    inv_phi = 1.0 / phi
    b_hat = np.empty(u)
    grad = np.empty(u)
    neg_hess = np.empty((u, u))
    L = np.empty((u, u))
    b_s = np.empty(u)
    sol = np.empty(u)
    logw = np.empty(n_samples)
    g_tmp = np.empty(u)
    h_tmp = np.empty((u, u))
    total = 0.0
    for i in range(m):
        lo, hi = row_start[i], row_start[i + 1]
        c_i = response_logconst(tag, y[lo:hi])
        ok, _ = _newton_mode(y, X, Z, offsets, lo, hi, tag, inv_phi, beta,
                             Q, c_i, half_logdet_q, b_hat, grad, neg_hess,
                             100, 1e-8)
        if not ok:
            return STATUS_NEWTON_FAIL, i, 0.0
        if _chol_lower(neg_hess, L) != 0:
            return STATUS_NEWTON_FAIL, i, 0.0
        half_logdet_prop = 0.0
        for k in range(u):
            half_logdet_prop += math.log(L[k, k])
        for s in range(n_samples):
            z = zdraws[i, s]
            _solve_lower_t(L, z, sol)
            zsq = 0.0
            for k in range(u):
                b_s[k] = b_hat[k] + sol[k]
                zsq += z[k] * z[k]
            h_s = _subject_logintegrand(
                y, X, Z, offsets, lo, hi, tag, inv_phi, beta, Q, c_i,
                half_logdet_q, b_s, g_tmp, h_tmp)
            log_prop = half_logdet_prop - 0.5 * u * _LOG_2PI - 0.5 * zsq
            logw[s] = h_s - log_prop
        top = logw[0]
        for s in range(1, n_samples):
            if logw[s] > top:
                top = logw[s]
        if not np.isfinite(top):
            return STATUS_NEWTON_FAIL, i, 0.0
        acc = 0.0
        for s in range(n_samples):
            acc += math.exp(logw[s] - top)
        total += top + math.log(acc / n_samples)
    return STATUS_OK, -1, total
