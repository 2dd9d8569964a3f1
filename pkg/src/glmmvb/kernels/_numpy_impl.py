"""Pure-numpy kernels.

Reference implementation of every hot numeric routine; the numba twin in
`_numba_impl` mirrors these signatures exactly.  Subject-wise reductions
use `np.add.reduceat` over contiguous row blocks, block linear algebra
uses stacked (m, u, u) arrays and batched `np.linalg` calls.

Conventions shared by both backends:

* family tags: 0 = Bernoulli, 1 = Poisson; scale phi is fixed at 1.
* block-arrow matrices are (corner (p,p), border (m,p,u), diag (m,u,u));
  as a precision, its blockwise Cholesky eliminates the tail blocks first
  and forms the p x p Schur complement of the corner last.
* kernels never raise; they return an integer status plus the index of the
  offending block/iteration/subject, and wrappers raise typed errors.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit, gammaln

BERNOULLI = 0
POISSON = 1

STATUS_OK = 0
STATUS_BAD_BLOCK = 1  # a tail block of the arrow matrix is not PD
STATUS_BAD_CORNER = 2  # the corner Schur complement is not PD
STATUS_NEWTON_FAIL = 3  # inner mode search did not converge


# ---------------------------------------------------------------------------
# family functions


def family_eval(tag, eta):
    """Componentwise cumulant function and its first two derivatives."""
    if tag == BERNOULLI:
        bdot = expit(eta)
        bval = np.logaddexp(0.0, eta)
        bddot = bdot * (1.0 - bdot)
    else:
        with np.errstate(over="ignore"):
            ev = np.exp(eta)
        bval = ev
        bdot = ev.copy() if isinstance(ev, np.ndarray) else ev
        bddot = ev.copy() if isinstance(ev, np.ndarray) else ev
    return bval, bdot, bddot


def response_logconst(tag, y):
    """Sum of the y-only normalizing terms of the response density."""
    if tag == BERNOULLI:
        return 0.0
    return -float(np.sum(gammaln(np.asarray(y) + 1.0)))


# ---------------------------------------------------------------------------
# GLMM gradient / Hessian assembly


def linear_predictor(X, Z, offsets, subj_idx, beta, b):
    return X @ beta + np.einsum("ij,ij->i", Z, b[subj_idx]) + offsets


def grad_hess(y, X, Z, offsets, row_start, subj_idx, tag, phi,
              prior_prec, prior_mean, eq, beta, b):
    """Gradient and block-arrow Hessian of the log joint in (beta, b).

    Returns (g_beta, g_b, h_corner, h_border, h_diag); the Hessian blocks
    are of the log joint itself (negative definite side).
    """
    eta = linear_predictor(X, Z, offsets, subj_idx, beta, b)
    _, bdot, bddot = family_eval(tag, eta)
    resid = (y - bdot) / phi
    g_beta = X.T @ resid - prior_prec @ (beta - prior_mean)
    starts = row_start[:-1]
    g_b = np.add.reduceat(Z * resid[:, None], starts, axis=0) - b @ eq
    w = bddot / phi
    Xw = X * w[:, None]
    corner = X.T @ Xw
    h_corner = -0.5 * (corner + corner.T) - prior_prec
    h_border = -np.add.reduceat(np.einsum("ri,rj->rij", Xw, Z), starts, axis=0)
    zz = np.einsum("ri,rj->rij", Z * w[:, None], Z)
    h_diag = -np.add.reduceat(zz, starts, axis=0) - eq[None, :, :]
    return g_beta, g_b, h_corner, h_border, h_diag


# ---------------------------------------------------------------------------
# block-arrow Cholesky, solves, marginals, sampling


def _first_bad_chol(blocks):
    for i in range(blocks.shape[0]):
        try:
            np.linalg.cholesky(blocks[i])
        except np.linalg.LinAlgError:
            return i
    return blocks.shape[0] - 1


def arrow_factor(corner, border, diag):
    """Blockwise Cholesky of an arrow precision.

    Returns (status, bad_block, Ls, C, Ld) where Ld are the tail-block
    Cholesky factors, C_i = B_i L_i^{-T}, and Ls is the Cholesky factor of
    the corner Schur complement  corner - sum_i C_i C_i^T.
    """
    empty = (np.zeros_like(corner), np.zeros_like(border), np.zeros_like(diag))
    try:
        Ld = np.linalg.cholesky(diag)
    except np.linalg.LinAlgError:
        return (STATUS_BAD_BLOCK, _first_bad_chol(diag)) + empty
    Ct = np.linalg.solve(Ld, np.swapaxes(border, 1, 2))
    schur = corner - np.einsum("mua,mub->ab", Ct, Ct)
    try:
        Ls = np.linalg.cholesky(schur)
    except np.linalg.LinAlgError:
        return (STATUS_BAD_CORNER, -1) + empty
    return STATUS_OK, -1, Ls, np.swapaxes(Ct, 1, 2).copy(), Ld


def arrow_solve(Ls, C, Ld, rhs_beta, rhs_b):
    """Solve H x = rhs given the factor of the arrow precision H."""
    w_b = np.linalg.solve(Ld, rhs_b[..., None])[..., 0]
    w_beta = solve_triangular(
        Ls, rhs_beta - np.einsum("mpu,mu->p", C, w_b), lower=True)
    x_beta = solve_triangular(Ls, w_beta, lower=True, trans="T")
    rhs = w_b - np.einsum("mpu,p->mu", C, x_beta)
    x_b = np.linalg.solve(np.swapaxes(Ld, 1, 2), rhs[..., None])[..., 0]
    return x_beta, x_b


def arrow_sample(Ls, C, Ld, mu_beta, mu_b, z_beta, z_b):
    """mu + L^{-T} z for the blockwise factor L (covariance H^{-1})."""
    x_beta = solve_triangular(Ls, z_beta, lower=True, trans="T")
    rhs = z_b - np.einsum("mpu,p->mu", C, x_beta)
    x_b = np.linalg.solve(np.swapaxes(Ld, 1, 2), rhs[..., None])[..., 0]
    return mu_beta + x_beta, mu_b + x_b


def arrow_marginals(Ls, C, Ld):
    """Corner, border and tail-diagonal blocks of H^{-1}."""
    p = Ls.shape[0]
    Ls_inv = solve_triangular(Ls, np.eye(p), lower=True)
    corner_cov = Ls_inv.T @ Ls_inv
    corner_cov = 0.5 * (corner_cov + corner_cov.T)
    # W_i = D_i^{-1} B_i^T = L_i^{-T} C_i^T, shape (u, p)
    W = np.linalg.solve(np.swapaxes(Ld, 1, 2), np.swapaxes(C, 1, 2))
    border_cov = -np.einsum("ab,mub->mau", corner_cov, W)
    u = Ld.shape[1]
    Ld_inv = np.linalg.solve(Ld, np.broadcast_to(np.eye(u), Ld.shape))
    d_inv = np.einsum("mka,mkb->mab", Ld_inv, Ld_inv)
    diag_cov = d_inv + np.einsum("mua,ab,mvb->muv", W, corner_cov, W)
    diag_cov = 0.5 * (diag_cov + np.swapaxes(diag_cov, 1, 2))
    return corner_cov, border_cov, diag_cov


def arrow_logdet(Ls, Ld):
    return 2.0 * (float(np.sum(np.log(np.diagonal(Ls))))
                  + float(np.sum(np.log(np.diagonal(Ld, axis1=1, axis2=2)))))


# ---------------------------------------------------------------------------
# fused inner loop of the stochastic Gaussian update for one (beta, b) block


def alpha_inner_loop(y, X, Z, offsets, row_start, subj_idx, tag, phi,
                     prior_prec, prior_mean, eq,
                     t_beta0, t_b0, g_corner0, g_border0, g_diag0, z):
    """Run the N-iteration stochastic refinement of the Gaussian factor.

    State: running precision Gamma (arrow), gradient average g and draw
    average t, refreshed mean/factor used for sampling, plus tail-half
    averages.  Returns
        (status, bad_iter, bad_block,
         mu_beta, mu_b, gbar_corner, gbar_border, gbar_diag).
    """
    n_iter = z.shape[0]
    c = 1.0 / np.sqrt(n_iter)
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

    fail = (np.zeros(p), np.zeros((m, u)), np.zeros((p, p)),
            np.zeros((m, p, u)), np.zeros((m, u, u)))
    status, bad, Ls, C, Ld = arrow_factor(gc, gb, gd)
    if status != STATUS_OK:
        return (status, 0, bad) + fail
    mu_beta = t_beta.copy()
    mu_b = t_b.copy()

    w = 2.0 / n_iter
    for i in range(n_iter):
        z_beta = z[i, :p]
        z_b = z[i, p:].reshape(m, u)
        th_beta, th_b = arrow_sample(Ls, C, Ld, mu_beta, mu_b, z_beta, z_b)

        status, bad, Ls, C, Ld = arrow_factor(gc, gb, gd)
        if status != STATUS_OK:
            return (status, i + 1, bad) + fail
        mu_beta, mu_b = arrow_solve(Ls, C, Ld, g_beta, g_b)
        mu_beta += t_beta
        mu_b += t_b

        gi_beta, gi_b, hc, hb, hd = grad_hess(
            y, X, Z, offsets, row_start, subj_idx, tag, phi,
            prior_prec, prior_mean, eq, th_beta, th_b)

        g_beta = (1.0 - c) * g_beta + c * gi_beta
        g_b = (1.0 - c) * g_b + c * gi_b
        gc = (1.0 - c) * gc - c * hc
        gb = (1.0 - c) * gb - c * hb
        gd = (1.0 - c) * gd - c * hd
        t_beta = (1.0 - c) * t_beta + c * th_beta
        t_b = (1.0 - c) * t_b + c * th_b

        if i >= half:
            gb_beta_bar += w * gi_beta
            gb_b_bar += w * gi_b
            gc_bar -= w * hc
            gb_bar -= w * hb
            gd_bar -= w * hd
            tb_bar += w * th_beta
            tb_b_bar += w * th_b

    status, bad, Ls, C, Ld = arrow_factor(gc_bar, gb_bar, gd_bar)
    if status != STATUS_OK:
        return (status, n_iter + 1, bad) + fail
    mu_beta, mu_b = arrow_solve(Ls, C, Ld, gb_beta_bar, gb_b_bar)
    mu_beta += tb_bar
    mu_b += tb_b_bar
    return STATUS_OK, -1, -1, mu_beta, mu_b, gc_bar, gb_bar, gd_bar


# ---------------------------------------------------------------------------
# per-subject Laplace machinery


def _subject_logintegrand(y_i, X_i, Z_i, off_i, tag, phi, beta, Q, c_i,
                          half_logdet_q, b):
    eta = X_i @ beta + Z_i @ b + off_i
    bval, bdot, bddot = family_eval(tag, eta)
    u = Q.shape[0]
    h = (float(y_i @ eta - np.sum(bval)) / phi + c_i + half_logdet_q
         - 0.5 * u * np.log(2.0 * np.pi) - 0.5 * float(b @ Q @ b))
    grad = Z_i.T @ ((y_i - bdot) / phi) - Q @ b
    neg_hess = Z_i.T @ (Z_i * (bddot / phi)[:, None]) + Q
    return h, grad, neg_hess


def _newton_mode(y_i, X_i, Z_i, off_i, tag, phi, beta, Q, c_i,
                 half_logdet_q, max_iter=100, tol=1e-8):
    """Maximize the log integrand over b.  Returns (ok, b, h, neg_hess)."""
    u = Q.shape[0]
    b = np.zeros(u)
    h, grad, neg_hess = _subject_logintegrand(
        y_i, X_i, Z_i, off_i, tag, phi, beta, Q, c_i, half_logdet_q, b)
    if not np.isfinite(h):
        return False, b, h, neg_hess
    for _ in range(max_iter):
        if np.max(np.abs(grad)) < tol:
            return True, b, h, neg_hess
        try:
            step = np.linalg.solve(neg_hess, grad)
        except np.linalg.LinAlgError:
            return False, b, h, neg_hess
        scale = 1.0
        for _ in range(40):
            b_new = b + scale * step
            h_new, grad_new, neg_hess_new = _subject_logintegrand(
                y_i, X_i, Z_i, off_i, tag, phi, beta, Q, c_i,
                half_logdet_q, b_new)
            if np.isfinite(h_new) and h_new >= h:
                break
            scale *= 0.5
        else:
            return False, b, h, neg_hess
        b, h, grad, neg_hess = b_new, h_new, grad_new, neg_hess_new
    return bool(np.max(np.abs(grad)) < tol), b, h, neg_hess


def laplace_batch(y, X, Z, offsets, row_start, tag, phi, beta, Q):
    """Laplace log predictive density per subject.

    Returns (status, bad_subject, values) where values[i] approximates the
    log of the response density integrated over that subject's random
    effects under N(0, Q^{-1}).
    """
    m = row_start.shape[0] - 1
    out = np.zeros(m)
    u = Q.shape[0]
    sign, logdet_q = np.linalg.slogdet(Q)
    if sign <= 0:
        return STATUS_BAD_BLOCK, -1, out
    half_logdet_q = 0.5 * logdet_q
    for i in range(m):
        lo, hi = row_start[i], row_start[i + 1]
        y_i = y[lo:hi]
        c_i = response_logconst(tag, y_i)
        ok, b_hat, h_hat, neg_hess = _newton_mode(
            y_i, X[lo:hi], Z[lo:hi], offsets[lo:hi], tag, phi, beta, Q,
            c_i, half_logdet_q)
        if not ok:
            return STATUS_NEWTON_FAIL, i, out
        sign_h, logdet_h = np.linalg.slogdet(neg_hess)
        if sign_h <= 0:
            return STATUS_NEWTON_FAIL, i, out
        out[i] = h_hat + 0.5 * u * np.log(2.0 * np.pi) - 0.5 * logdet_h
    return STATUS_OK, -1, out


def is_loglik_batch(y, X, Z, offsets, row_start, tag, phi, beta, Q, zdraws):
    """Importance-sampled log likelihood with random effects integrated out.

    zdraws has shape (m, S, u); the proposal for subject i is the Gaussian
    Laplace fit at that subject's mode.  Returns (status, bad_subject,
    total) with total = sum_i log( (1/S) sum_s w_is ).
    """
    m = row_start.shape[0] - 1
    n_samples = zdraws.shape[1]
    u = Q.shape[0]
    sign, logdet_q = np.linalg.slogdet(Q)
    if sign <= 0:
        return STATUS_BAD_BLOCK, -1, 0.0
    half_logdet_q = 0.5 * logdet_q
    total = 0.0
    for i in range(m):
        lo, hi = row_start[i], row_start[i + 1]
        y_i = y[lo:hi]
        X_i, Z_i, off_i = X[lo:hi], Z[lo:hi], offsets[lo:hi]
        c_i = response_logconst(tag, y_i)
        ok, b_hat, _, neg_hess = _newton_mode(
            y_i, X_i, Z_i, off_i, tag, phi, beta, Q, c_i, half_logdet_q)
        if not ok:
            return STATUS_NEWTON_FAIL, i, 0.0
        try:
            L = np.linalg.cholesky(neg_hess)
        except np.linalg.LinAlgError:
            return STATUS_NEWTON_FAIL, i, 0.0
        half_logdet_prop = float(np.sum(np.log(np.diag(L))))
        logw = np.empty(n_samples)
        for s in range(n_samples):
            z = zdraws[i, s]
            b_s = b_hat + solve_triangular(L, z, lower=True, trans="T")
            h_s, _, _ = _subject_logintegrand(
                y_i, X_i, Z_i, off_i, tag, phi, beta, Q, c_i,
                half_logdet_q, b_s)
            log_prop = (half_logdet_prop - 0.5 * u * np.log(2.0 * np.pi)
                        - 0.5 * float(z @ z))
            logw[s] = h_s - log_prop
        top = np.max(logw)
        if not np.isfinite(top):
            return STATUS_NEWTON_FAIL, i, 0.0
        total += top + np.log(np.mean(np.exp(logw - top)))
    return STATUS_OK, -1, total
