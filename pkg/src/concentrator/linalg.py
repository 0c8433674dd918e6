"""Matrix-free Krylov solvers on lattice fields.

Both solvers take the operator as a callable on ndarrays and work in the
plain lattice l2 inner product; callers symmetrize their operators by
folding the volume weight into them. The preconditioner is an SPD
callable (FFT inverse of the flat symbol in this package). Iteration
order is fixed, so results are deterministic for fixed inputs.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import MaxIterations


def _dot(a, b):
    return float(np.vdot(a, b).real)


def pcg(op, b, prec=None, tol: float = 1e-10, max_iter: int = 2000, x0=None):
    """Preconditioned conjugate gradients for SPD op.

    Stops when ||op x - b|| <= tol * ||b|| (plain l2). Raises
    MaxIterations with the achieved relative residual on failure.
    """
    b = np.asarray(b)
    bnorm = math.sqrt(_dot(b, b))
    if bnorm == 0.0:
        return np.zeros_like(b)
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - op(x) if x0 is not None else b.copy()
    z = prec(r) if prec is not None else r
    p = z.copy()
    rz = _dot(r, z)
    for _ in range(max_iter):
        Ap = op(p)
        alpha = rz / _dot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        rn = math.sqrt(_dot(r, r))
        if rn <= tol * bnorm:
            return x
        z = prec(r) if prec is not None else r
        rz_new = _dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise MaxIterations(
        f"pcg stalled at relative residual {rn / bnorm:.3e} (tol {tol})",
        residual=rn / bnorm)


def pminres(op, b, prec=None, tol: float = 1e-10, max_iter: int = 2000,
            x0=None):
    """Preconditioned MINRES for symmetric (possibly indefinite) op.

    Standard Paige-Saunders recurrence with an SPD preconditioner;
    convergence is monitored on the preconditioned residual norm and
    confirmed on the true residual before returning.
    """
    b = np.asarray(b)
    if prec is None:
        prec = lambda u: u
    bnorm = math.sqrt(_dot(b, b))
    if bnorm == 0.0:
        return np.zeros_like(b)
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - op(x) if x0 is not None else b.copy()

    v_old = np.zeros_like(b)
    v = r
    z = prec(v)
    gamma_old = 1.0
    gamma = math.sqrt(_dot(z, v))
    if gamma == 0.0:
        return x
    eta = gamma
    s_old = s_cur = 0.0
    c_old = c_cur = 1.0
    w_old = np.zeros_like(b)
    w_cur = np.zeros_like(b)

    for it in range(max_iter):
        zn = z / gamma
        Az = op(zn)
        delta = _dot(Az, zn)
        v_new = Az - (delta / gamma) * v - (gamma / gamma_old) * v_old
        z_new = prec(v_new)
        gamma_new = math.sqrt(max(_dot(z_new, v_new), 0.0))

        a0 = c_cur * delta - c_old * s_cur * gamma
        a1 = math.sqrt(a0 * a0 + gamma_new * gamma_new)
        a2 = s_cur * delta + c_old * c_cur * gamma
        a3 = s_old * gamma
        if a1 == 0.0:
            break
        c_new = a0 / a1
        s_new = gamma_new / a1

        w_new = (zn - a3 * w_old - a2 * w_cur) / a1
        x = x + (c_new * eta) * w_new
        eta = -s_new * eta

        if abs(eta) <= tol * bnorm:
            break
        if gamma_new == 0.0:
            break
        v_old, v = v, v_new
        z = z_new
        gamma_old, gamma = gamma, gamma_new
        s_old, s_cur = s_cur, s_new
        c_old, c_cur = c_cur, c_new
        w_old, w_cur = w_cur, w_new
    else:
        rn = math.sqrt(_dot(b - op(x), b - op(x)))
        raise MaxIterations(
            f"pminres stalled at relative residual {rn / bnorm:.3e} (tol {tol})",
            residual=rn / bnorm)
    return x
