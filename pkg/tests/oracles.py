"""Independent dense reference implementations used by the tests."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular


def dirk_sequential(M, K, b, a, c, tau, n_steps, y0, t0=0.0):
    """Textbook DIRK in stage-value form, one stage at a time, dense solves.

    Stage ``i`` of step ``n`` solves
    ``M (Y_i - y_n)/tau + sum_{j<=i} a_ij (K Y_j - b(t_n + c_j tau)) = 0``
    and ``y_{n+1} = Y_m`` (stiffly accurate tableau).
    """
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    m = a.shape[0]
    y = np.asarray(y0, dtype=float).copy()
    out = [y.copy()]
    for n in range(n_steps):
        tn = t0 + n * tau
        stages = []
        for i in range(m):
            rhs = M @ y / tau
            for j in range(i):
                rhs -= a[i, j] * (K @ stages[j] - b(tn + c[j] * tau))
            rhs += a[i, i] * b(tn + c[i] * tau)
            lhs = M / tau + a[i, i] * K
            stages.append(np.linalg.solve(lhs, rhs))
        y = stages[-1]
        out.append(y.copy())
    return np.array(out)


def all_at_once(M, K, b, a, c, tau, s, y0, t0=0.0):
    """Solve all ``s*m`` stages of ``s`` steps as one Kronecker-structured system.

    Unknowns are stacked stage-major; ``(A1 kron M + A2 kron K) vec(Y) = rhs``
    with ``A1 = (I - S)/tau`` (``S`` links every stage of step ``n`` to the last
    stage of step ``n-1``) and ``A2 = I_s kron A``.
    """
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    m = a.shape[0]
    n = M.shape[0]
    w = s * m
    S = np.zeros((w, w))
    for step in range(1, s):
        S[step * m:(step + 1) * m, step * m - 1] = 1.0
    A1 = (np.eye(w) - S) / tau
    A2 = np.kron(np.eye(s), a)
    big = np.kron(A1, M) + np.kron(A2, K)
    times = np.array([t0 + (step + c[i]) * tau for step in range(s) for i in range(m)])
    B = np.concatenate([b(t) for t in times])
    rhs = np.kron(A2, np.eye(n)) @ B
    rhs[: m * n] += np.tile(M @ np.asarray(y0, dtype=float) / tau, m)
    z = np.linalg.solve(big, rhs)
    return z.reshape(w, n).T


def pcg(A, b, x0, minv, iters, stop=0.0):
    """Textbook preconditioned CG; returns the list of iterates ``x_0..x_iters``.

    Stops early once the recursive residual drops below ``stop`` times its initial norm.
    """
    x = x0.copy()
    r = b - A @ x
    r0 = np.linalg.norm(r)
    z = minv(r)
    p = z.copy()
    rz = r @ z
    xs = [x.copy()]
    for _ in range(iters):
        q = A @ p
        alpha = rz / (p @ q)
        x = x + alpha * p
        r = r - alpha * q
        xs.append(x.copy())
        if np.linalg.norm(r) <= stop * r0:
            break
        z = minv(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return xs


def bicgstab(A, b, x0, minv, iters, stop=0.0):
    """Right-preconditioned BiCGStab (van der Vorst); iterates ``x_0..x_iters``.

    Stops early once the recursive residual drops below ``stop`` times its initial norm.
    """
    x = x0.copy()
    r = b - A @ x
    r0 = np.linalg.norm(r)
    rt = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    xs = [x.copy()]
    for _ in range(iters):
        rho_new = rt @ r
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        ph = minv(p)
        v = A @ ph
        alpha = rho_new / (rt @ v)
        s = r - alpha * v
        sh = minv(s)
        t = A @ sh
        omega = (t @ s) / (t @ t)
        x = x + alpha * ph + omega * sh
        r = s - omega * t
        rho = rho_new
        xs.append(x.copy())
        if np.linalg.norm(r) <= stop * r0:
            break
    return xs



def bicgstab_regrouped(A, b, x0, minv, iters):
    """BiCGStab with algebraically equivalent but regrouped scalar updates.

    Used to measure how far rounding alone moves the reference iterates.
    """
    x = x0.copy()
    r = b - A @ x
    rt = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    xs = [x.copy()]
    for _ in range(iters):
        rho_new = r @ rt
        beta = (rho_new * alpha) / (rho * omega)
        p = r + beta * p - (beta * omega) * v
        ph = minv(p)
        v = A @ ph
        alpha = rho_new / (v @ rt)
        s = r - alpha * v
        sh = minv(s)
        t = A @ sh
        omega = (s @ t) / (t @ t)
        x = x + (alpha * ph + omega * sh)
        r = s - omega * t
        rho = rho_new
        xs.append(x.copy())
    return xs

def ssor_dense(A, omega):
    """Dense symmetric Gauss-Seidel / SSOR preconditioner ``r -> M^{-1} r``."""
    D = np.diag(np.diag(A))
    L = np.tril(A, -1)
    U = np.triu(A, 1)
    lo = D / omega + L
    up = D / omega + U
    mid = (2.0 - omega) / omega * D

    def apply(r):
        y = solve_triangular(lo, r, lower=True)
        return solve_triangular(up, mid @ y, lower=False)

    return apply


def ilu0_dense(A):
    """ILU(0) on the sparsity pattern of dense ``A``; returns ``r -> (LU)^{-1} r``."""
    n = A.shape[0]
    lu = A.astype(float).copy()
    pattern = A != 0.0
    for i in range(1, n):
        for k in np.flatnonzero(pattern[i, :i]):
            lu[i, k] /= lu[k, k]
            cols = k + 1 + np.flatnonzero(pattern[i, k + 1:])
            lu[i, cols] -= lu[i, k] * lu[k, cols]
    L = np.tril(lu, -1) + np.eye(n)
    U = np.triu(lu)

    def apply(r):
        return solve_triangular(U, solve_triangular(L, r, lower=True, unit_diagonal=True))

    return apply


def van_genuchten_mp(psi, theta_s, theta_r, alpha, n, k_s, dps=50):
    """Water content and conductivity evaluated with arbitrary precision."""
    import mpmath as mp

    with mp.workdps(dps):
        psi = mp.mpf(psi)
        ts, tr, al, nn, ks = (mp.mpf(v) for v in (theta_s, theta_r, alpha, n, k_s))
        m = (nn - 1) / nn
        if psi > 0:
            theta = ts
        else:
            theta = tr + (ts - tr) * (1 / (1 + (-al * psi) ** nn)) ** m
        s = theta / ts
        k = ks * mp.sqrt(s) * (1 - (1 - s ** (nn / (nn - 1))) ** m) ** 2
        return float(theta), float(k)


def fd_jacobian(f, u, h):
    """Central finite-difference Jacobian of ``f`` at ``u``, column by column."""
    n = u.size
    jac = np.empty((f(u).size, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        jac[:, j] = (f(u + e) - f(u - e)) / (2.0 * h)
    return jac
