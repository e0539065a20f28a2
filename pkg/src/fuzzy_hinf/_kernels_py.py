"""Pure-Python RK4 integrator for the coupled plant/filter delay system.

Reference implementation of the compiled kernel in ``_kernels.pyx``; both
expose :func:`integrate` with identical arguments and results.

History before ``t = 0`` is the constant ``phi``.  Delayed values inside
the stored grid use cubic Hermite interpolation from stored states and
derivatives; a query inside the step being computed (delay shorter than
``dt``) extrapolates the last interval's cubic.
"""

import math

import numpy as np

OK, DIVERGED, DEGENERATE = 0, 1, 2
DIVERGENCE_LIMIT = 1e12


def _expit(u):
    if u >= 0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


def _grade(code, prm, tx, ty, off, ln, x):
    if code == 0:
        return 1.0 - prm[0] * _expit(prm[1] + prm[2] * x)
    if code == 1:
        return prm[0] * _expit(prm[1] + prm[2] * x)
    if code == 2:
        u = (x - prm[0]) / prm[1]
        return math.exp(-0.5 * u * u)
    if code == 3:
        lo, m, hi = prm[0], prm[1], prm[2]
        up = (x - lo) / (m - lo) if m > lo else 1.0
        down = (hi - x) / (hi - m) if hi > m else 1.0
        return min(max(min(up, down), 0.0), 1.0)
    if code == 4:
        return prm[0]
    # table: piecewise linear, clamped at the ends
    if x <= tx[off]:
        return ty[off]
    last = off + ln - 1
    if x >= tx[last]:
        return ty[last]
    k = off
    while tx[k + 1] < x:
        k += 1
    s = (x - tx[k]) / (tx[k + 1] - tx[k])
    return ty[k] + s * (ty[k + 1] - ty[k])


def _memberships(codes, params, tx, ty, toff, tlen, psi, out):
    total = 0.0
    for i in range(len(codes)):
        g = _grade(codes[i], params[i], tx, ty, toff[i], tlen[i], psi)
        out[i] = g
        total += g
    if not total > 1e-12:
        return False
    out /= total
    return True


def _hermite(x0, f0, x1, f1, dt, th):
    t2, t3 = th * th, th * th * th
    return (
        (2 * t3 - 3 * t2 + 1) * x0
        + (t3 - 2 * t2 + th) * dt * f0
        + (-2 * t3 + 3 * t2) * x1
        + (t3 - t2) * dt * f1
    )


def integrate(
    A, Ad, B, C, Cd, D, Ah, Bh,
    codes, params, tx, ty, toff, tlen,
    premise, phi, xh0, dt, nsteps, tau, w,
):
    """Fixed-step RK4 on ``zeta = (x, x_hat)``.

    Parameters
    ----------
    A, Ad, B, C, Cd, D : ndarray
        Plant rule matrices stacked along a leading rule axis.
    Ah, Bh : ndarray
        Filter rule matrices, stacked the same way.
    codes, params, tx, ty, toff, tlen : ndarray
        Packed membership grades (see ``kernels.pack_grades``).
    premise : int
        Index of the premise variable in ``x``.
    phi, xh0 : ndarray
        Constant plant history and initial filter state.
    tau : ndarray, shape (nsteps + 1, 3)
        Delay at ``t_k``, ``t_k + dt/2`` and ``t_k + dt``.
    w : ndarray, shape (nsteps + 1, 3, n_w)
        Disturbance at the same stage times.

    Returns
    -------
    zeta, dzeta, xdel, ups : ndarray
        States, derivatives, delayed plant states and memberships on the grid.
    steps : int
        Completed steps.
    status : int
        0 ok, 1 diverged, 2 degenerate memberships.
    """
    p, n = A.shape[0], A.shape[1]
    N = int(nsteps)
    zeta = np.zeros((N + 1, 2 * n))
    dzeta = np.zeros((N + 1, 2 * n))
    xdel = np.zeros((N + 1, n))
    ups = np.zeros((N + 1, p))
    zeta[0, :n] = phi
    zeta[0, n:] = xh0
    u = np.empty(p)

    def delayed(q, cur):
        if q <= 0.0:
            return phi
        s = q / dt
        k = int(math.floor(s))
        if k < cur:
            return _hermite(zeta[k, :n], dzeta[k, :n], zeta[k + 1, :n], dzeta[k + 1, :n], dt, s - k)
        if cur == 0:
            return zeta[0, :n] + q * dzeta[0, :n]
        th = (q - (cur - 1) * dt) / dt
        return _hermite(
            zeta[cur - 1, :n], dzeta[cur - 1, :n], zeta[cur, :n], dzeta[cur, :n], dt, th
        )

    def rhs(z, xd, wv):
        if not _memberships(codes, params, tx, ty, toff, tlen, z[premise], u):
            return None
        x, xh = z[:n], z[n:]
        dx = np.zeros(n)
        y = np.zeros(C.shape[1])
        for i in range(p):
            dx += u[i] * (A[i] @ x + Ad[i] @ xd + B[i] @ wv)
            y += u[i] * (C[i] @ x + Cd[i] @ xd + D[i] @ wv)
        dxh = np.zeros(n)
        for j in range(p):
            dxh += u[j] * (Ah[j] @ xh + Bh[j] @ y)
        return np.concatenate([dx, dxh])

    status = OK
    done = 0
    for k in range(N + 1):
        t = k * dt
        xd = delayed(t - tau[k, 0], k)
        k1 = rhs(zeta[k], xd, w[k, 0])
        if k1 is None:
            status = DEGENERATE
            break
        dzeta[k] = k1
        xdel[k] = xd
        ups[k] = u
        if k == N:
            break
        zk = zeta[k]
        xd = delayed(t + 0.5 * dt - tau[k, 1], k)
        k2 = rhs(zk + 0.5 * dt * k1, xd, w[k, 1])
        k3 = None if k2 is None else rhs(zk + 0.5 * dt * k2, xd, w[k, 1])
        xd = delayed(t + dt - tau[k, 2], k)
        k4 = None if k3 is None else rhs(zk + dt * k3, xd, w[k, 2])
        if k4 is None:
            status = DEGENERATE
            break
        nxt = zk + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(nxt)) or np.abs(nxt).max() > DIVERGENCE_LIMIT:
            status = DIVERGED
            break
        zeta[k + 1] = nxt
        done = k + 1
    return zeta, dzeta, xdel, ups, done, status
