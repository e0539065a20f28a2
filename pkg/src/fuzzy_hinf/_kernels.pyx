# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RK4 integrator for the coupled plant/filter delay system.

Mirrors ``_kernels_py.integrate`` operation for operation.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor, isfinite, fabs

cnp.import_array()

cdef enum:
    OK = 0
    DIVERGED = 1
    DEGENERATE = 2

cdef double DIVERGENCE_LIMIT = 1e12


cdef inline double _expit(double u) nogil:
    cdef double e
    if u >= 0:
        return 1.0 / (1.0 + exp(-u))
    e = exp(u)
    return e / (1.0 + e)


cdef double _grade(long code, const double[:] prm, const double[:] tx, const double[:] ty,
                   long off, long ln, double x) nogil:
    cdef double lo, m, hi, up, down, r, s, uu
    cdef long k, last
    if code == 0:
        return 1.0 - prm[0] * _expit(prm[1] + prm[2] * x)
    if code == 1:
        return prm[0] * _expit(prm[1] + prm[2] * x)
    if code == 2:
        uu = (x - prm[0]) / prm[1]
        return exp(-0.5 * uu * uu)
    if code == 3:
        lo = prm[0]
        m = prm[1]
        hi = prm[2]
        up = (x - lo) / (m - lo) if m > lo else 1.0
        down = (hi - x) / (hi - m) if hi > m else 1.0
        r = up if up < down else down
        if r < 0.0:
            r = 0.0
        if r > 1.0:
            r = 1.0
        return r
    if code == 4:
        return prm[0]
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


cdef class _Integrator:
    cdef int p, n, ny, nw, premise, N
    cdef double dt
    cdef const double[:, :, :] A
    cdef const double[:, :, :] Ad
    cdef const double[:, :, :] B
    cdef const double[:, :, :] C
    cdef const double[:, :, :] Cd
    cdef const double[:, :, :] D
    cdef const double[:, :, :] Ah
    cdef const double[:, :, :] Bh
    cdef const long[:] codes
    cdef const double[:, :] params
    cdef const double[:] tx
    cdef const double[:] ty
    cdef const long[:] toff
    cdef const long[:] tlen
    cdef const double[:] phi
    cdef double[:, :] zeta
    cdef double[:, :] dzeta
    cdef double[:] u
    cdef double[:] y

    cdef bint memberships(self, double psi):
        cdef int i
        cdef double g, total = 0.0
        for i in range(self.p):
            g = _grade(self.codes[i], self.params[i], self.tx, self.ty, self.toff[i], self.tlen[i], psi)
            self.u[i] = g
            total += g
        if not total > 1e-12:
            return False
        for i in range(self.p):
            self.u[i] /= total
        return True

    cdef void delayed(self, double q, int cur, double[:] out):
        cdef int n = self.n
        cdef int k, a
        cdef double s, th, t2, t3, h00, h10, h01, h11, dt = self.dt
        if q <= 0.0:
            for a in range(n):
                out[a] = self.phi[a]
            return
        s = q / dt
        k = <int>floor(s)
        if k < cur:
            th = s - k
        elif cur == 0:
            for a in range(n):
                out[a] = self.zeta[0, a] + q * self.dzeta[0, a]
            return
        else:
            k = cur - 1
            th = (q - (cur - 1) * dt) / dt
        t2 = th * th
        t3 = t2 * th
        h00 = 2 * t3 - 3 * t2 + 1
        h10 = (t3 - 2 * t2 + th) * dt
        h01 = -2 * t3 + 3 * t2
        h11 = (t3 - t2) * dt
        for a in range(n):
            out[a] = (h00 * self.zeta[k, a] + h10 * self.dzeta[k, a]
                      + h01 * self.zeta[k + 1, a] + h11 * self.dzeta[k + 1, a])

    cdef bint rhs(self, double[:] z, double[:] xd, const double[:] wv, double[:] out):
        cdef int n = self.n, i, a, b
        cdef double ui, acc
        if not self.memberships(z[self.premise]):
            return False
        for a in range(2 * n):
            out[a] = 0.0
        for a in range(self.ny):
            self.y[a] = 0.0
        for i in range(self.p):
            ui = self.u[i]
            for a in range(n):
                acc = 0.0
                for b in range(n):
                    acc += self.A[i, a, b] * z[b] + self.Ad[i, a, b] * xd[b]
                for b in range(self.nw):
                    acc += self.B[i, a, b] * wv[b]
                out[a] += ui * acc
            for a in range(self.ny):
                acc = 0.0
                for b in range(n):
                    acc += self.C[i, a, b] * z[b] + self.Cd[i, a, b] * xd[b]
                for b in range(self.nw):
                    acc += self.D[i, a, b] * wv[b]
                self.y[a] += ui * acc
        for i in range(self.p):
            ui = self.u[i]
            for a in range(n):
                acc = 0.0
                for b in range(n):
                    acc += self.Ah[i, a, b] * z[n + b]
                for b in range(self.ny):
                    acc += self.Bh[i, a, b] * self.y[b]
                out[n + a] += ui * acc
        return True


def integrate(A, Ad, B, C, Cd, D, Ah, Bh,
              codes, params, tx, ty, toff, tlen,
              premise, phi, xh0, double dt, nsteps, tau, w):
    """Fixed-step RK4 on ``zeta = (x, x_hat)``; see ``_kernels_py.integrate``."""
    cdef _Integrator it = _Integrator()
    cdef int p = A.shape[0], n = A.shape[1]
    cdef int N = int(nsteps)
    cdef int k, a, status = OK, done = 0, m2 = 2 * n
    cdef double t, big
    it.p = p
    it.n = n
    it.ny = C.shape[1]
    it.nw = B.shape[2]
    it.premise = int(premise)
    it.N = N
    it.dt = dt
    it.A = np.ascontiguousarray(A, dtype=np.float64)
    it.Ad = np.ascontiguousarray(Ad, dtype=np.float64)
    it.B = np.ascontiguousarray(B, dtype=np.float64)
    it.C = np.ascontiguousarray(C, dtype=np.float64)
    it.Cd = np.ascontiguousarray(Cd, dtype=np.float64)
    it.D = np.ascontiguousarray(D, dtype=np.float64)
    it.Ah = np.ascontiguousarray(Ah, dtype=np.float64)
    it.Bh = np.ascontiguousarray(Bh, dtype=np.float64)
    it.codes = np.ascontiguousarray(codes, dtype=np.int_)
    it.params = np.ascontiguousarray(params, dtype=np.float64)
    it.tx = np.ascontiguousarray(tx, dtype=np.float64)
    it.ty = np.ascontiguousarray(ty, dtype=np.float64)
    it.toff = np.ascontiguousarray(toff, dtype=np.int_)
    it.tlen = np.ascontiguousarray(tlen, dtype=np.int_)
    it.phi = np.ascontiguousarray(phi, dtype=np.float64)
    zeta_a = np.zeros((N + 1, m2))
    dzeta_a = np.zeros((N + 1, m2))
    xdel_a = np.zeros((N + 1, n))
    ups_a = np.zeros((N + 1, p))
    it.zeta = zeta_a
    it.dzeta = dzeta_a
    it.u = np.zeros(p)
    it.y = np.zeros(max(it.ny, 1))
    cdef double[:, :] zeta = zeta_a
    cdef double[:, :] dzeta = dzeta_a
    cdef double[:, :] xdel = xdel_a
    cdef double[:, :] ups = ups_a
    cdef const double[:, :] tau_v = np.ascontiguousarray(tau, dtype=np.float64)
    cdef const double[:, :, :] w_v = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[:] xd = np.zeros(n)
    cdef double[:] k1 = np.zeros(m2)
    cdef double[:] k2 = np.zeros(m2)
    cdef double[:] k3 = np.zeros(m2)
    cdef double[:] k4 = np.zeros(m2)
    cdef double[:] tmp = np.zeros(m2)
    cdef double h6 = dt / 6.0

    for a in range(n):
        zeta[0, a] = phi[a]
        zeta[0, n + a] = xh0[a]

    for k in range(N + 1):
        t = k * dt
        it.delayed(t - tau_v[k, 0], k, xd)
        if not it.rhs(zeta[k], xd, w_v[k, 0], k1):
            status = DEGENERATE
            break
        for a in range(m2):
            dzeta[k, a] = k1[a]
        for a in range(n):
            xdel[k, a] = xd[a]
        for a in range(p):
            ups[k, a] = it.u[a]
        if k == N:
            break
        it.delayed(t + 0.5 * dt - tau_v[k, 1], k, xd)
        for a in range(m2):
            tmp[a] = zeta[k, a] + 0.5 * dt * k1[a]
        if not it.rhs(tmp, xd, w_v[k, 1], k2):
            status = DEGENERATE
            break
        for a in range(m2):
            tmp[a] = zeta[k, a] + 0.5 * dt * k2[a]
        if not it.rhs(tmp, xd, w_v[k, 1], k3):
            status = DEGENERATE
            break
        it.delayed(t + dt - tau_v[k, 2], k, xd)
        for a in range(m2):
            tmp[a] = zeta[k, a] + dt * k3[a]
        if not it.rhs(tmp, xd, w_v[k, 2], k4):
            status = DEGENERATE
            break
        big = 0.0
        for a in range(m2):
            tmp[a] = zeta[k, a] + h6 * (k1[a] + 2 * k2[a] + 2 * k3[a] + k4[a])
            if not isfinite(tmp[a]):
                big = DIVERGENCE_LIMIT * 2
            elif fabs(tmp[a]) > big:
                big = fabs(tmp[a])
        if big > DIVERGENCE_LIMIT:
            status = DIVERGED
            break
        for a in range(m2):
            zeta[k + 1, a] = tmp[a]
        done = k + 1
    return zeta_a, dzeta_a, xdel_a, ups_a, done, status
