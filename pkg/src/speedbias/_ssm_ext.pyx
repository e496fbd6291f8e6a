# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Kalman filter / RTS smoother for the Matern-5/2 state-space GP.

Mirrors ``_ssm_py`` exactly; the state is (f, f', f'') at unit marginal
variance and the observation noise variance is the nugget ratio ``eta``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()


cdef inline void _stationary(double lam, double P[3][3]) noexcept nogil:
    cdef double kappa = lam * lam / 3.0
    P[0][0] = 1.0;    P[0][1] = 0.0;   P[0][2] = -kappa
    P[1][0] = 0.0;    P[1][1] = kappa; P[1][2] = 0.0
    P[2][0] = -kappa; P[2][1] = 0.0;   P[2][2] = lam * lam * lam * lam


cdef inline void _transition(double dt, double lam, double G[3][3], double W[3][3],
                             double Pinf[3][3]) noexcept nogil:
    # G = exp(-lam dt) (I + dt N + dt^2/2 N^2), N = F + lam I nilpotent
    cdef double e = exp(-lam * dt)
    cdef double l2 = lam * lam
    cdef double l3 = l2 * lam
    cdef double l4 = l3 * lam
    cdef double h = 0.5 * dt * dt
    cdef double T[3][3]
    cdef int i, j, a
    cdef double s
    G[0][0] = e * (1.0 + dt * lam + h * l2)
    G[0][1] = e * (dt + h * 2.0 * lam)
    G[0][2] = e * (h)
    G[1][0] = e * (-h * l3)
    G[1][1] = e * (1.0 + dt * lam - h * 2.0 * l2)
    G[1][2] = e * (dt - h * lam)
    G[2][0] = e * (-dt * l3 + h * l4)
    G[2][1] = e * (-dt * 3.0 * l2 + h * 2.0 * l3)
    G[2][2] = e * (1.0 - 2.0 * dt * lam + h * l2)
    for i in range(3):
        for j in range(3):
            s = 0.0
            for a in range(3):
                s += G[i][a] * Pinf[a][j]
            T[i][j] = s
    for i in range(3):
        for j in range(3):
            s = 0.0
            for a in range(3):
                s += T[i][a] * G[j][a]
            W[i][j] = Pinf[i][j] - s
    for i in range(3):
        for j in range(i + 1, 3):
            s = 0.5 * (W[i][j] + W[j][i])
            W[i][j] = s
            W[j][i] = s


cdef void _process_noise(double dt, double lam, double W[3][3]) noexcept nogil:
    # W(dt) from its defining integral; see _ssm_py.process_noise
    cdef double x = 2.0 * lam * dt
    cdef double J[5]
    cdef double fact[6]
    cdef double p[3][3]
    cdef double scale, term, total, head, xj, s, q
    cdef int m, j, a, b, i, k
    fact[0] = 1.0
    for m in range(1, 6):
        fact[m] = fact[m - 1] * m
    for m in range(5):
        scale = fact[m]
        for j in range(m + 1):
            scale /= 2.0 * lam
        if x < 30.0:
            term = exp(-x)
            for j in range(m + 1):
                term *= x
            term /= fact[m + 1]
            total = 0.0
            j = m + 1
            while term > 1e-17 * total or total == 0.0:
                total += term
                j += 1
                term *= x / j
                if term == 0.0:
                    break
            J[m] = scale * total
        else:
            head = 0.0
            xj = 1.0
            for j in range(m + 1):
                head += xj / fact[j]
                xj *= x
            J[m] = scale * (1.0 - exp(-x) * head)
    p[0][0] = 0.0; p[0][1] = 0.0;         p[0][2] = 0.5
    p[1][0] = 0.0; p[1][1] = 1.0;         p[1][2] = -0.5 * lam
    p[2][0] = 1.0; p[2][1] = -2.0 * lam;  p[2][2] = 0.5 * lam * lam
    q = 16.0 * lam * lam * lam * lam * lam / 3.0
    for a in range(3):
        for b in range(a, 3):
            s = 0.0
            for i in range(3):
                for k in range(3):
                    s += p[a][i] * p[b][k] * J[i + k]
            W[a][b] = q * s
            W[b][a] = q * s


cdef inline void _predict(double G[3][3], double W[3][3], double m[3], double P[3][3]) noexcept nogil:
    cdef double mm[3]
    cdef double T[3][3]
    cdef int i, j, a
    cdef double s
    for i in range(3):
        s = 0.0
        for a in range(3):
            s += G[i][a] * m[a]
        mm[i] = s
    for i in range(3):
        m[i] = mm[i]
        for j in range(3):
            s = 0.0
            for a in range(3):
                s += G[i][a] * P[a][j]
            T[i][j] = s
    for i in range(3):
        for j in range(i, 3):
            s = W[i][j]
            for a in range(3):
                s += T[i][a] * G[j][a]
            P[i][j] = s
            P[j][i] = s


cdef inline void _update(double y, double eta, double m[3], double P[3][3],
                         double *e_out, double *q_out) noexcept nogil:
    cdef double q = P[0][0] + eta
    cdef double e = y - m[0]
    cdef double k[3]
    cdef int i, j
    for i in range(3):
        k[i] = P[i][0] / q
    for i in range(3):
        m[i] += k[i] * e
    for i in range(3):
        for j in range(i, 3):
            P[i][j] = P[i][j] - k[i] * k[j] * q
            P[j][i] = P[i][j]
    e_out[0] = e
    q_out[0] = q


cdef inline void _chol3(double A[3][3], double L[3][3]) noexcept nogil:
    # lower Cholesky factor; non-positive pivots (rounding on PSD input) give zero columns
    cdef int r, c, a
    cdef double s
    for r in range(3):
        for c in range(3):
            L[r][c] = 0.0
    for c in range(3):
        s = A[c][c]
        for a in range(c):
            s -= L[c][a] * L[c][a]
        if s <= 0.0:
            continue
        L[c][c] = sqrt(s)
        for r in range(c + 1, 3):
            s = A[r][c]
            for a in range(c):
                s -= L[r][a] * L[c][a]
            L[r][c] = s / L[c][c]


cdef inline void _inv3(double A[3][3], double B[3][3]) noexcept nogil:
    cdef double det
    B[0][0] = A[1][1] * A[2][2] - A[1][2] * A[2][1]
    B[0][1] = A[0][2] * A[2][1] - A[0][1] * A[2][2]
    B[0][2] = A[0][1] * A[1][2] - A[0][2] * A[1][1]
    B[1][0] = A[1][2] * A[2][0] - A[1][0] * A[2][2]
    B[1][1] = A[0][0] * A[2][2] - A[0][2] * A[2][0]
    B[1][2] = A[0][2] * A[1][0] - A[0][0] * A[1][2]
    B[2][0] = A[1][0] * A[2][1] - A[1][1] * A[2][0]
    B[2][1] = A[0][1] * A[2][0] - A[0][0] * A[2][1]
    B[2][2] = A[0][0] * A[1][1] - A[0][1] * A[1][0]
    det = A[0][0] * B[0][0] + A[0][1] * B[1][0] + A[0][2] * B[2][0]
    cdef int i, j
    for i in range(3):
        for j in range(3):
            B[i][j] /= det


def loglik_terms(double[::1] t, double[::1] y, double lam, double eta):
    """Return (S2, logdet) = (y' R~^-1 y, log|R~|) by forward filtering."""
    cdef Py_ssize_t n = t.shape[0], i
    cdef double Pinf[3][3]
    cdef double G[3][3]
    cdef double W[3][3]
    cdef double P[3][3]
    cdef double m[3]
    cdef double e, q, dt
    cdef double s2 = 0.0, logdet = 0.0
    cdef int a, b
    _stationary(lam, Pinf)
    with nogil:
        for a in range(3):
            m[a] = 0.0
            for b in range(3):
                P[a][b] = Pinf[a][b]
        for i in range(n):
            if i > 0:
                dt = t[i] - t[i - 1]
                if dt > 0:
                    _transition(dt, lam, G, W, Pinf)
                    _predict(G, W, m, P)
            _update(y[i], eta, m, P, &e, &q)
            s2 += e * e / q
            logdet += log(q)
    return s2, logdet


def innovations(double[::1] t, double[::1] y, double lam, double eta):
    """One-step prediction errors and their variances (unit signal variance)."""
    cdef Py_ssize_t n = t.shape[0], i
    out_e = np.empty(n)
    out_q = np.empty(n)
    cdef double[::1] ev = out_e
    cdef double[::1] qv = out_q
    cdef double Pinf[3][3]
    cdef double G[3][3]
    cdef double W[3][3]
    cdef double P[3][3]
    cdef double m[3]
    cdef double e, q, dt
    cdef int a, b
    _stationary(lam, Pinf)
    with nogil:
        for a in range(3):
            m[a] = 0.0
            for b in range(3):
                P[a][b] = Pinf[a][b]
        for i in range(n):
            if i > 0:
                dt = t[i] - t[i - 1]
                if dt > 0:
                    _transition(dt, lam, G, W, Pinf)
                    _predict(G, W, m, P)
            _update(y[i], eta, m, P, &e, &q)
            ev[i] = e
            qv[i] = q
    return out_e, out_q


def smooth(double[::1] t, double[::1] y, cnp.uint8_t[::1] observed, double lam, double eta):
    """Smoothed mean and variance of f at every time (unit signal variance).

    Entries with ``observed == 0`` are treated as missing: the filter only
    predicts through them.
    """
    cdef Py_ssize_t n = t.shape[0], i
    cdef Py_ssize_t r, c, a
    mf_arr = np.empty((n, 3))
    Pf_arr = np.empty((n, 3, 3))
    mp_arr = np.empty((n, 3))
    Pp_arr = np.empty((n, 3, 3))
    out_mean = np.empty(n)
    out_var = np.empty(n)
    cdef double[:, ::1] mf = mf_arr
    cdef double[:, :, ::1] Pf = Pf_arr
    cdef double[:, ::1] mp = mp_arr
    cdef double[:, :, ::1] Pp = Pp_arr
    cdef double[::1] om = out_mean
    cdef double[::1] ov = out_var
    cdef double Pinf[3][3]
    cdef double G[3][3]
    cdef double W[3][3]
    cdef double P[3][3]
    cdef double A[3][3]
    cdef double Ainv[3][3]
    cdef double J[3][3]
    cdef double T[3][3]
    cdef double m[3]
    cdef double ms[3]
    cdef double Ps[3][3]
    cdef double dm[3]
    cdef double dP[3][3]
    cdef double e, q, dt, s
    if n == 0:
        return out_mean, out_var
    _stationary(lam, Pinf)
    with nogil:
        for r in range(3):
            m[r] = 0.0
            for c in range(3):
                P[r][c] = Pinf[r][c]
        for i in range(n):
            if i > 0:
                dt = t[i] - t[i - 1]
                if dt > 0:
                    _transition(dt, lam, G, W, Pinf)
                    _predict(G, W, m, P)
            for r in range(3):
                mp[i, r] = m[r]
                for c in range(3):
                    Pp[i, r, c] = P[r][c]
            if observed[i]:
                _update(y[i], eta, m, P, &e, &q)
            for r in range(3):
                mf[i, r] = m[r]
                for c in range(3):
                    Pf[i, r, c] = P[r][c]

        for r in range(3):
            ms[r] = m[r]
            for c in range(3):
                Ps[r][c] = P[r][c]
        om[n - 1] = ms[0]
        ov[n - 1] = Ps[0][0]
        i = n - 2
        while i >= 0:
            dt = t[i + 1] - t[i]
            if dt > 0:
                _transition(dt, lam, G, W, Pinf)
                # J = Pf[i] G' Pp[i+1]^-1
                for r in range(3):
                    for c in range(3):
                        A[r][c] = Pp[i + 1, r, c]
                _inv3(A, Ainv)
                for r in range(3):
                    for c in range(3):
                        s = 0.0
                        for a in range(3):
                            s += Pf[i, r, a] * G[c][a]
                        T[r][c] = s
                for r in range(3):
                    for c in range(3):
                        s = 0.0
                        for a in range(3):
                            s += T[r][a] * Ainv[a][c]
                        J[r][c] = s
                for r in range(3):
                    dm[r] = ms[r] - mp[i + 1, r]
                    for c in range(3):
                        dP[r][c] = Ps[r][c] - Pp[i + 1, r, c]
                for r in range(3):
                    s = mf[i, r]
                    for a in range(3):
                        s += J[r][a] * dm[a]
                    ms[r] = s
                # Ps = Pf[i] + J dP J'
                for r in range(3):
                    for c in range(3):
                        s = 0.0
                        for a in range(3):
                            s += J[r][a] * dP[a][c]
                        T[r][c] = s
                for r in range(3):
                    for c in range(r, 3):
                        s = Pf[i, r, c]
                        for a in range(3):
                            s += T[r][a] * J[c][a]
                        Ps[r][c] = s
                        Ps[c][r] = s
            # dt == 0: states coincide, smoothed moments carry over unchanged
            om[i] = ms[0]
            ov[i] = Ps[0][0]
            i -= 1
    return out_mean, out_var


def simulate(double[::1] t, double lam, double[:, ::1] z):
    """Draw f(t) from the unit-variance prior given standard normals ``z`` (n x 3)."""
    cdef Py_ssize_t n = t.shape[0], i
    out = np.empty(n)
    cdef double[::1] f = out
    cdef double Pinf[3][3]
    cdef double G[3][3]
    cdef double W[3][3]
    cdef double L[3][3]
    cdef double x[3]
    cdef double xn[3]
    cdef double dt, s
    cdef int r, c, a
    if n == 0:
        return out
    _stationary(lam, Pinf)
    with nogil:
        _chol3(Pinf, L)
        for r in range(3):
            s = 0.0
            for a in range(r + 1):
                s += L[r][a] * z[0, a]
            x[r] = s
        f[0] = x[0]
        for i in range(1, n):
            dt = t[i] - t[i - 1]
            if dt > 0:
                _transition(dt, lam, G, W, Pinf)
                _process_noise(dt, lam, W)
                _chol3(W, L)
                for r in range(3):
                    s = 0.0
                    for a in range(3):
                        s += G[r][a] * x[a]
                    for a in range(r + 1):
                        s += L[r][a] * z[i, a]
                    xn[r] = s
                for r in range(3):
                    x[r] = xn[r]
            f[i] = x[0]
    return out
