"""Pure-Python Kalman filter / RTS smoother for the Matern-5/2 state space.

Reference implementation and fallback for the compiled ``_ssm_ext`` module;
both expose the same four functions with identical semantics. The state is
(f, f', f'') at unit marginal variance; ``eta`` is the observation noise
variance on that scale.
"""

from __future__ import annotations

import math

import numpy as np


def stationary_cov(lam: float) -> np.ndarray:
    kappa = lam * lam / 3.0
    return np.array(
        [
            [1.0, 0.0, -kappa],
            [0.0, kappa, 0.0],
            [-kappa, 0.0, lam**4],
        ]
    )


def transition(dt, lam: float):
    """Transition G(dt) and process noise W(dt) for scalar or array ``dt``.

    G is exp(F dt) for the companion matrix F with triple eigenvalue -lam,
    written as exp(-lam dt) (I + dt N + dt^2/2 N^2) with N = F + lam I
    nilpotent. W = Pinf - G Pinf G'.
    """
    dt = np.asarray(dt, dtype=float)
    l2, l3, l4 = lam * lam, lam**3, lam**4
    e = np.exp(-lam * dt)
    h = 0.5 * dt * dt
    G = np.empty(dt.shape + (3, 3))
    G[..., 0, 0] = e * (1.0 + dt * lam + h * l2)
    G[..., 0, 1] = e * (dt + 2.0 * h * lam)
    G[..., 0, 2] = e * h
    G[..., 1, 0] = e * (-h * l3)
    G[..., 1, 1] = e * (1.0 + dt * lam - 2.0 * h * l2)
    G[..., 1, 2] = e * (dt - h * lam)
    G[..., 2, 0] = e * (-dt * l3 + h * l4)
    G[..., 2, 1] = e * (-3.0 * dt * l2 + 2.0 * h * l3)
    G[..., 2, 2] = e * (1.0 - 2.0 * dt * lam + h * l2)
    P = stationary_cov(lam)
    W = P - G @ P @ np.swapaxes(G, -1, -2)
    W = 0.5 * (W + np.swapaxes(W, -1, -2))
    return G, W


def _exp_moments(dt: float, lam: float) -> list[float]:
    """J_m = int_0^dt s^m exp(-2 lam s) ds for m = 0..4, without cancellation."""
    x = 2.0 * lam * dt
    out = []
    for m in range(5):
        scale = math.factorial(m) / (2.0 * lam) ** (m + 1)
        if x < 30.0:
            # e^-x sum_{j>m} x^j / j!
            term = math.exp(-x) * x ** (m + 1) / math.factorial(m + 1)
            total, j = 0.0, m + 1
            while term > 1e-17 * total or total == 0.0:
                total += term
                j += 1
                term *= x / j
                if term == 0.0:
                    break
            out.append(scale * total)
        else:
            head = sum(x**j / math.factorial(j) for j in range(m + 1))
            out.append(scale * (1.0 - math.exp(-x) * head))
    return out


def process_noise(dt: float, lam: float) -> np.ndarray:
    """W(dt) from its defining integral; accurate for small dt, unlike Pinf - G Pinf G'.

    exp(F s) L = exp(-lam s) p(s) with p = (s^2/2, s - lam s^2/2, 1 - 2 lam s + lam^2 s^2/2),
    and the diffusion constant 16 lam^5 / 3 gives unit stationary variance.
    """
    J = _exp_moments(dt, lam)
    p = [(0.0, 0.0, 0.5), (0.0, 1.0, -0.5 * lam), (1.0, -2.0 * lam, 0.5 * lam * lam)]
    q = 16.0 * lam**5 / 3.0
    W = np.empty((3, 3))
    for a in range(3):
        for b in range(a, 3):
            s = 0.0
            for i in range(3):
                for j in range(3):
                    s += p[a][i] * p[b][j] * J[i + j]
            W[a, b] = W[b, a] = q * s
    return W


def _forward(t, y, observed, lam, eta, keep=False):
    n = len(t)
    dts = np.diff(t)
    Gs, Ws = transition(dts, lam)
    m = np.zeros(3)
    P = stationary_cov(lam)
    e_out = np.empty(n)
    q_out = np.empty(n)
    if keep:
        mp, Pp = np.empty((n, 3)), np.empty((n, 3, 3))
        mf, Pf = np.empty((n, 3)), np.empty((n, 3, 3))
    for i in range(n):
        if i > 0 and dts[i - 1] > 0:
            G = Gs[i - 1]
            m = G @ m
            P = G @ P @ G.T + Ws[i - 1]
            P = 0.5 * (P + P.T)
        if keep:
            mp[i], Pp[i] = m, P
        if observed is None or observed[i]:
            q = P[0, 0] + eta
            e = y[i] - m[0]
            k = P[:, 0] / q
            m = m + k * e
            P = P - np.outer(k, k) * q
            e_out[i], q_out[i] = e, q
        if keep:
            mf[i], Pf[i] = m, P
    if keep:
        return e_out, q_out, (Gs, dts, mp, Pp, mf, Pf)
    return e_out, q_out


def loglik_terms(t, y, lam, eta):
    """Return (S2, logdet) = (y' R~^-1 y, log|R~|) by forward filtering."""
    e, q = _forward(t, y, None, lam, eta)
    return float(np.sum(e * e / q)), float(np.sum(np.log(q)))


def innovations(t, y, lam, eta):
    return _forward(t, y, None, lam, eta)


def smooth(t, y, observed, lam, eta):
    """Smoothed mean and variance of f at every time; unobserved entries are missing."""
    n = len(t)
    if n == 0:
        return np.empty(0), np.empty(0)
    _, _, (Gs, dts, mp, Pp, mf, Pf) = _forward(t, y, observed, lam, eta, keep=True)
    mean = np.empty(n)
    var = np.empty(n)
    ms, Ps = mf[-1], Pf[-1]
    mean[-1], var[-1] = ms[0], Ps[0, 0]
    for i in range(n - 2, -1, -1):
        if dts[i] > 0:
            J = np.linalg.solve(Pp[i + 1], Gs[i] @ Pf[i]).T
            ms = mf[i] + J @ (ms - mp[i + 1])
            Ps = Pf[i] + J @ (Ps - Pp[i + 1]) @ J.T
            Ps = 0.5 * (Ps + Ps.T)
        mean[i], var[i] = ms[0], Ps[0, 0]
    return mean, var


def _psd_cholesky(A):
    L = np.zeros((3, 3))
    for c in range(3):
        s = A[c, c] - L[c, :c] @ L[c, :c]
        if s <= 0.0:
            continue
        L[c, c] = math.sqrt(s)
        for r in range(c + 1, 3):
            L[r, c] = (A[r, c] - L[r, :c] @ L[c, :c]) / L[c, c]
    return L


def simulate(t, lam, z):
    """Draw f(t) from the unit-variance prior given standard normals ``z`` (n x 3)."""
    n = len(t)
    f = np.empty(n)
    if n == 0:
        return f
    dts = np.diff(t)
    Gs, _ = transition(dts, lam)
    x = _psd_cholesky(stationary_cov(lam)) @ z[0]
    f[0] = x[0]
    for i in range(1, n):
        if dts[i - 1] > 0:
            x = Gs[i - 1] @ x + _psd_cholesky(process_noise(dts[i - 1], lam)) @ z[i]
        f[i] = x[0]
    return f
