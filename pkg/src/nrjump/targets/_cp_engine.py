"""Compiled chain loops for the change-point model.

Configurations are held as edges ``E[0..m+1]`` (E[0] = 0, E[m+1] = L),
heights ``H[0..m]`` and per-step event counts ``C[0..m]`` for m change
points.  Log densities decompose into per-step terms

    seg(c, h, d) = c log h - h d + log d + log Gamma_pdf(h)

plus a constant depending only on m, so every move changes O(1) terms.  On
a configuration y of model k+1 with merge index j, the bridge log gap is
``G[k] - local(y, j)``, where ``local`` is the change of the per-step sum when
steps j and j+1 merge, less the split log-Jacobian.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

VANILLA, ANNEALED, MULTIPATH = 0, 1, 2
PARAM, UP_MOVE, DOWN_MOVE = 1, 2, 3


@njit(cache=True)
def _count_upto(times, e, L):
    if e >= L:
        return times.shape[0]
    return np.searchsorted(times, e)


@njit(cache=True)
def _seg(c, h, d, hc, alpha, beta):
    lh = math.log(h)
    return c * lh - h * d + math.log(d) + hc + (alpha - 1.0) * lh - beta * h


@njit(cache=True)
def _local(E, H, C, j, hc, alpha, beta):
    d1 = E[j + 1] - E[j]
    d2 = E[j + 2] - E[j + 1]
    w = d1 / (d1 + d2)
    lhm = w * math.log(H[j]) + (1.0 - w) * math.log(H[j + 1])
    hm = math.exp(lhm)
    merged = _seg(C[j] + C[j + 1], hm, d1 + d2, hc, alpha, beta)
    log_jac = 2.0 * math.log(H[j] + H[j + 1]) - lhm
    return (merged - _seg(C[j], H[j], d1, hc, alpha, beta)
            - _seg(C[j + 1], H[j + 1], d2, hc, alpha, beta) - log_jac)


@njit(cache=True)
def log_joint_config(E, H, C, m, const, hc, alpha, beta):
    total = const[m]
    for j in range(m + 1):
        total += _seg(C[j], H[j], E[j + 1] - E[j], hc, alpha, beta)
    return total


@njit(cache=True)
def _log_u(rng):
    u = rng.random()
    if u == 0.0:
        return -np.inf
    return math.log(u)


@njit(cache=True)
def _split_into(E, H, C, m, times, L, rng, Ey, Hy, Cy):
    """Split configuration (m change points) at a fresh s*; returns j*."""
    while True:
        s = rng.random() * L
        ok = True
        for i in range(m + 2):
            if abs(E[i] - s) <= 1e-12 * L:
                ok = False
                break
        if ok:
            break
    u_p = rng.random()
    while u_p == 0.0:
        u_p = rng.random()
    j = np.searchsorted(E[:m + 2], s) - 1
    w = (s - E[j]) / (E[j + 1] - E[j])
    lr = math.log1p(-u_p) - math.log(u_p)
    h1 = H[j] * math.exp(-(1.0 - w) * lr)
    h2 = H[j] * math.exp(w * lr)
    c1 = _count_upto(times, s, L) - _count_upto(times, E[j], L)
    for i in range(j + 1):
        Ey[i] = E[i]
    Ey[j + 1] = s
    for i in range(j + 1, m + 2):
        Ey[i + 1] = E[i]
    for i in range(j):
        Hy[i] = H[i]
        Cy[i] = C[i]
    Hy[j] = h1
    Hy[j + 1] = h2
    Cy[j] = c1
    Cy[j + 1] = C[j] - c1
    for i in range(j + 1, m + 1):
        Hy[i + 1] = H[i]
        Cy[i + 1] = C[i]
    return j


@njit(cache=True)
def _merge_into(E, H, C, m, j, Ex, Hx, Cx):
    """Merge steps j, j+1 of configuration with m change points."""
    d1 = E[j + 1] - E[j]
    d2 = E[j + 2] - E[j + 1]
    w = d1 / (d1 + d2)
    hm = math.exp(w * math.log(H[j]) + (1.0 - w) * math.log(H[j + 1]))
    for i in range(j + 1):
        Ex[i] = E[i]
    for i in range(j + 2, m + 2):
        Ex[i - 1] = E[i]
    for i in range(j):
        Hx[i] = H[i]
        Cx[i] = C[i]
    Hx[j] = hm
    Cx[j] = C[j] + C[j + 1]
    for i in range(j + 2, m + 1):
        Hx[i - 1] = H[i]
        Cx[i - 1] = C[i]


@njit(cache=True)
def _copy(E, H, C, m, Eo, Ho, Co):
    for i in range(m + 2):
        Eo[i] = E[i]
    for i in range(m + 1):
        Ho[i] = H[i]
        Co[i] = C[i]


@njit(cache=True)
def _height_update(E, H, C, m, j, lam, bridge, rng, hc, alpha, beta):
    i = rng.integers(0, m + 1)
    step = rng.random() - 0.5
    old = H[i]
    new = old * math.exp(step)
    d = E[i + 1] - E[i]
    delta = _seg(C[i], new, d, hc, alpha, beta) - _seg(C[i], old, d, hc, alpha, beta) + step
    if bridge and lam < 1.0 and (i == j or i == j + 1):
        before = _local(E, H, C, j, hc, alpha, beta)
        H[i] = new
        delta += (1.0 - lam) * (_local(E, H, C, j, hc, alpha, beta) - before)
        H[i] = old
    if _log_u(rng) <= delta:
        H[i] = new


@njit(cache=True)
def _position_update(E, H, C, m, j, lam, bridge, rng, times, L, hc, alpha, beta):
    i = rng.integers(1, m + 1)
    a = E[i - 1]
    b = E[i + 1]
    s = a + (b - a) * rng.random()
    if s <= a or s >= b:
        return
    old_s = E[i]
    c_left, c_right = C[i - 1], C[i]
    cl = _count_upto(times, s, L) - _count_upto(times, a, L)
    cr = c_left + c_right - cl
    delta = (_seg(cl, H[i - 1], s - a, hc, alpha, beta) + _seg(cr, H[i], b - s, hc, alpha, beta)
             - _seg(c_left, H[i - 1], old_s - a, hc, alpha, beta)
             - _seg(c_right, H[i], b - old_s, hc, alpha, beta))
    touches = bridge and lam < 1.0 and (j == i - 2 or j == i - 1 or j == i)
    if touches:
        before = _local(E, H, C, j, hc, alpha, beta)
    E[i] = s
    C[i - 1] = cl
    C[i] = cr
    if touches:
        delta += (1.0 - lam) * (_local(E, H, C, j, hc, alpha, beta) - before)
    if not _log_u(rng) <= delta:
        E[i] = old_s
        C[i - 1] = c_left
        C[i] = c_right


@njit(cache=True)
def _jstar_update(E, H, C, m, j, lam, rng, hc, alpha, beta):
    jn = rng.integers(0, m)
    if jn == j or lam >= 1.0:
        return jn
    delta = (1.0 - lam) * (_local(E, H, C, jn, hc, alpha, beta) - _local(E, H, C, j, hc, alpha, beta))
    if _log_u(rng) <= delta:
        return jn
    return j


@njit(cache=True)
def param_update(E, H, C, m, rng, times, L, hc, alpha, beta):
    if m == 0 or rng.random() < 0.5:
        _height_update(E, H, C, m, -1, 1.0, False, rng, hc, alpha, beta)
    else:
        _position_update(E, H, C, m, -1, 1.0, False, rng, times, L, hc, alpha, beta)


@njit(cache=True)
def bridge_sweep_config(E, H, C, m, j, lam, rng, times, L, hc, alpha, beta):
    """Height, position and j* updates in random order; returns the new j*."""
    a = 0
    b = 1
    c = 2
    r = rng.integers(0, 6)
    if r == 1:
        b, c = 2, 1
    elif r == 2:
        a, b = 1, 0
    elif r == 3:
        a, b, c = 1, 2, 0
    elif r == 4:
        a, b, c = 2, 0, 1
    elif r == 5:
        a, c = 2, 0
    for move in (a, b, c):
        if move == 0:
            _height_update(E, H, C, m, j, lam, True, rng, hc, alpha, beta)
        elif move == 1:
            _position_update(E, H, C, m, j, lam, True, rng, times, L, hc, alpha, beta)
        else:
            j = _jstar_update(E, H, C, m, j, lam, rng, hc, alpha, beta)
    return j


@njit(cache=True)
def run_bridge(direction, kb, Es, Hs, Cs, lam, G, rng, times, L, hc, alpha, beta, Ey, Hy, Cy):
    """Bridge across boundary (kb, kb+1) from a configuration of the start model.

    The walk lives in (Ey, Hy, Cy) with kb+1 change points; returns (log r, j*).
    """
    m = kb + 1
    if direction == 1:
        j = _split_into(Es, Hs, Cs, kb, times, L, rng, Ey, Hy, Cy)
    else:
        _copy(Es, Hs, Cs, m, Ey, Hy, Cy)
        j = rng.integers(0, m)
    T = lam.shape[0] - 1
    log_r = (lam[1] - lam[0]) * (G[kb] - _local(Ey, Hy, Cy, j, hc, alpha, beta))
    for t in range(1, T):
        j = bridge_sweep_config(Ey, Hy, Cy, m, j, lam[t], rng, times, L, hc, alpha, beta)
        dl = lam[t + 1] - lam[t]
        if dl != 0.0:
            log_r += dl * (G[kb] - _local(Ey, Hy, Cy, j, hc, alpha, beta))
    return log_r, j


@njit(cache=True)
def _logsumexp(v, n):
    top = -np.inf
    for i in range(n):
        if v[i] > top:
            top = v[i]
    if top == -np.inf:
        return -np.inf
    if top == np.inf:
        return np.inf
    s = 0.0
    for i in range(n):
        s += math.exp(v[i] - top)
    return top + math.log(s)


@njit(cache=True)
def _settle(direction, kb, j, Ey, Hy, Cy, Eo, Ho, Co):
    """Copy a bridge endpoint into (Eo, Ho, Co); returns its model index."""
    if direction == 1:
        _copy(Ey, Hy, Cy, kb + 1, Eo, Ho, Co)
        return kb + 1
    _merge_into(Ey, Hy, Cy, kb + 1, j, Eo, Ho, Co)
    return kb


@njit(cache=True)
def _switch(sampler, direction, k, E, H, C, N, lam_up, lam_down, G, rng, times, L, hc, alpha,
            beta, PE, PH, PC, PJ, logs, TE, TH, TC):
    """One switch attempt from model k; on success the state arrays are overwritten."""
    kb = k if direction == 1 else k - 1
    lam = lam_up if direction == 1 else lam_down
    log_ua = _log_u(rng)
    if sampler == VANILLA:
        if direction == 1:
            j = _split_into(E, H, C, k, times, L, rng, PE[0], PH[0], PC[0])
            log_r = G[kb] - _local(PE[0], PH[0], PC[0], j, hc, alpha, beta)
        else:
            j = rng.integers(0, k)
            log_r = _local(E, H, C, j, hc, alpha, beta) - G[kb]
            if log_ua <= log_r:
                _copy(E, H, C, k, PE[0], PH[0], PC[0])
        if log_ua <= log_r:
            if direction == 1:
                _copy(PE[0], PH[0], PC[0], k + 1, E, H, C)
            else:
                _merge_into(PE[0], PH[0], PC[0], k, j, E, H, C)
            return True
        return False
    if sampler == ANNEALED or rng.random() <= 0.5:
        n_paths = 1 if sampler == ANNEALED else N
        for p in range(n_paths):
            logs[p], PJ[p] = run_bridge(direction, kb, E, H, C, lam, G, rng, times, L, hc, alpha,
                                        beta, PE[p], PH[p], PC[p])
        log_rbar = _logsumexp(logs, n_paths) - math.log(n_paths)
        if not log_ua <= log_rbar:
            return False
        pick = 0
        if n_paths > 1:
            top = -np.inf
            for p in range(n_paths):
                top = max(top, logs[p])
            total = 0.0
            for p in range(n_paths):
                total += math.exp(logs[p] - top)
            target = rng.random() * total
            acc = 0.0
            pick = n_paths - 1
            for p in range(n_paths):
                acc += math.exp(logs[p] - top)
                if target < acc:
                    pick = p
                    break
        _settle(direction, kb, PJ[pick], PE[pick], PH[pick], PC[pick], E, H, C)
        return True
    # Reverse branch: one forward bridge, then N-1 bridges back from its endpoint.
    log_f, jf = run_bridge(direction, kb, E, H, C, lam, G, rng, times, L, hc, alpha, beta,
                           PE[0], PH[0], PC[0])
    k_to = _settle(direction, kb, jf, PE[0], PH[0], PC[0], TE, TH, TC)
    logs[0] = -log_f
    lam_back = lam_down if direction == 1 else lam_up
    for p in range(1, N):
        logs[p], PJ[p] = run_bridge(-direction, kb, TE, TH, TC, lam_back, G, rng, times, L, hc,
                                    alpha, beta, PE[p], PH[p], PC[p])
    log_rbar_rev = _logsumexp(logs, N) - math.log(N)
    if log_ua <= -log_rbar_rev:
        _copy(TE, TH, TC, k_to, E, H, C)
        return True
    return False


@njit(cache=True)
def run_chain_engine(sampler, reversible, iterations, tau, N, lam_up, lam_down, k0, E0, H0, nu0,
                     rng, times, L, const, G, hc, alpha, beta, k_max,
                     out_k, out_move, out_acc, out_nu, E, H, C):
    """Outer loop; the final configuration is left in (E, H, C)."""
    cap = E.shape[0]
    PE = np.empty((N, cap))
    PH = np.empty((N, cap))
    PC = np.empty((N, cap), dtype=np.int64)
    PJ = np.zeros(N, dtype=np.int64)
    TE = np.empty(cap)
    TH = np.empty(cap)
    TC = np.empty(cap, dtype=np.int64)
    logs = np.empty(N)
    k = k0
    nu = nu0
    for i in range(k + 2):
        E[i] = E0[i]
    for i in range(k + 1):
        H[i] = H0[i]
        C[i] = _count_upto(times, E[i + 1], L) - _count_upto(times, E[i], L)
    out_k[0] = k
    out_move[0] = 0
    out_acc[0] = False
    out_nu[0] = nu
    for it in range(1, iterations + 1):
        if tau > 0.0 and (tau >= 1.0 or rng.random() <= tau):
            param_update(E, H, C, k, rng, times, L, hc, alpha, beta)
            out_move[it] = PARAM
            out_acc[it] = True
        else:
            if reversible:
                direction = 1 if rng.random() < 0.5 else -1
            else:
                direction = nu
            out_move[it] = UP_MOVE if direction == 1 else DOWN_MOVE
            k_to = k + direction
            ok = False
            if 0 <= k_to <= k_max:
                ok = _switch(sampler, direction, k, E, H, C, N, lam_up, lam_down, G, rng, times,
                             L, hc, alpha, beta, PE, PH, PC, PJ, logs, TE, TH, TC)
            if ok:
                k = k_to
            elif not reversible:
                nu = -nu
            out_acc[it] = ok
        out_k[it] = k
        out_nu[it] = nu
    return k
