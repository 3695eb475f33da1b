"""Compiled inner loops for the Glauber and coupled chains.

All randomness is passed in as pre-drawn uniforms so a kernel consumes the
exact same stream as the step-by-step Python API.  One chain step uses two
uniforms (player, resource); one coupled step uses four (player, coupling
branch, first draw, second draw).
"""

import numpy as np
from numba import njit

_RESYNC = 4096


@njit(cache=True)
def potential_nb(c, w, f, ce, x):
    n, k = w.shape
    total = 0.0
    for j in range(n):
        for l in range(k):
            d = ce
            for i in range(n):
                if x[i] == l and c[i, j] < d:
                    d = c[i, j]
            total += w[j, l] * d
    for i in range(n):
        total += f[i, x[i]]
    return total


@njit(cache=True)
def cost_profile_nb(c, w, f, ce, x, i, out):
    """Fill ``out[o] = c_i(o, x_{-i})``."""
    n, k = w.shape
    g_total = 0.0
    for l in range(k):
        g = 0.0
        for j in range(n):
            d = ce
            for h in range(n):
                if h != i and x[h] == l and c[h, j] < d:
                    d = c[h, j]
            gap = d - c[i, j]
            if gap > 0.0:
                g += w[j, l] * gap
        out[l] = -g
        g_total += g
    for l in range(k):
        out[l] += g_total + f[i, l]


@njit(cache=True)
def softmax_nb(costs, beta, out):
    k = costs.shape[0]
    lo = costs[0]
    for l in range(1, k):
        if costs[l] < lo:
            lo = costs[l]
    s = 0.0
    for l in range(k):
        out[l] = np.exp(-beta * (costs[l] - lo))
        s += out[l]
    for l in range(k):
        out[l] /= s


@njit(cache=True)
def draw_nb(p, u):
    """Inverse-CDF draw; never returns a zero-probability index."""
    k = p.shape[0]
    target = u
    acc = 0.0
    last = -1
    for l in range(k):
        if p[l] > 0.0:
            last = l
            acc += p[l]
            if acc > target:
                return l
    return last


@njit(cache=True)
def coupling_nb(mu, nu, u1, u2, u3, work):
    """Maximal coupling draw of ``(a ~ mu, b ~ nu)``."""
    k = mu.shape[0]
    overlap = 0.0
    for l in range(k):
        m = mu[l] if mu[l] < nu[l] else nu[l]
        work[l] = m
        overlap += m
    if u1 < overlap:
        a = draw_nb(work, u2 * overlap)
        return a, a
    ra = 0.0
    rb = 0.0
    for l in range(k):
        ra += max(mu[l] - nu[l], 0.0)
        rb += max(nu[l] - mu[l], 0.0)
    if ra <= 0.0 or rb <= 0.0:
        a = draw_nb(work, u2 * overlap)
        return a, a
    for l in range(k):
        work[l] = max(mu[l] - nu[l], 0.0)
    a = draw_nb(work, u2 * ra)
    for l in range(k):
        work[l] = max(nu[l] - mu[l], 0.0)
    b = draw_nb(work, u3 * rb)
    return a, b


@njit(cache=True)
def glauber_nb(c, w, f, ce, beta, x, U, t0, stride, target,
               rec_t, rec_player, rec_old, rec_new, rec_phi,
               best_state, counts, powers):
    """Run ``len(U)`` Glauber steps in place on ``x``, starting at time ``t0``.

    Returns ``(n_records, best_phi, best_t, hit_time, final_phi)``.
    ``counts`` (if non-empty) accumulates visits per encoded state; the
    initial state and record 0 are only written when ``t0 == 0``.
    """
    n, k = w.shape
    T = U.shape[0]
    costs = np.empty(k)
    p = np.empty(k)
    phi = potential_nb(c, w, f, ce, x)
    best = phi
    best_t = t0
    best_state[:] = x
    hit = -1
    if phi <= target:
        hit = t0
    count_states = counts.shape[0] > 0
    code = 0
    if count_states:
        for i in range(n):
            code += x[i] * powers[i]
    nrec = 0
    if t0 == 0:
        if count_states:
            counts[code] += 1
        rec_t[0] = 0
        rec_player[0] = -1
        rec_old[0] = -1
        rec_new[0] = -1
        rec_phi[0] = phi
        nrec = 1
    for s in range(T):
        t = t0 + s
        i = int(U[s, 0] * n)
        if i >= n:
            i = n - 1
        cost_profile_nb(c, w, f, ce, x, i, costs)
        softmax_nb(costs, beta, p)
        old = x[i]
        new = draw_nb(p, U[s, 1])
        if new != old:
            phi += costs[new] - costs[old]
            x[i] = new
            if count_states:
                code += (new - old) * powers[i]
        if (t + 1) % _RESYNC == 0:
            phi = potential_nb(c, w, f, ce, x)
        if count_states:
            counts[code] += 1
        if phi < best:
            best = phi
            best_t = t + 1
            best_state[:] = x
        if hit < 0 and phi <= target:
            hit = t + 1
        if (t + 1) % stride == 0:
            rec_t[nrec] = t + 1
            rec_player[nrec] = i
            rec_old[nrec] = old
            rec_new[nrec] = new
            rec_phi[nrec] = phi
            nrec += 1
    return nrec, best, best_t, hit, phi


@njit(cache=True)
def coupled_nb(c, w, f, ce, beta, x, y, U, rho, stop_at_coalescence):
    """Coupled Glauber chains updated in place; returns ``(tau, steps)``.

    ``rho[t]`` receives the Hamming distance after ``t`` steps; ``tau`` is
    the first ``t`` with ``rho[t] == 0`` or -1.
    """
    n, k = w.shape
    T = U.shape[0]
    cx = np.empty(k)
    cy = np.empty(k)
    mu = np.empty(k)
    nu = np.empty(k)
    work = np.empty(k)
    r = 0
    for i in range(n):
        if x[i] != y[i]:
            r += 1
    rho[0] = r
    tau = 0 if r == 0 else -1
    if tau == 0 and stop_at_coalescence:
        return tau, 0
    for t in range(T):
        i = int(U[t, 0] * n)
        if i >= n:
            i = n - 1
        cost_profile_nb(c, w, f, ce, x, i, cx)
        softmax_nb(cx, beta, mu)
        if r == 0:
            for l in range(k):
                nu[l] = mu[l]
        else:
            cost_profile_nb(c, w, f, ce, y, i, cy)
            softmax_nb(cy, beta, nu)
        a, b = coupling_nb(mu, nu, U[t, 1], U[t, 2], U[t, 3], work)
        before = 1 if x[i] != y[i] else 0
        x[i] = a
        y[i] = b
        after = 1 if a != b else 0
        r += after - before
        rho[t + 1] = r
        if r == 0 and tau < 0:
            tau = t + 1
            if stop_at_coalescence:
                return tau, t + 1
    return tau, T


@njit(cache=True, nogil=True)
def coupled_batch_nb(c, w, f, ce, beta, x0, y0, U, stop_at_coalescence,
                     taus, final_rho):
    """Independent coupled replicas; replica ``r`` consumes ``U[r]``."""
    R, T = U.shape[0], U.shape[1]
    n = x0.shape[0]
    rho = np.empty(T + 1, dtype=np.int64)
    x = np.empty(n, dtype=np.int64)
    y = np.empty(n, dtype=np.int64)
    for r in range(R):
        x[:] = x0
        y[:] = y0
        tau, steps = coupled_nb(c, w, f, ce, beta, x, y, U[r], rho,
                                stop_at_coalescence)
        taus[r] = tau
        final_rho[r] = rho[steps]
