"""Hot inner loops.

Every kernel has a plain Python/NumPy implementation; when numba is importable
and ``WHITTLEMAINT_NUMBA`` is not ``0`` the loop-style ones are compiled with
``@njit``.  The simulator has a separate replicate-vectorised NumPy path that
consumes the same uniforms and reproduces the compiled path bit for bit.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("WHITTLEMAINT_NUMBA", "1") != "0"


def _jit(fn):
    if USE_NUMBA:
        return njit(cache=True)(fn)
    return fn


def _wcharge_vi(V, K, C, W, ps, pa, pf, B, P1, beta, rho, tol, max_iter):
    """Gauss-Seidel value iteration, ascending in x, for the W-charge problem.

    Operation at x costs K(x) plus the discounted failure cost; intervention at
    x >= 1 costs C(x) + W and lands on y < x, discounted by ``rho``.  Sweeping
    upward means intervention branches see this sweep's values, so the sweep
    contracts by beta even when ``rho == 1``.  Updates ``V`` in place and
    returns the number of sweeps.
    """
    n = V.shape[0]
    for it in range(max_iter):
        diff = 0.0
        for x in range(n):
            nxt = V[x + 1] if x + 1 < n else 0.0
            op = K[x] + beta * (ps[x] * V[x] + pa[x] * nxt + pf[x] * (B + V[0]))
            best = op
            if x > 0:
                acc = 0.0
                for y in range(x):
                    acc += P1[x, y] * V[y]
                iv = C[x] + W + rho * acc
                if iv < best:
                    best = iv
            d = abs(best - V[x])
            if d > diff:
                diff = d
            V[x] = best
        if diff < tol:
            return it + 1
    return max_iter


def _stopping_vi(V, K, C, lam, ps, pa, pf, B, beta, tol, max_iter):
    """Optimal stopping with stop value C(z) and running cost K - lam*(1-beta)."""
    n = V.shape[0]
    shift = lam * (1.0 - beta)
    for it in range(max_iter):
        diff = 0.0
        for x in range(n):
            nxt = V[x + 1] if x + 1 < n else 0.0
            cont = K[x] - shift + beta * (ps[x] * V[x] + pa[x] * nxt + pf[x] * (B + V[0]))
            best = cont if cont < C[x] else C[x]
            d = abs(best - V[x])
            if d > diff:
                diff = d
            V[x] = best
        if diff < tol:
            return it + 1
    return max_iter


def _simulate_loops(states0, score, elig, pa, pf, cdf1, K, C, B, beta, R,
                    u_op, u_int, u_tie, cost, n_int, n_fail):
    """Fleet simulation, one replicate at a time.

    Shapes: states0 (reps, M); score/elig/pa/pf/K/C (M, n); cdf1 (M, n, n);
    B/beta (M,); u_* (reps, T, M).  Outputs are written into cost/n_int/n_fail.
    """
    reps, T, M = u_op.shape
    n = pa.shape[1]
    state = np.empty(M, dtype=np.int64)
    chosen = np.empty(M, dtype=np.bool_)
    disc = np.empty(M)
    for r in range(reps):
        for m in range(M):
            state[m] = states0[r, m]
            disc[m] = 1.0
        c_tot = 0.0
        ni = 0
        nf = 0
        for t in range(T):
            for m in range(M):
                chosen[m] = False
            for k in range(R):
                best_m = -1
                best_s = -np.inf
                best_u = -1.0
                for m in range(M):
                    x = state[m]
                    if chosen[m] or not elig[m, x]:
                        continue
                    s = score[m, x]
                    if s > best_s or (s == best_s and u_tie[r, t, m] > best_u):
                        best_m = m
                        best_s = s
                        best_u = u_tie[r, t, m]
                if best_m < 0:
                    break
                chosen[best_m] = True
            for m in range(M):
                x = state[m]
                if chosen[m]:
                    c_tot += C[m, x] * disc[m]
                    ni += 1
                    u = u_int[r, t, m]
                    y = 0
                    while y < n - 1 and u >= cdf1[m, x, y]:
                        y += 1
                    state[m] = y
                else:
                    c_tot += K[m, x] * disc[m]
                    u = u_op[r, t, m]
                    if u < pf[m, x]:
                        c_tot += B[m] * disc[m] * beta[m]
                        nf += 1
                        state[m] = 0
                    elif u < pf[m, x] + pa[m, x]:
                        state[m] = x + 1
                disc[m] *= beta[m]
        cost[r] = c_tot
        n_int[r] = ni
        n_fail[r] = nf


def _simulate_numpy(states0, score, elig, pa, pf, cdf1, K, C, B, beta, R,
                    u_op, u_int, u_tie, cost, n_int, n_fail):
    """Replicate-vectorised twin of ``_simulate_loops``."""
    reps, T, M = u_op.shape
    n = pa.shape[1]
    rows = np.arange(reps)
    mach = np.arange(M)
    state = states0.astype(np.int64).copy()
    disc = np.ones(M)
    c_tot = np.zeros(reps)
    ni = np.zeros(reps, dtype=np.int64)
    nf = np.zeros(reps, dtype=np.int64)
    for t in range(T):
        sc = score[mach, state]
        ok = elig[mach, state]
        ut = u_tie[:, t, :]
        chosen = np.zeros((reps, M), dtype=bool)
        for _ in range(R):
            avail = ok & ~chosen
            key = np.where(avail, sc, -np.inf)
            top = key.max(axis=1)
            cand = avail & (key == top[:, None])
            pick = np.argmax(np.where(cand, ut, -1.0), axis=1)
            has = cand.any(axis=1)
            chosen[rows[has], pick[has]] = True
        u_o = u_op[:, t, :]
        u_i = u_int[:, t, :]
        pfx = pf[mach, state]
        pax = pa[mach, state]
        fail = ~chosen & (u_o < pfx)
        adv = ~chosen & ~fail & (u_o < pfx + pax)
        cdf_rows = cdf1[mach, state]  # (reps, M, n)
        y_int = np.minimum((u_i[..., None] >= cdf_rows).sum(axis=2), n - 1)
        for m in range(M):
            x = state[:, m]
            ch = chosen[:, m]
            c_tot += np.where(ch, C[m, x], K[m, x]) * disc[m]
            f = fail[:, m]
            c_tot += np.where(f, B[m] * disc[m] * beta[m], 0.0)
        ni += chosen.sum(axis=1)
        nf += fail.sum(axis=1)
        state = np.where(chosen, y_int, np.where(fail, 0, np.where(adv, state + 1, state)))
        disc = disc * beta
    cost[:] = c_tot
    n_int[:] = ni
    n_fail[:] = nf


wcharge_vi = _jit(_wcharge_vi)
stopping_vi = _jit(_stopping_vi)
simulate_loops = _jit(_simulate_loops)
simulate_numpy = _simulate_numpy
simulate_chunk = simulate_loops if USE_NUMBA else simulate_numpy
