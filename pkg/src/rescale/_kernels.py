"""Compiled inner loops (numba).

Everything here works on plain arrays and on the ``FieldCode`` /
``KappaCode`` tuples produced by the Python-side field classes.  Random
numbers come from NumPy ``Generator`` objects passed in by the caller, so
the streams are the same ones NumPy would produce.
"""
from collections import namedtuple
import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi

KIND_EXP = 1

KAPPA_EXPLICIT = 0
KAPPA_FROM_PI = 1

METHOD_CLOCK = 0
METHOD_THINNING = 1

MU0_UNIFORM = 0
MU0_POINT = 1
MU0_CDF = 2
MU0_REJECT = 3

# lifetime return codes (negative "piece counts")
LIFE_OVERFLOW = -1
LIFE_NONFINITE = -2
LIFE_ABOVE_BOUND = -3

# engine status codes
STATUS_DONE = 0
STATUS_NEED_CAPACITY = 1
STATUS_SNAPSHOT = 2

KappaCode = namedtuple("KappaCode", ["mode", "offset", "field", "drift"])


@njit(cache=True)
def wrap_scalar(v):
    y = v % TWO_PI
    if y >= TWO_PI:
        y = 0.0
    return y


@njit(cache=True)
def field_eval(code, x, grad):
    """Value and Laplacian of a field at ``x``; the gradient is written to ``grad``."""
    modes = code.modes
    a = code.a
    b = code.b
    d = x.shape[0]
    for j in range(d):
        grad[j] = 0.0
    val = 0.0
    lap = 0.0
    for k in range(a.shape[0]):
        ph = 0.0
        k2 = 0.0
        for j in range(d):
            ph += modes[k, j] * x[j]
            k2 += modes[k, j] * modes[k, j]
        c = math.cos(ph)
        s = math.sin(ph)
        t = a[k] * c + b[k] * s
        val += t
        lap -= k2 * t
        dv = b[k] * c - a[k] * s
        if dv != 0.0:
            for j in range(d):
                grad[j] += dv * modes[k, j]
    if code.kind == KIND_EXP:
        g2 = 0.0
        for j in range(d):
            g2 += grad[j] * grad[j]
        e = code.scale * math.exp(val)
        lap = e * (lap + g2)
        for j in range(d):
            grad[j] *= e
        val = e
    return val, lap


@njit(cache=True)
def kappa_eval(kc, x, g1, g2):
    if kc.mode == KAPPA_EXPLICIT:
        v, _ = field_eval(kc.field, x, g1)
        return v + kc.offset
    p, lap_p = field_eval(kc.field, x, g1)
    _, lap_a = field_eval(kc.drift, x, g2)
    dot = 0.0
    for j in range(x.shape[0]):
        dot += g1[j] * g2[j]
    return 0.5 * (lap_p / p - 2.0 * dot / p - 2.0 * lap_a) + kc.offset


@njit(cache=True)
def euler_into(x, out, drift, has_drift, dt, sqdt, rng, grad):
    """One Euler step of dY = grad A dt + dW, consuming ``d`` normals."""
    d = x.shape[0]
    if has_drift:
        field_eval(drift, x, grad)
    for j in range(d):
        z = rng.standard_normal()
        step = sqdt * z
        if has_drift:
            step += grad[j] * dt
        out[j] = wrap_scalar(x[j] + step)


@njit(cache=True)
def lifetime_clock(x0, birth, dt, kc, has_drift, rng_d, rng_k, pieces, n0):
    """Clock method: Exp(1) threshold against the trapezoidal killing integral.

    Writes the grid states into ``pieces[n0:]`` and returns
    ``(n_states, kill_time)``; a negative count signals failure.
    """
    d = x0.shape[0]
    cap = pieces.shape[0]
    sqdt = math.sqrt(dt)
    x = x0.copy()
    xn = np.empty(d)
    g1 = np.empty(d)
    g2 = np.empty(d)
    xi = rng_k.standard_exponential()
    k0 = kappa_eval(kc, x, g1, g2)
    if not math.isfinite(k0):
        return LIFE_NONFINITE, 0.0
    integral = 0.0
    j = 0
    while True:
        if n0 + j >= cap:
            return LIFE_OVERFLOW, 0.0
        for c in range(d):
            pieces[n0 + j, c] = x[c]
        euler_into(x, xn, kc.drift, has_drift, dt, sqdt, rng_d, g1)
        k1 = kappa_eval(kc, xn, g1, g2)
        if not math.isfinite(k1):
            return LIFE_NONFINITE, 0.0
        inc = 0.5 * (k0 + k1) * dt
        if integral + inc >= xi:
            frac = (xi - integral) / inc
            return j + 1, birth + (j + frac) * dt
        integral += inc
        for c in range(d):
            x[c] = xn[c]
        k0 = k1
        j += 1


@njit(cache=True)
def lifetime_thinning(x0, birth, dt, kc, kbar, has_drift, rng_d, rng_k, pieces, n0):
    """Thinning method: rate-``kbar`` candidates accepted with prob kappa/kbar.

    kappa is read at the grid state at or below each candidate time.  The
    Euler step containing the kill is still drawn so that both methods use
    the diffusion stream identically.
    """
    d = x0.shape[0]
    cap = pieces.shape[0]
    sqdt = math.sqrt(dt)
    x = x0.copy()
    xn = np.empty(d)
    g1 = np.empty(d)
    g2 = np.empty(d)
    cand = birth + rng_k.standard_exponential() / kbar
    j = 0
    while True:
        if n0 + j >= cap:
            return LIFE_OVERFLOW, 0.0
        for c in range(d):
            pieces[n0 + j, c] = x[c]
        t_next = birth + (j + 1) * dt
        killed = False
        kx = -1.0
        while cand < t_next:
            if kx < 0.0:
                kx = kappa_eval(kc, x, g1, g2)
                if not math.isfinite(kx):
                    return LIFE_NONFINITE, 0.0
                if kx > kbar:
                    return LIFE_ABOVE_BOUND, 0.0
            if rng_k.random() * kbar < kx:
                killed = True
                break
            cand += rng_k.standard_exponential() / kbar
        euler_into(x, xn, kc.drift, has_drift, dt, sqdt, rng_d, g1)
        if killed:
            return j + 1, cand
        for c in range(d):
            x[c] = xn[c]
        j += 1


@njit(cache=True)
def schedule_g(t, k):
    if k == 0.0:
        return t
    return t ** (k + 1.0) / (k + 1.0)


@njit(cache=True)
def sample_mu0(kind, point, cdf_x, cdf_p, code, bound, rng, out):
    d = out.shape[0]
    if kind == MU0_UNIFORM:
        for j in range(d):
            out[j] = rng.random() * TWO_PI
    elif kind == MU0_POINT:
        for j in range(d):
            out[j] = point[j]
    elif kind == MU0_CDF:
        u = rng.random()
        i = np.searchsorted(cdf_p, u, side="right") - 1
        if i >= cdf_p.shape[0] - 1:
            i = cdf_p.shape[0] - 2
        w = cdf_p[i + 1] - cdf_p[i]
        frac = (u - cdf_p[i]) / w if w > 0.0 else 0.5
        out[0] = wrap_scalar(cdf_x[i] + frac * (cdf_x[i + 1] - cdf_x[i]))
    else:
        g = np.empty(d)
        while True:
            for j in range(d):
                out[j] = rng.random() * TWO_PI
            v, _ = field_eval(code, out, g)
            if rng.random() * bound < v:
                break


@njit(cache=True)
def locate_state(s, births, offsets, nl, npc, dt, pieces, out):
    """Copy the recorded state X_{s-} into ``out``."""
    i = np.searchsorted(births[:nl], s, side="right") - 1
    if i < 0:
        i = 0
    j = int((s - births[i]) / dt)
    stop = offsets[i + 1] if i + 1 < nl else npc
    n_i = stop - offsets[i]
    if j > n_i - 1:
        j = n_i - 1
    for c in range(out.shape[0]):
        out[c] = pieces[offsets[i] + j, c]


@njit(cache=True)
def piece_features(x, n_cell, bins, fam_modes, fam_kind, mom, marg_idx):
    """Cell index, marginal bin indices and test-function values at ``x``."""
    d = x.shape[0]
    cell = 0
    for j in range(d):
        ic = int(x[j] / TWO_PI * n_cell)
        if ic >= n_cell:
            ic = n_cell - 1
        cell = cell * n_cell + ic
        ib = int(x[j] / TWO_PI * bins)
        if ib >= bins:
            ib = bins - 1
        marg_idx[j] = ib
    for i in range(fam_kind.shape[0]):
        if fam_kind[i] == 0:
            mom[i] = 1.0
            continue
        ph = 0.0
        for j in range(d):
            ph += fam_modes[i, j] * x[j]
        if fam_kind[i] == 1:
            mom[i] = math.cos(ph)
        else:
            mom[i] = math.sin(ph)
    return cell


@njit(nogil=True, cache=True)
def engine_loop(kc, has_drift, dt, method, kbar, k_exp, r, t_end,
                mu0_kind, mu0_point, mu0_cdf_x, mu0_cdf_p, mu0_code, mu0_bound,
                rng_d, rng_k, rng_r,
                snap_times, fstate, istate, x,
                births, offsets, pieces, min_free,
                n_cell, bins, fam_modes, fam_kind,
                acc_cells, acc_marg, acc_mom,
                snap_cells, snap_marg, snap_mom, snap_g, snap_rebirths,
                stop_on_snapshot):
    """Alternate lifetimes and rebirths until ``t_end`` or until Python must act.

    ``fstate[0]`` is the current time (the next birth time); ``istate`` holds
    (pieces used, lifetimes used, next snapshot index, started flag, error).
    Returns one of the ``STATUS_*`` codes, or a negative lifetime code on
    failure.
    """
    d = x.shape[0]
    cap = pieces.shape[0]
    n_snap = snap_times.shape[0]
    n_terms = fam_kind.shape[0]
    mom = np.empty(n_terms)
    marg_idx = np.empty(d, dtype=np.int64)
    if istate[3] == 0:
        sample_mu0(mu0_kind, mu0_point, mu0_cdf_x, mu0_cdf_p, mu0_code, mu0_bound, rng_d, x)
        istate[3] = 1
    while True:
        t = fstate[0]
        npc = istate[0]
        nl = istate[1]
        if t >= t_end:
            return STATUS_DONE
        if cap - npc < min_free or nl >= births.shape[0]:
            return STATUS_NEED_CAPACITY
        births[nl] = t
        offsets[nl] = npc
        if method == METHOD_CLOCK:
            n_new, kill = lifetime_clock(x, t, dt, kc, has_drift, rng_d, rng_k, pieces, npc)
        else:
            n_new, kill = lifetime_thinning(x, t, dt, kc, kbar, has_drift, rng_d, rng_k, pieces, npc)
        if n_new < 0:
            istate[4] = n_new
            return n_new
        passed = False
        si = istate[2]
        for j in range(n_new):
            a = t + j * dt
            if a >= t_end:
                break
            e = t + (j + 1) * dt
            if e > kill:
                e = kill
            if e > t_end:
                e = t_end
            cell = piece_features(pieces[npc + j], n_cell, bins, fam_modes, fam_kind, mom, marg_idx)
            while si < n_snap and snap_times[si] <= e:
                tau = snap_times[si]
                w = schedule_g(tau, k_exp) - schedule_g(a, k_exp)
                acc_cells[cell] += w
                for c in range(d):
                    acc_marg[c, marg_idx[c]] += w
                for i in range(n_terms):
                    acc_mom[i] += w * mom[i]
                a = tau
                snap_cells[si, :] = acc_cells
                snap_marg[si, :, :] = acc_marg
                snap_mom[si, :] = acc_mom
                snap_g[si] = schedule_g(tau, k_exp)
                snap_rebirths[si] = nl
                si += 1
                passed = True
            w = schedule_g(e, k_exp) - schedule_g(a, k_exp)
            if w != 0.0:
                acc_cells[cell] += w
                for c in range(d):
                    acc_marg[c, marg_idx[c]] += w
                for i in range(n_terms):
                    acc_mom[i] += w * mom[i]
        istate[2] = si
        npc += n_new
        nl += 1
        istate[0] = npc
        istate[1] = nl
        fstate[0] = kill
        if kill < t_end:
            gk = schedule_g(kill, k_exp)
            if rng_r.random() < r / (r + gk):
                sample_mu0(mu0_kind, mu0_point, mu0_cdf_x, mu0_cdf_p, mu0_code, mu0_bound, rng_r, x)
            else:
                v = rng_r.random()
                if k_exp == 0.0:
                    s = kill * v
                else:
                    s = kill * v ** (1.0 / (k_exp + 1.0))
                locate_state(s, births, offsets, nl, npc, dt, pieces, x)
        if passed and stop_on_snapshot:
            return STATUS_SNAPSHOT
