"""
Deterministic reference computations on a discretised torus
===========================================================

The killed generator ``L = -1/2 Lap - grad A . grad + kappa`` is discretised
with periodic central differences on ``n`` cells per axis.  Measures are
probability vectors of cell masses and act on matrices from the left, so
``mu R`` is ``mu @ R``.

From the generator we get the resolvent ``R = L^{-1}``, the map
``Pi(mu) = mu R / mu R 1``, the quasi-stationary law as the fixed point of
``Pi``, the fixed-rebirth semigroup, and the measure-valued flow
``d nu/dt = -nu + Pi(nu)``.
"""
from dataclasses import dataclass, field
import math

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse as sp

from .errors import GridTooCoarseError, InvalidInputError, NumericalError
from .killing import KillingRate
from .torus import TWO_PI, cell_centres

MAX_POWER_ITERATIONS = 100_000


def check_probability(p, atol=1e-12):
    """Validate a probability vector (entries >= 0, sum 1 within ``atol``)."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > atol:
        raise InvalidInputError("not a probability vector")
    return p


def tv(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def l1(p, q):
    return float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """Discretised killed generator; row sums equal kappa at the cell centres."""

    matrix: np.ndarray
    kappa: np.ndarray
    n: int
    dim: int

    @property
    def h(self):
        return TWO_PI / self.n

    @property
    def size(self):
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class ResolventMatrix:
    """``R = G^{-1}`` with its row sums ``R1(x) = E_x[lifetime]``."""

    matrix: np.ndarray
    generator: GeneratorMatrix
    ones: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class QsdResult:
    pi: np.ndarray
    beta: float
    residual: float
    iterations: int

    @property
    def decay_rate(self):
        return 1.0 / self.beta


def _periodic_differences(n):
    h = TWO_PI / n
    eye = sp.identity(n, format="csr")
    up = sp.csr_matrix((np.ones(n), (np.arange(n), (np.arange(n) + 1) % n)), shape=(n, n))
    down = up.T.tocsr()
    d2 = (up + down - 2 * eye) / h ** 2
    d1 = (up - down) / (2 * h)
    return d1, d2


def build_generator(drift, kappa, n, dim=None):
    """
    Periodic central-difference discretisation of the killed generator.

    Parameters
    ----------
    drift : SmoothField
        Potential ``A``.
    kappa : SmoothField or KillingRate
        Killing rate, evaluated at cell centres.
    n : int
        Cells per axis (at least 16).

    Raises
    ------
    GridTooCoarseError
        If ``h * max|grad A| > 1``, which would make off-diagonal entries
        positive.
    """
    if isinstance(kappa, KillingRate):
        kappa = kappa.kappa
    dim = drift.dim if dim is None else dim
    if n < 16:
        raise InvalidInputError("oracle grid needs n >= 16")
    h = TWO_PI / n
    pts = cell_centres(n, dim)
    kap = np.asarray(kappa.value(pts), dtype=float)
    grad = np.atleast_2d(drift.gradient(pts)).reshape(len(pts), dim)
    if h * np.max(np.abs(grad)) > 1.0:
        need = int(math.ceil(TWO_PI * np.max(np.abs(grad))))
        raise GridTooCoarseError(f"central differences need n >= {need} for this drift (got {n})")
    d1, d2 = _periodic_differences(n)
    eye = sp.identity(n, format="csr")
    size = n ** dim
    lap = sp.csr_matrix((size, size))
    adv = sp.csr_matrix((size, size))
    for axis in range(dim):
        ops = [eye] * dim
        ops[axis] = d2
        lap_axis = ops[0]
        for op in ops[1:]:
            lap_axis = sp.kron(lap_axis, op, format="csr")
        ops[axis] = d1
        d1_axis = ops[0]
        for op in ops[1:]:
            d1_axis = sp.kron(d1_axis, op, format="csr")
        lap = lap + lap_axis
        adv = adv + sp.diags(grad[:, axis]) @ d1_axis
    g = (-0.5 * lap - adv + sp.diags(kap)).toarray()
    # the difference stencils have zero row sums; make that exact
    off = g.sum(axis=1) - kap
    g[np.arange(size), np.arange(size)] -= off
    return GeneratorMatrix(g, kap, n, dim)


def resolvent(gen):
    """Dense inverse of the generator; all entries must come out positive."""
    try:
        lu = scipy.linalg.lu_factor(gen.matrix, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"generator factorisation failed: {exc}") from None
    if np.min(np.abs(np.diag(lu[0]))) == 0.0:
        raise NumericalError("singular generator (kappa_lower ~ 0?)")
    r = scipy.linalg.lu_solve(lu, np.eye(gen.size))
    if not np.all(np.isfinite(r)):
        raise NumericalError("resolvent is not finite")
    if np.min(r) <= 0.0:
        raise NumericalError("resolvent has non-positive entries; generator is not an M-matrix")
    return ResolventMatrix(r, gen, r.sum(axis=1))


def pi_map(mu, res):
    """``Pi(mu) = mu R / (mu R 1)``."""
    v = np.asarray(mu, dtype=float) @ res.matrix
    v = v / v.sum()
    return v / v.sum()


def qsd_fixed_point(res, tol=1e-12, max_iter=MAX_POWER_ITERATIONS):
    """Iterate ``Pi`` from the uniform law until the L1 change drops below ``tol``."""
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    size = res.matrix.shape[0]
    mu = np.full(size, 1.0 / size)
    for it in range(1, max_iter + 1):
        nxt = pi_map(mu, res)
        change = l1(nxt, mu)
        mu = nxt
        if change < tol:
            beta = float(mu @ res.ones)
            residual = float(np.abs(mu @ res.matrix - beta * mu).sum())
            return QsdResult(mu, beta, residual, it)
    raise NumericalError(f"Pi iteration did not converge in {max_iter} steps")


def principal_left_eigenvector(res):
    """Direct eigen-solve cross-check for :func:`qsd_fixed_point`."""
    vals, vecs = scipy.linalg.eig(res.matrix.T)
    i = int(np.argmax(vals.real))
    v = np.abs(vecs[:, i].real)
    return v / v.sum(), float(vals[i].real)


def rebirth_generator(mu, gen):
    """Rate matrix of the fixed-rebirth process: ``-G + diag(kappa) 1 mu^T``."""
    return -gen.matrix + np.outer(gen.kappa, np.asarray(mu, dtype=float))


def fr_semigroup(mu, gen, res=None, t=1.0):
    """Transition matrix ``exp(t M_mu)`` of the process reborn from ``mu`` at rate kappa.

    ``res`` is accepted for symmetry with the other oracle calls and unused.
    """
    if t < 0:
        raise InvalidInputError("t must be >= 0")
    p = scipy.linalg.expm(t * rebirth_generator(mu, gen))
    if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-10:
        raise NumericalError("fixed-rebirth semigroup rows do not sum to one")
    return p


def flow_rhs(nu, res):
    return -nu + pi_map(nu, res)


def flow_integrate(mu0, res, T, dt_flow=0.05, times=None):
    """
    Integrate ``d nu/dt = -nu + Pi(nu)`` with classical RK4.

    The state is renormalised after every step.  Returns ``(times, states)``
    where ``states[i]`` is the solution at ``times[i]`` (default: every step).

    Raises
    ------
    NumericalError
        If an entry drops below ``-1e-10`` (reduce ``dt_flow``).
    """
    if not dt_flow > 0 or T < 0:
        raise InvalidInputError("need dt_flow > 0 and T >= 0")
    times = np.arange(0.0, T + 0.5 * dt_flow, dt_flow) if times is None else np.asarray(times, float)
    if np.any(np.diff(times) < 0) or (len(times) and (times[0] < 0 or times[-1] > T + 1e-12)):
        raise InvalidInputError("output times must be sorted inside [0, T]")
    nu = np.asarray(mu0, dtype=float).copy()
    out = np.empty((len(times), len(nu)))
    t = 0.0
    for i, target in enumerate(times):
        while t < target - 1e-13:
            h = min(dt_flow, target - t)
            k1 = flow_rhs(nu, res)
            k2 = flow_rhs(nu + 0.5 * h * k1, res)
            k3 = flow_rhs(nu + 0.5 * h * k2, res)
            k4 = flow_rhs(nu + h * k3, res)
            nu = nu + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if np.min(nu) < -1e-10:
                raise NumericalError(f"flow left the simplex at t={t + h:g}; reduce dt_flow")
            nu = np.maximum(nu, 0.0)
            nu /= nu.sum()
            t += h
        out[i] = nu
    return times, out


def _tilde_path(mu0, res, t, intervals):
    """Normalised ``mu e^{uR}`` on a uniform grid of [0, t] plus the log of the mass."""
    h = t / intervals
    step = scipy.linalg.expm(h * res.matrix)
    v = np.asarray(mu0, dtype=float).copy()
    states = np.empty((intervals + 1, len(v)))
    states[0] = v / v.sum()
    log_mass = math.log(v.sum())
    v = states[0].copy()
    for i in range(1, intervals + 1):
        v = v @ step
        mass = v.sum()
        log_mass += math.log(mass)
        v /= mass
        states[i] = v
    return states, log_mass


def tilde_flow(mu0, res, t, tol=1e-8, max_doublings=16):
    """
    ``(Phi~_t(mu0), s(t))`` with ``Phi~_t(mu) = mu e^{tR} / mu e^{tR} 1`` and
    ``s(t) = int_0^t Phi~_u(mu) R1 du`` by composite Simpson, doubling the grid
    until successive estimates agree to ``tol``.

    Intermediate vectors are renormalised, so large ``t`` does not overflow.
    """
    if t < 0:
        raise InvalidInputError("t must be >= 0")
    mu0 = np.asarray(mu0, dtype=float)
    if t == 0:
        return mu0.copy(), 0.0
    intervals = 16
    prev = None
    for _ in range(max_doublings):
        states, _ = _tilde_path(mu0, res, t, intervals)
        f = states @ res.ones
        h = t / intervals
        s = h / 3.0 * (f[0] + f[-1] + 4 * f[1:-1:2].sum() + 2 * f[2:-1:2].sum())
        if prev is not None and abs(s - prev) < tol:
            return states[-1], float(s)
        prev = s
        intervals *= 2
    raise NumericalError("Simpson refinement for s(t) did not converge")


def tilde_log_mass(mu0, res, t):
    """``log(mu e^{tR} 1)``; its derivative in ``t`` is ``Phi~_t(mu) R1``."""
    _, log_mass = _tilde_path(mu0, res, t, max(1, int(math.ceil(t))))
    return log_mass


def phi_via_tilde(mu0, res, t, tol=1e-10):
    """``Phi_t(mu0) = Phi~_{tau(t)}(mu0)`` with ``tau`` the inverse of ``s``."""
    if t == 0:
        return np.asarray(mu0, dtype=float).copy(), 0.0
    lo = t / float(np.max(res.ones))
    hi = t / float(np.min(res.ones))

    def gap(tau):
        return tilde_flow(mu0, res, tau, tol=1e-11)[1] - t

    if gap(lo) > 0 or gap(hi) < 0:
        lo, hi = 0.5 * lo, 2.0 * hi
    tau = scipy.optimize.brentq(gap, lo, hi, xtol=tol, rtol=1e-14)
    return tilde_flow(mu0, res, tau, tol=1e-11)[0], tau


class Oracle:
    """Generator, resolvent and QSD for one (A, kappa, n), built once."""

    def __init__(self, drift, kappa, n=200, tol=1e-12):
        self.generator = build_generator(drift, kappa, n)
        self.resolvent = resolvent(self.generator)
        self.qsd = qsd_fixed_point(self.resolvent, tol)
        self.n = n
        self.dim = self.generator.dim

    @property
    def pi(self):
        return self.qsd.pi
