"""
Weighted empirical occupation measures
======================================

The rebirth law of the sampler at time ``t`` is

    mu_t = (r mu0 + int_0^t eta_s delta_{X_{s-}} ds) / (r + g(t)),

with ``eta_s = s**k`` and ``g(t) = t**(k+1) / (k+1)``.  The path is stored
piecewise constant on each lifetime's Euler grid, which makes ``mu_t`` an
exactly computable finite mixture.
"""
from dataclasses import dataclass
import math

import numpy as np
from scipy import integrate as sp_integrate

from . import _kernels
from .errors import InvalidInputError
from .torus import (TWO_PI, bin_masses, builtin_field, cell_average_factor, cell_centres,
                    cell_masses, quadrature_grid, wrap)

DEFAULT_N_TERMS = 12


@dataclass(frozen=True)
class WeightSchedule:
    """Path weights ``eta_t = t**k`` and prior weight ``r``."""

    k: float = 0.0
    r: float = 1000.0

    def __post_init__(self):
        if not (self.k >= 0 and math.isfinite(self.k)):
            raise InvalidInputError("weights.k must be a finite number >= 0")
        if not (self.r > 0 and math.isfinite(self.r)):
            raise InvalidInputError("weights.r must be a finite number > 0")

    def eta(self, t):
        return np.power(t, self.k) if self.k else np.ones_like(np.asarray(t, dtype=float))

    def g(self, t):
        t = np.asarray(t, dtype=float)
        return t if self.k == 0 else t ** (self.k + 1) / (self.k + 1)

    def g_inv(self, u):
        u = np.asarray(u, dtype=float)
        return u if self.k == 0 else ((self.k + 1) * u) ** (1.0 / (self.k + 1))

    def alpha(self, t):
        return self.eta(t) / (self.r + self.g(t))

    def h(self, t):
        """Deterministic time change ``g^{-1}(r e^t - r)``."""
        return self.g_inv(self.r * np.expm1(t))

    def prior_weight(self, t):
        """Mixture weight ``r / (r + g(t))`` of ``mu0`` in ``mu_t``."""
        return self.r / (self.r + self.g(t))

    def rebirth_time(self, t, v):
        """Past time ``t * v**(1/(k+1))``; for uniform ``v`` it has law ``t*Beta(k+1, 1)``."""
        return t * np.power(v, 1.0 / (self.k + 1))

    def alpha_square_integral(self, upper):
        """``int_0^upper alpha_s^2 ds`` by adaptive quadrature."""
        val, _ = sp_integrate.quad(lambda s: float(self.alpha(s)) ** 2, 0.0, upper, limit=500,
                                   points=[min(upper, p) for p in (1.0, 10.0, 1e3) if p < upper] or None)
        return val


# test-function family ---------------------------------------------------

FAMILY_CONST, FAMILY_COS, FAMILY_SIN = 0, 1, 2


def _canonical_modes(dim, order):
    """Integer vectors of L1 norm ``order`` whose first non-zero entry is positive."""
    out = []

    def rec(prefix, remaining):
        if len(prefix) == dim:
            if remaining == 0:
                out.append(tuple(prefix))
            return
        for v in range(-remaining, remaining + 1):
            rec(prefix + [v], remaining - abs(v))

    rec([], order)
    out = [m for m in out if next(v for v in m if v != 0) > 0]
    return sorted(out, key=lambda m: tuple(-v for v in m))


def fourier_family(dim, n_terms=DEFAULT_N_TERMS):
    """
    The fixed test functions used by :func:`dw_distance`.

    Order: the constant 1, then ``cos(m.x), sin(m.x)`` for integer modes ``m``
    by increasing L1 norm (axis modes first, in axis order).  On the circle
    this is 1, cos x, sin x, cos 2x, sin 2x, ...  Every member is bounded by
    one in sup norm.

    Returns ``(modes, kinds)`` with shapes ``(n_terms, dim)`` and ``(n_terms,)``.
    """
    if n_terms < 1:
        raise InvalidInputError("n_terms must be >= 1")
    modes = [np.zeros(dim, dtype=np.int64)]
    kinds = [FAMILY_CONST]
    order = 1
    while len(kinds) < n_terms:
        for m in _canonical_modes(dim, order):
            for kind in (FAMILY_COS, FAMILY_SIN):
                modes.append(np.array(m, dtype=np.int64))
                kinds.append(kind)
        order += 1
    return np.array(modes[:n_terms]), np.array(kinds[:n_terms], dtype=np.int64)


def family_values(family, x):
    """Test functions evaluated at points ``x`` of shape ``(n, d)`` -> ``(n, n_terms)``."""
    modes, kinds = family
    ph = np.atleast_2d(x) @ modes.T.astype(float)
    return np.where(kinds == FAMILY_CONST, 1.0, np.where(kinds == FAMILY_COS, np.cos(ph), np.sin(ph)))


def dw_weights(n_terms):
    return 0.5 ** np.arange(1, n_terms + 1)


def dw_truncation_bound(n_terms):
    """Largest possible contribution of the omitted terms ``i > n_terms``."""
    return 2.0 * 0.5 ** n_terms


def _moments(p, family):
    if hasattr(p, "integrate_family"):
        return np.asarray(p.integrate_family(family), dtype=float)
    return np.asarray(p, dtype=float)[: len(family[1])]


def dw_distance(p, q, n_terms=DEFAULT_N_TERMS, dim=None):
    """
    Truncated weak-* metric ``sum_i 2^-i |p(f_i) - q(f_i)|``.

    ``p`` and ``q`` are either objects with ``integrate_family(family)`` or
    arrays of precomputed family integrals.
    """
    if dim is None:
        dim = getattr(p, "dim", None) or getattr(q, "dim", None) or 1
    family = fourier_family(dim, n_terms)
    mp = _moments(p, family)
    mq = _moments(q, family)
    if len(mp) < n_terms or len(mq) < n_terms:
        raise InvalidInputError("not enough precomputed moments for n_terms")
    return float(np.sum(dw_weights(n_terms) * np.abs(mp[:n_terms] - mq[:n_terms])))


def tv_distance(p, q):
    """Total variation ``0.5 * sum |p - q|`` between two mass vectors."""
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


# simple measures -------------------------------------------------------

class DensityMeasure:
    """Probability measure with a smooth density (normalised numerically)."""

    def __init__(self, field):
        self.field = field
        self.dim = field.dim
        pts, w = quadrature_grid(self.dim)
        self._pts = pts
        vals = field.value(pts)
        self._w = w * vals / np.sum(w * vals)

    def integrate(self, f):
        return float(np.sum(self._w * f.value(self._pts)))

    def integrate_family(self, family):
        return self._w @ family_values(family, self._pts)

    def cell_masses(self, n):
        return cell_masses(self.field, n, self.dim)

    def bin_masses(self, bins, axis=0):
        return bin_masses(self.field, bins, self.dim, axis)


class PointMass:
    def __init__(self, x):
        self.x = np.atleast_1d(wrap(np.asarray(x, dtype=float)))
        self.dim = len(self.x)

    def integrate(self, f):
        return float(f.value(self.x))

    def integrate_family(self, family):
        return family_values(family, self.x[None, :])[0]

    def cell_masses(self, n):
        out = np.zeros(n ** self.dim)
        idx = 0
        for c in self.x:
            idx = idx * n + min(int(c / TWO_PI * n), n - 1)
        out[idx] = 1.0
        return out

    def bin_masses(self, bins, axis=0):
        out = np.zeros(bins)
        out[min(int(self.x[axis] / TWO_PI * bins), bins - 1)] = 1.0
        return out


class GridMeasure:
    """Probability vector on the ``n``-per-axis cell grid, uniform inside cells."""

    def __init__(self, masses, n, dim=1):
        self.masses = np.asarray(masses, dtype=float)
        self.n = n
        self.dim = dim

    def integrate_family(self, family):
        modes, _ = family
        vals = family_values(family, cell_centres(self.n, self.dim))
        return (self.masses @ vals) * cell_average_factor(modes, self.n)


class Mu0:
    """
    Initial law of the sampler: ``uniform``, ``point:<x1,..,xd>`` or
    ``field:<name>`` (a builtin density).
    """

    CDF_POINTS = 2 ** 14

    def __init__(self, spec="uniform", dim=1):
        self.spec = spec.strip()
        self.dim = dim
        self.point = np.zeros(dim)
        self.field = None
        if self.spec == "uniform":
            self.kind = _kernels.MU0_UNIFORM
            self._measure = None
        elif self.spec.startswith("point:"):
            try:
                coords = [float(v) for v in self.spec[len("point:"):].split(",")]
            except ValueError:
                raise InvalidInputError(f"bad point in mu0 {self.spec!r}") from None
            if len(coords) != dim:
                raise InvalidInputError(f"mu0 point needs {dim} coordinates")
            self.kind = _kernels.MU0_POINT
            self.point = np.atleast_1d(wrap(np.array(coords)))
            self._measure = PointMass(self.point)
        elif self.spec.startswith("field:"):
            self.field = builtin_field(self.spec[len("field:"):], dim)
            vals = self.field.grid_values(64 if dim == 1 else 32)
            if np.min(vals) < 0:
                raise InvalidInputError("mu0 density must be non-negative")
            self.kind = _kernels.MU0_CDF if dim == 1 else _kernels.MU0_REJECT
            self._measure = DensityMeasure(self.field)
        else:
            raise InvalidInputError(f"unknown mu0 kind {self.spec!r}")
        self._kernel_args = None

    def kernel_args(self):
        if self._kernel_args is None:
            cdf_x = np.linspace(0.0, TWO_PI, self.CDF_POINTS + 1)
            cdf_p = np.linspace(0.0, 1.0, self.CDF_POINTS + 1)
            bound = 1.0
            code = builtin_field("uniform", self.dim).code()
            if self.field is not None:
                code = self.field.code()
                if self.kind == _kernels.MU0_CDF:
                    vals = self.field.value(cdf_x[:, None])
                    cum = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]))])
                    cdf_p = cum / cum[-1]
                else:
                    pts, _ = quadrature_grid(self.dim, 64)
                    bound = 1.1 * float(np.max(self.field.value(pts)))
            self._kernel_args = (self.kind, self.point, cdf_x, cdf_p, code, bound)
        return self._kernel_args

    def sample(self, rng):
        out = np.empty(self.dim)
        _kernels.sample_mu0(*self.kernel_args(), rng, out)
        return out

    def integrate(self, f):
        if self._measure is None:
            pts, w = quadrature_grid(self.dim)
            return float(np.sum(w * f.value(pts)))
        return self._measure.integrate(f)

    def integrate_family(self, family):
        if self._measure is None:
            _, kinds = family
            return np.where(kinds == FAMILY_CONST, 1.0, 0.0)
        return self._measure.integrate_family(family)

    def cell_masses(self, n):
        if self._measure is None:
            return np.full(n ** self.dim, float(n) ** -self.dim)
        return self._measure.cell_masses(n)

    def bin_masses(self, bins, axis=0):
        if self._measure is None:
            return np.full(bins, 1.0 / bins)
        return self._measure.bin_masses(bins, axis)


# occupation measure ------------------------------------------------------

class OccupationMeasure:
    """
    The sampler's weighted occupation measure at ``current_time``.

    Parameters
    ----------
    schedule : WeightSchedule
    mu0 : Mu0
    dt : float
        Euler step used by every lifetime.
    births, kills : ndarray, shape (L,)
        Birth and kill times of the recorded lifetimes (``kills[i] ==
        births[i+1]``).  The last kill may lie beyond ``current_time``.
    offsets : ndarray of int, shape (L,)
        Index of each lifetime's first state in ``states``.
    states : ndarray, shape (N, d)
    current_time : float
    """

    def __init__(self, schedule, mu0, dt, births, kills, offsets, states, current_time):
        self.schedule = schedule
        self.mu0 = mu0
        self.dt = float(dt)
        self.births = np.asarray(births, dtype=float)
        self.kills = np.asarray(kills, dtype=float)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.states = np.asarray(states, dtype=float).reshape(len(states), mu0.dim)
        self.dim = mu0.dim
        self.current_time = float(current_time)
        if len(self.births) and self.current_time > self.kills[-1] + 1e-12:
            raise InvalidInputError("current_time lies beyond the recorded path")

    @classmethod
    def from_segments(cls, schedule, mu0, segments, current_time=None):
        births = np.array([s.birth_time for s in segments], dtype=float)
        kills = np.array([s.kill_time for s in segments], dtype=float)
        counts = np.array([len(s.states) for s in segments], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        dim = mu0.dim
        states = np.concatenate([s.states for s in segments]) if segments else np.empty((0, dim))
        dt = segments[0].dt if segments else 1.0
        if current_time is None:
            current_time = kills[-1] if segments else 0.0
        return cls(schedule, mu0, dt, births, kills, offsets, states, current_time)

    def at(self, t):
        """The same path viewed at an earlier time ``t``."""
        if t > self.current_time + 1e-12:
            raise InvalidInputError("cannot view the measure beyond current_time")
        return OccupationMeasure(self.schedule, self.mu0, self.dt, self.births, self.kills,
                                 self.offsets, self.states, t)

    def _pieces(self):
        """Start, end (clipped to current_time) and state index of every live piece."""
        n_states = len(self.states)
        counts = np.diff(np.append(self.offsets, n_states))
        life = np.repeat(np.arange(len(self.births)), counts)
        j = np.arange(n_states) - self.offsets[life]
        start = self.births[life] + j * self.dt
        end = np.minimum(np.minimum(self.births[life] + (j + 1) * self.dt, self.kills[life]),
                         self.current_time)
        live = start < self.current_time
        return start[live], end[live], np.nonzero(live)[0]

    def path_weights(self):
        start, end, idx = self._pieces()
        return self.schedule.g(end) - self.schedule.g(start), idx

    @property
    def path_mass(self):
        return float(self.schedule.g(self.current_time))

    @property
    def rebirths(self):
        return int(np.count_nonzero(self.kills[:-1] <= self.current_time)) if len(self.kills) else 0

    def _mix(self, path_part, prior_part, mode):
        g = self.path_mass
        if mode == "path_only":
            if g <= 0:
                raise InvalidInputError("path component is empty at t = 0")
            return path_part / g
        if mode != "full":
            raise InvalidInputError(f"unknown histogram mode {mode!r}")
        r = self.schedule.r
        return (r * prior_part + path_part) / (r + g)

    def integrate(self, f, mode="full"):
        w, idx = self.path_weights()
        path_part = float(np.sum(w * f.value(self.states[idx]))) if len(idx) else 0.0
        return float(self._mix(path_part, self.mu0.integrate(f), mode))

    def integrate_family(self, family, mode="full"):
        w, idx = self.path_weights()
        path_part = w @ family_values(family, self.states[idx]) if len(idx) else 0.0
        return self._mix(path_part, self.mu0.integrate_family(family), mode)

    def histogram(self, bins=50, mode="path_only"):
        """Bin masses on the circle; see :meth:`marginal_histogram` for d > 1."""
        if self.dim != 1:
            raise InvalidInputError("histogram needs d = 1; use marginal_histogram for tori")
        return self.marginal_histogram(bins, mode, axis=0)

    def marginal_histogram(self, bins=50, mode="path_only", axis=0):
        if bins < 2:
            raise InvalidInputError("bins must be >= 2")
        w, idx = self.path_weights()
        b = np.minimum((self.states[idx, axis] / TWO_PI * bins).astype(np.int64), bins - 1)
        path_part = np.bincount(b, weights=w, minlength=bins)
        return self._mix(path_part, self.mu0.bin_masses(bins, axis), mode)

    def cell_masses(self, n, mode="full"):
        """Masses on the ``n``-per-axis oracle grid (C order)."""
        w, idx = self.path_weights()
        cell = np.zeros(len(idx), dtype=np.int64)
        for a in range(self.dim):
            cell = cell * n + np.minimum((self.states[idx, a] / TWO_PI * n).astype(np.int64), n - 1)
        path_part = np.bincount(cell, weights=w, minlength=n ** self.dim)
        return self._mix(path_part, self.mu0.cell_masses(n), mode)

    def state_at(self, s):
        """Recorded left limit ``X_{s-}`` for ``0 <= s < current_time``."""
        out = np.empty(self.dim)
        nl = len(self.births)
        _kernels.locate_state(float(s), self.births, self.offsets, nl, len(self.states), self.dt,
                              self.states, out)
        return out

    def sample_time(self, rng):
        """Draw the rebirth branch; returns ``None`` for the prior, else the past time S."""
        t = self.current_time
        if rng.random() < float(self.schedule.prior_weight(t)):
            return None
        return float(self.schedule.rebirth_time(t, rng.random()))

    def sample_rebirth(self, rng):
        """Draw a rebirth location from this measure using ``rng.rebirth``."""
        gen = rng.rebirth if hasattr(rng, "rebirth") else rng
        s = self.sample_time(gen)
        if s is None:
            return self.mu0.sample(gen)
        return self.state_at(s)

    def events(self):
        """Kill times, pre-kill states and rebirth states of completed lifetimes."""
        done = np.nonzero(self.kills[:-1] < self.current_time)[0] if len(self.kills) > 1 else np.array([], int)
        last = np.append(self.offsets[1:], len(self.states)) - 1
        return self.kills[done], self.states[last[done]], self.states[self.offsets[done + 1]]
