"""Killing rates built from a target density, and certification of their bounds."""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import AssumptionViolationError, InvalidDensityError, InvalidInputError
from .torus import TWO_PI, FourierField, SmoothField

COMPLEX_STEP = 1e-20
LAPLACIAN_STEP = 1e-4


def default_grid_n(dim):
    return {1: 10_000, 2: 256}.get(dim, 32)


def verification_grid(dim, grid_n=None):
    """Uniform grid including the origin, ``grid_n`` points per axis."""
    grid_n = default_grid_n(dim) if grid_n is None else int(grid_n)
    axis = np.linspace(0.0, TWO_PI, grid_n, endpoint=False)
    if dim == 1:
        return axis[:, None]
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


class KappaField(SmoothField):
    """
    Killing rate whose quasi-stationary law is the density ``pi``:

        kappa = (lap pi / pi - 2 grad A . grad pi / pi - 2 lap A) / 2 + K

    The value is exact.  The gradient uses a complex step (exact to rounding
    for these analytic fields) and the Laplacian differences that gradient.
    """

    def __init__(self, pi, drift, offset):
        if pi.dim != drift.dim:
            raise InvalidInputError("pi and A must live on the same torus")
        self.pi = pi
        self.drift = drift
        self.offset = float(offset)
        self.dim = pi.dim
        self.name = f"kappa[{pi.name}]"

    def base_value(self, x):
        """The expression without the additive constant."""
        p = self.pi._value(x)
        gp = self.pi._gradient(x)
        ga = self.drift._gradient(x)
        dot = np.sum(gp * ga, axis=1)
        return 0.5 * (self.pi._laplacian(x) / p - 2.0 * dot / p - 2.0 * self.drift._laplacian(x))

    def _value(self, x):
        return self.base_value(x) + self.offset

    def _gradient(self, x):
        x = np.asarray(x, dtype=complex)
        out = np.empty(x.shape)
        for j in range(self.dim):
            step = np.zeros(self.dim, dtype=complex)
            step[j] = 1j * COMPLEX_STEP
            out[:, j] = np.imag(self._value(x + step)) / COMPLEX_STEP
        return out

    def _laplacian(self, x):
        lap = np.zeros(len(x))
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = LAPLACIAN_STEP
            lap += (self._gradient(x + e)[:, j] - self._gradient(x - e)[:, j]) / (2 * LAPLACIAN_STEP)
        return lap

    def shifted(self, c):
        return KappaField(self.pi, self.drift, self.offset + c)

    def code(self):
        return _kernels.KappaCode(_kernels.KAPPA_FROM_PI, self.offset, self.pi.code(), self.drift.code())


class ShiftedField(SmoothField):
    """``base + c``; used to offset an explicitly given killing rate."""

    def __init__(self, base, c):
        self.base = base
        self.c = float(c)
        self.dim = base.dim
        self.name = f"{base.name}+{c:g}"

    def _value(self, x):
        return self.base._value(x) + self.c

    def _gradient(self, x):
        return self.base._gradient(x)

    def _laplacian(self, x):
        return self.base._laplacian(x)

    def shifted(self, c):
        return ShiftedField(self.base, self.c + c)


def kernel_code(kappa, drift):
    """Encode a killing rate plus drift potential for the compiled kernels."""
    if isinstance(kappa, KappaField):
        return kappa.code()
    offset = 0.0
    base = kappa
    if isinstance(kappa, ShiftedField):
        offset, base = kappa.c, kappa.base
    return _kernels.KappaCode(_kernels.KAPPA_EXPLICIT, offset, base.code(), drift.code())


def _check_density(pi, grid_n):
    vals = pi.value(verification_grid(pi.dim, grid_n))
    if not np.all(np.isfinite(vals)):
        raise InvalidDensityError(f"density {pi.name} is not finite on the verification grid")
    if np.min(vals) <= 0.0:
        raise InvalidDensityError(f"density {pi.name} is not positive on the verification grid")


def kappa_from_pi(pi, drift=None, K=0.0, grid_n=None):
    """Killing rate making ``pi`` the quasi-stationary law of dY = grad A dt + dW."""
    drift = FourierField.constant(0.0, pi.dim) if drift is None else drift
    _check_density(pi, grid_n)
    return KappaField(pi, drift, K)


def calibrate_K(pi, drift=None, target_lower=0.02, grid_n=None):
    """Smallest constant K for which kappa >= ``target_lower`` on the grid."""
    if not target_lower > 0:
        raise InvalidInputError("target_lower must be positive")
    kappa0 = kappa_from_pi(pi, drift, 0.0, grid_n)
    vals = kappa0.value(verification_grid(pi.dim, grid_n))
    if not np.all(np.isfinite(vals)):
        raise InvalidDensityError("killing-rate expression is not finite on the grid")
    return float(target_lower - np.min(vals))


@dataclass(frozen=True)
class KillingRate:
    """A killing-rate field with certified grid bounds.

    ``margin`` is one grid cell times the largest slope seen on the grid; the
    thinning sampler proposes at ``kappa_upper + margin``.
    """

    kappa: SmoothField
    kappa_lower: float
    kappa_upper: float
    margin: float
    grid_n: int
    offset_K: float = float("nan")

    @property
    def thinning_bound(self):
        return self.kappa_upper + self.margin


def certify_bounds(kappa, grid_n=None):
    """Grid minimum and maximum of ``kappa``; the minimum must be positive."""
    vals = kappa.value(verification_grid(kappa.dim, grid_n))
    if not np.all(np.isfinite(vals)):
        raise AssumptionViolationError("killing rate is not finite on the grid")
    lo, hi = float(np.min(vals)), float(np.max(vals))
    if lo <= 0.0:
        raise AssumptionViolationError(f"killing rate reaches {lo:.6g} <= 0 on the grid")
    return lo, hi


def certify(kappa, grid_n=None, offset_K=float("nan")):
    """Build a :class:`KillingRate` with bounds and a one-cell Lipschitz margin."""
    grid_n = default_grid_n(kappa.dim) if grid_n is None else int(grid_n)
    lo, hi = certify_bounds(kappa, grid_n)
    pts = verification_grid(kappa.dim, grid_n)
    slope = float(np.max(np.linalg.norm(kappa.gradient(pts), axis=1)))
    margin = slope * (TWO_PI / grid_n) * 0.5 * np.sqrt(kappa.dim)
    return KillingRate(kappa, lo, hi, margin, grid_n, offset_K)
