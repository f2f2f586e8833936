"""Euler-Maruyama integration on the torus and simulation of single lifetimes."""
from dataclasses import dataclass
import math

import numpy as np

from . import _kernels
from .errors import ConfigError, InvalidInputError, NumericalError
from .killing import KillingRate, certify, kernel_code
from .torus import FourierField, wrap

METHODS = {"clock": _kernels.METHOD_CLOCK, "thinning": _kernels.METHOD_THINNING}

# P(lifetime > TAIL / kappa_lower) <= exp(-TAIL)
TAIL = 50.0


@dataclass
class RngStreams:
    """Three independent generators: diffusion noise, killing, rebirth.

    The initial position is drawn from the diffusion stream so that the first
    lifetime does not depend on the rebirth seed.
    """

    diffusion: np.random.Generator
    killing: np.random.Generator
    rebirth: np.random.Generator

    @classmethod
    def from_seeds(cls, diffusion, killing, rebirth, replica=0):
        def make(seed):
            if replica:
                return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replica,)))
            return np.random.default_rng(seed)

        return cls(make(diffusion), make(killing), make(rebirth))


@dataclass
class LifetimeSegment:
    """Path of one lifetime on its Euler grid ``birth_time + j*dt``.

    ``states[j]`` is held on ``[birth_time + j*dt, min(birth_time + (j+1)*dt,
    kill_time))``; ``kill_state_pre`` is the left limit at the kill time.
    """

    birth_time: float
    states: np.ndarray
    kill_time: float
    dt: float

    @property
    def kill_state_pre(self):
        return self.states[-1]

    def grid_times(self):
        return self.birth_time + np.arange(len(self.states)) * self.dt


def has_drift(drift):
    """False when the potential is constant, so the kernel can skip the gradient."""
    if not isinstance(drift, FourierField):
        return True
    return bool(np.any(np.any(drift.modes != 0, axis=1) & ((drift.a != 0) | (drift.b != 0))))


def euler_step(x, drift, dt, noise):
    """``wrap(x + grad A(x) dt + noise)``; ``noise`` has per-coordinate variance dt."""
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    x = np.asarray(x, dtype=float)
    return wrap(x + drift.gradient(x) * dt + np.asarray(noise, dtype=float))


def lifetime_capacity(kappa_lower, dt):
    return int(math.ceil(TAIL / (kappa_lower * dt))) + 2


def simulate_lifetime(x0, drift, kappa, dt, method, rng, birth_time=0.0):
    """
    Simulate the diffusion from ``x0`` until it is killed.

    Parameters
    ----------
    x0 : array_like, shape (d,)
        Starting point.
    drift : FourierField
        Potential ``A``; the drift is its gradient.
    kappa : KillingRate
        Certified killing rate.  A bare field is certified on the fly.
    dt : float
        Euler step.
    method : {"clock", "thinning"}
    rng : RngStreams

    Returns
    -------
    LifetimeSegment
    """
    if method not in METHODS:
        raise ConfigError(f"unknown lifetime method {method!r}", key="sde.method")
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    if not isinstance(kappa, KillingRate):
        if method == "thinning":
            raise ConfigError("thinning needs a certified upper bound on kappa", key="sde.method")
        kappa = certify(kappa)
    if method == "thinning" and not math.isfinite(kappa.thinning_bound):
        raise ConfigError("thinning needs a certified upper bound on kappa", key="sde.method")
    x0 = wrap(np.atleast_1d(np.asarray(x0, dtype=float)))
    code = kernel_code(kappa.kappa, drift)
    pieces = np.empty((lifetime_capacity(kappa.kappa_lower, dt), len(x0)))
    if method == "clock":
        n, kill = _kernels.lifetime_clock(x0, float(birth_time), float(dt), code, has_drift(drift),
                                          rng.diffusion, rng.killing, pieces, 0)
    else:
        n, kill = _kernels.lifetime_thinning(x0, float(birth_time), float(dt), code,
                                             float(kappa.thinning_bound), has_drift(drift),
                                             rng.diffusion, rng.killing, pieces, 0)
    if n < 0:
        raise NumericalError(lifetime_failure(n))
    return LifetimeSegment(float(birth_time), pieces[:n].copy(), float(kill), float(dt))


def lifetime_failure(code):
    return {
        _kernels.LIFE_OVERFLOW: "lifetime exceeded the path buffer (kappa_lower too small for dt?)",
        _kernels.LIFE_NONFINITE: "non-finite killing rate encountered along the path",
        _kernels.LIFE_ABOVE_BOUND: "killing rate exceeded the certified thinning bound",
    }.get(code, f"lifetime kernel failed with code {code}")
