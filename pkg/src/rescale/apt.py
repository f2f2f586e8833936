"""
Asymptotic pseudo-trajectory diagnostic
=======================================

With ``zeta_t = mu_{h(t)}`` the sampler's occupation measure read on the
logarithmic clock, the discrepancy

    D(t) = sup_{0 <= s <= T} d_w(zeta_{t+s}, Phi_s(zeta_t))

should shrink as ``t`` grows.  Both arguments are projected onto the oracle
grid, so at ``s = 0`` they coincide exactly.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidInputError
from .occupation import (DensityMeasure, GridMeasure, dw_distance, dw_truncation_bound,
                         fourier_family)
from .oracle import flow_integrate
from .torus import TWO_PI


def time_change(schedule, t):
    """Wall time ``h(t) = g^{-1}(r e^t - r)`` for the log-clock time ``t >= 0``."""
    if np.any(np.asarray(t) < 0):
        raise InvalidInputError("t must be >= 0")
    out = schedule.h(t)
    return float(out) if np.ndim(out) == 0 else out


def s_grid(T, n_s=9):
    if n_s < 2:
        raise InvalidInputError("need at least two s-samples")
    return np.linspace(0.0, T, n_s) if T > 0 else np.zeros(1)


def snapshot_times(schedule, base_times, T, n_s=9):
    """Wall times at which the engine must freeze ``mu`` for :func:`apt_check`."""
    lattice = [[time_change(schedule, t + s) for s in s_grid(T, n_s)] for t in base_times]
    return np.array(lattice)


@dataclass
class AptReport:
    base_times: np.ndarray
    discrepancy: np.ndarray
    argmax_s: np.ndarray
    T: float
    n_s: int
    floor: float
    truncation: float
    binning: float

    def __post_init__(self):
        if np.any(self.discrepancy < 0) or np.any(self.discrepancy > 2):
            raise InvalidInputError("APT discrepancy outside [0, 2]")


def binning_floor(density, bins=50, n_terms=12):
    """``d_w`` between a density and its projection onto ``bins`` equal bins per axis."""
    dim = density.dim
    from .torus import cell_masses
    proj = GridMeasure(cell_masses(density, bins, dim), bins, dim)
    return dw_distance(DensityMeasure(density), proj, n_terms, dim)


def apt_floor(reference, bins=50, n_terms=12):
    """Truncation bound plus binning floor; returns ``(floor, truncation, binning)``."""
    trunc = dw_truncation_bound(n_terms)
    binning = binning_floor(reference, bins, n_terms) if reference is not None else 0.0
    return trunc + binning, trunc, binning


def apt_check(cells_at, resolvent, schedule, base_times, T, n_s=9, n_terms=12, dim=1,
              dt_flow=0.01, reference=None, bins=50):
    """
    Compute the APT discrepancy from stored occupation-measure snapshots.

    Parameters
    ----------
    cells_at : callable or mapping
        Wall time -> cell masses of ``mu`` on the oracle grid.  A mapping
        that lacks a required time triggers a configuration error listing
        every missing time.
    resolvent : ResolventMatrix
        Oracle built with the same kappa and A.
    schedule : WeightSchedule
    base_times : sequence of float
    T : float
        Window length (log-clock units).
    reference : SmoothField, optional
        Density for the binning part of the reported floor.

    Returns
    -------
    AptReport
    """
    n = resolvent.generator.n
    lattice = snapshot_times(schedule, base_times, T, n_s)
    if not callable(cells_at):
        table = cells_at
        missing = sorted({float(w) for w in lattice.ravel() if float(w) not in table})
        if missing:
            raise ConfigError("apt-check needs snapshots at wall times "
                              + ", ".join(f"{w:.17g}" for w in missing), key="apt.base_times")
        cells_at = table.__getitem__
    family = fourier_family(dim, n_terms)
    ss = s_grid(T, n_s)
    disc = np.zeros(len(base_times))
    arg = np.zeros(len(base_times))
    for i, row in enumerate(lattice):
        z0 = np.asarray(cells_at(float(row[0])), dtype=float)
        z0 = z0 / z0.sum()
        if T > 0:
            _, flowed = flow_integrate(z0, resolvent, T, dt_flow, ss)
        else:
            flowed = z0[None, :]
        vals = []
        for j, w in enumerate(row):
            sim = GridMeasure(cells_at(float(w)), n, dim).integrate_family(family)
            det = GridMeasure(flowed[j], n, dim).integrate_family(family)
            vals.append(dw_distance(sim, det, n_terms, dim) if j else 0.0)
        disc[i] = max(vals)
        arg[i] = ss[int(np.argmax(vals))]
    floor, trunc, binning = apt_floor(reference, bins, n_terms)
    return AptReport(np.asarray(base_times, float), disc, arg, float(T), int(n_s), floor, trunc, binning)


def stationary_snapshots(pi_cells, schedule, base_times, T, n_s=9):
    """Synthetic snapshot table holding ``pi_cells`` at every lattice time."""
    return {float(w): pi_cells for w in snapshot_times(schedule, base_times, T, n_s).ravel()}


__all__ = ["time_change", "snapshot_times", "apt_check", "AptReport", "apt_floor", "binning_floor",
           "stationary_snapshots", "TWO_PI"]
