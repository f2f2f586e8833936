"""
The rebirth sampler
===================

Lifetimes of the killed diffusion alternate with rebirths drawn from the
weighted occupation measure of the path so far.  The hot loop lives in the
compiled kernels; this module owns configuration, buffers, checkpoints and
the resulting trace.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import hashlib
import math
import time

import numpy as np

from . import _kernels
from .errors import ConfigError, InvalidInputError, NumericalError
from .killing import KillingRate, ShiftedField, calibrate_K, certify, kappa_from_pi, kernel_code
from .occupation import (DensityMeasure, GridMeasure, Mu0, OccupationMeasure, WeightSchedule,
                         dw_weights, fourier_family)
from .sde import METHODS, RngStreams, has_drift, lifetime_capacity, lifetime_failure
from .torus import TWO_PI, bin_masses, builtin_field

FIGURE1_CHECKPOINTS = (25.0, 100.0, 1000.0, 1e6)


@dataclass
class RunConfig:
    """Everything a single sampler run depends on.

    ``K=None`` calibrates the offset so that ``min kappa = target_lower``;
    left unset, ``K`` is 1.75 for ``from_pi`` and 0 for ``explicit``.
    ``checkpoints=None`` keeps the Figure-1 times that do not exceed ``T_end``.
    ``kappa_mode="explicit"`` takes ``kappa_field`` (plus ``K``) as the
    killing rate directly; the reference law is then the oracle QSD.
    """

    dim: int = 1
    pi: str = "trimodal"
    A: str = "zero"
    kappa_mode: str = "from_pi"
    kappa_field: str = ""
    K: float = float("nan")
    target_lower: float = 0.02
    kappa_grid_n: int = 0
    k: float = 0.0
    r: float = 1000.0
    mu0: str = "uniform"
    dt: float = 0.05
    method: str = "clock"
    seeds: tuple = (1, 2, 3)
    T_end: float = 1e6
    checkpoints: tuple = None
    bins: int = 50
    hist_mode: str = "path_only"
    n_terms: int = 12
    oracle_n: int = 0
    cell_n: int = 0
    events: int = 10_000

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.checkpoints is None:
            self.checkpoints = tuple(c for c in FIGURE1_CHECKPOINTS if c <= self.T_end)
        self.checkpoints = tuple(float(c) for c in self.checkpoints)
        if self.K is not None and math.isnan(self.K):
            self.K = 1.75 if self.kappa_mode == "from_pi" else 0.0
        self.validate()

    def validate(self):
        if self.dim < 1:
            raise ConfigError("dimension must be >= 1", key="torus.dim")
        if self.kappa_mode not in ("from_pi", "explicit"):
            raise ConfigError(f"unknown kappa mode {self.kappa_mode!r}", key="kappa.mode")
        if self.kappa_mode == "explicit" and not self.kappa_field:
            raise ConfigError("explicit kappa needs kappa.field", key="kappa.field")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}", key="sde.method")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("dt must be positive", key="sde.dt")
        if not (self.T_end >= 0 and math.isfinite(self.T_end)):
            raise ConfigError("T_end must be finite and >= 0", key="run.T_end")
        cp = np.asarray(self.checkpoints)
        if np.any(np.diff(cp) <= 0) or np.any(cp <= 0) or np.any(cp > self.T_end):
            raise ConfigError("checkpoints must be strictly increasing in (0, T_end]",
                              key="run.checkpoints")
        if len(self.seeds) != 3 or any(s < 0 for s in self.seeds):
            raise ConfigError("need three non-negative seeds", key="seed")
        if self.hist_mode not in ("path_only", "full"):
            raise ConfigError(f"unknown histogram mode {self.hist_mode!r}", key="histogram.mode")
        if self.bins < 2:
            raise ConfigError("bins must be >= 2", key="histogram.bins")
        if self.n_terms < 1:
            raise ConfigError("n_terms must be >= 1", key="dw.n_terms")
        try:
            WeightSchedule(self.k, self.r)
        except InvalidInputError as exc:
            raise ConfigError(str(exc), key="weights") from None

    @property
    def grid_n(self):
        """Oracle / cell grid per axis."""
        if self.oracle_n:
            return self.oracle_n
        return 200 if self.dim == 1 else (64 if self.dim == 2 else 16)

    @property
    def schedule(self):
        return WeightSchedule(self.k, self.r)


@dataclass
class Problem:
    """Fields, certified killing rate and reference law resolved from a config."""

    drift: object
    pi: object
    killing: KillingRate
    mu0: Mu0
    ref_bins: np.ndarray
    ref_moments: np.ndarray
    reference: str


def grid_bin_masses(masses, n, dim, bins, axis=0):
    """Marginal bin masses of a cell-mass vector, assuming uniform mass inside cells."""
    marg = np.asarray(masses, dtype=float).reshape((n,) * dim)
    marg = marg.sum(axis=tuple(a for a in range(dim) if a != axis)) if dim > 1 else marg
    edges_c = np.arange(n + 1) / n
    edges_b = np.arange(bins + 1) / bins
    cum = np.concatenate([[0.0], np.cumsum(marg)])
    return np.diff(np.interp(edges_b, edges_c, cum))


def build_problem(cfg, oracle_factory=None):
    """Resolve fields, certify kappa and compute the reference law."""
    dim = cfg.dim
    try:
        drift = builtin_field(cfg.A, dim)
    except InvalidInputError as exc:
        raise ConfigError(str(exc), key="field.A") from None
    grid_n = cfg.kappa_grid_n or None
    pi = None
    if cfg.kappa_mode == "from_pi":
        try:
            pi = builtin_field(cfg.pi, dim)
        except InvalidInputError as exc:
            raise ConfigError(str(exc), key="field.pi") from None
        K = cfg.K if cfg.K is not None else calibrate_K(pi, drift, cfg.target_lower, grid_n)
        kappa = kappa_from_pi(pi, drift, K, grid_n)
    else:
        try:
            base = builtin_field(cfg.kappa_field, dim)
        except InvalidInputError as exc:
            raise ConfigError(str(exc), key="kappa.field") from None
        K = cfg.K or 0.0
        kappa = ShiftedField(base, K) if K else base
    killing = certify(kappa, grid_n, K)
    try:
        mu0 = Mu0(cfg.mu0, dim)
    except InvalidInputError as exc:
        raise ConfigError(str(exc), key="mu0.kind") from None
    family = fourier_family(dim, cfg.n_terms)
    if pi is not None:
        ref_bins = np.array([bin_masses(pi, cfg.bins, dim, a) for a in range(dim)])
        ref_mom = DensityMeasure(pi).integrate_family(family)
        reference = f"analytic:{pi.name}"
    else:
        if oracle_factory is None:
            from .oracle import Oracle as oracle_factory
        orc = oracle_factory(drift, killing, cfg.grid_n)
        ref_bins = np.array([grid_bin_masses(orc.pi, orc.n, dim, cfg.bins, a) for a in range(dim)])
        ref_mom = GridMeasure(orc.pi, orc.n, dim).integrate_family(family)
        reference = f"oracle_qsd:n={orc.n}"
    return Problem(drift, pi, killing, mu0, ref_bins, np.asarray(ref_mom, float), reference)


@dataclass
class Checkpoint:
    """Path-part summaries of ``mu_t`` frozen at one checkpoint time."""

    time: float
    rebirths: int
    g: float
    cells: np.ndarray
    marginals: np.ndarray
    moments: np.ndarray
    wall_ms: float


@dataclass(eq=False)
class RunTrace:
    """
    Per-checkpoint diagnostics plus the leading part of the event log.

    Two traces compare equal when everything except wall-clock time agrees
    bit for bit.
    """

    times: np.ndarray
    rebirths: np.ndarray
    tv: np.ndarray
    dw: np.ndarray
    wall_ms: np.ndarray
    histograms: np.ndarray
    bin_edges: np.ndarray
    events: tuple
    metadata: dict = field(default_factory=dict)

    def digest(self):
        h = hashlib.sha256()
        for arr in (self.times, self.rebirths, self.tv, self.dw, self.histograms, *self.events):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        return isinstance(other, RunTrace) and self.digest() == other.digest()

    def row(self, t):
        i = int(np.nonzero(self.times == t)[0][0])
        return dict(time=self.times[i], rebirths=int(self.rebirths[i]), tv=self.tv[i],
                    dw=self.dw[i], wall_ms=self.wall_ms[i])


class Engine:
    """
    One sampler run.

    Parameters
    ----------
    cfg : RunConfig
    problem : Problem, optional
        Reuse resolved fields (and the oracle reference) across runs.
    replica : int
        Replica index; 0 uses the configured seeds unchanged.
    snapshot_times : sequence of float, optional
        Extra times at which summaries are frozen (used by the APT check).
    """

    def __init__(self, cfg, problem=None, replica=0, snapshot_times=None, keep_path=True):
        self.cfg = cfg
        self.problem = problem if problem is not None else build_problem(cfg)
        self.replica = replica
        self.rng = RngStreams.from_seeds(*cfg.seeds, replica=replica)
        extra = [] if snapshot_times is None else [float(s) for s in snapshot_times]
        times = sorted(set(list(cfg.checkpoints) + [s for s in extra if 0 < s <= cfg.T_end]))
        self.snap_times = np.array(times, dtype=float)
        self.keep_path = keep_path
        self.measure = None
        self.checkpoints = []

    # buffers ----------------------------------------------------------
    def _allocate(self):
        cfg, kr = self.cfg, self.problem.killing
        d = cfg.dim
        self.min_free = lifetime_capacity(kr.kappa_lower, cfg.dt)
        n_life = int(min(max(cfg.T_end * kr.kappa_upper * 1.05, 64), 2 ** 24)) + 16
        n_pieces = int(math.ceil(cfg.T_end / cfg.dt)) + n_life + self.min_free
        self.births = np.empty(n_life)
        self.offsets = np.empty(n_life, dtype=np.int64)
        self.pieces = np.empty((n_pieces, d))

    def _grow(self):
        cap = self.pieces.shape[0]
        if cap - int(self.istate[0]) < self.min_free:
            new = np.empty((int(cap * 1.5) + self.min_free, self.cfg.dim))
            new[:cap] = self.pieces
            self.pieces = new
        if int(self.istate[1]) >= len(self.births):
            m = len(self.births)
            self.births = np.concatenate([self.births, np.empty(m)])
            self.offsets = np.concatenate([self.offsets, np.empty(m, dtype=np.int64)])

    # main loop --------------------------------------------------------
    def run(self):
        """Run to ``T_end`` and return the :class:`RunTrace`."""
        cfg, prob = self.cfg, self.problem
        d = cfg.dim
        self._allocate()
        n_cell = cfg.grid_n
        modes, kinds = fourier_family(d, cfg.n_terms)
        n_snap = len(self.snap_times)
        acc_cells = np.zeros(n_cell ** d)
        acc_marg = np.zeros((d, cfg.bins))
        acc_mom = np.zeros(cfg.n_terms)
        snap_cells = np.zeros((n_snap, n_cell ** d))
        snap_marg = np.zeros((n_snap, d, cfg.bins))
        snap_mom = np.zeros((n_snap, cfg.n_terms))
        snap_g = np.zeros(n_snap)
        snap_reb = np.zeros(n_snap, dtype=np.int64)
        self.fstate = np.zeros(1)
        self.istate = np.zeros(5, dtype=np.int64)
        x = np.empty(d)
        kc = kernel_code(prob.killing.kappa, prob.drift)
        drift_on = has_drift(prob.drift)
        method = METHODS[cfg.method]
        kbar = float(prob.killing.thinning_bound)
        mu0_args = prob.mu0.kernel_args()
        wall = np.zeros(n_snap)
        t0 = time.perf_counter()
        seen = 0
        while True:
            status = _kernels.engine_loop(
                kc, drift_on, float(cfg.dt), method, kbar, float(cfg.k), float(cfg.r),
                float(cfg.T_end), *mu0_args,
                self.rng.diffusion, self.rng.killing, self.rng.rebirth,
                self.snap_times, self.fstate, self.istate, x,
                self.births, self.offsets, self.pieces, self.min_free,
                n_cell, cfg.bins, modes, kinds,
                acc_cells, acc_marg, acc_mom,
                snap_cells, snap_marg, snap_mom, snap_g, snap_reb, True)
            now = (time.perf_counter() - t0) * 1e3
            si = int(self.istate[2])
            wall[seen:si] = now
            seen = si
            if status == _kernels.STATUS_DONE:
                break
            if status == _kernels.STATUS_NEED_CAPACITY:
                self._grow()
            elif status < 0:
                self._fail(status, x)
        nl, npc = int(self.istate[1]), int(self.istate[0])
        self.checkpoints = [Checkpoint(float(self.snap_times[i]), int(snap_reb[i]), float(snap_g[i]),
                                       snap_cells[i], snap_marg[i], snap_mom[i], float(wall[i]))
                            for i in range(n_snap)]
        births = self.births[:nl].copy()
        kills = np.append(births[1:], self.fstate[0]) if nl else births
        self.measure = OccupationMeasure(cfg.schedule, prob.mu0, cfg.dt, births, kills,
                                         self.offsets[:nl].copy(),
                                         self.pieces[:npc] if self.keep_path else np.empty((0, d)),
                                         min(cfg.T_end, float(kills[-1])) if nl else 0.0)
        if not self.keep_path:
            self.pieces = None
        return self.trace()

    def _fail(self, status, x):
        t = float(self.fstate[0])
        raise NumericalError(f"{lifetime_failure(status)}; lifetime {int(self.istate[1])} "
                             f"born at t={t:.17g} from x={np.array2string(x, precision=17)}")

    # summaries --------------------------------------------------------
    def checkpoint(self, t):
        for c in self.checkpoints:
            if c.time == t:
                return c
        raise InvalidInputError(f"no checkpoint at t={t}")

    def _mix(self, path_part, prior_part, g, mode):
        if mode == "path_only":
            return path_part / g
        r = self.cfg.r
        return (r * prior_part + path_part) / (r + g)

    def marginals_at(self, c, mode=None):
        mode = mode or self.cfg.hist_mode
        prior = np.array([self.problem.mu0.bin_masses(self.cfg.bins, a) for a in range(self.cfg.dim)])
        return self._mix(c.marginals, prior, c.g, mode)

    def moments_at(self, c, mode=None):
        mode = mode or self.cfg.hist_mode
        fam = fourier_family(self.cfg.dim, self.cfg.n_terms)
        return self._mix(c.moments, self.problem.mu0.integrate_family(fam), c.g, mode)

    def cells_at(self, c, mode="full"):
        return self._mix(c.cells, self.problem.mu0.cell_masses(self.cfg.grid_n), c.g, mode)

    def trace(self):
        cfg, prob = self.cfg, self.problem
        d = cfg.dim
        fam = fourier_family(d, cfg.n_terms)
        w = dw_weights(cfg.n_terms)
        mu0_marg = np.array([prob.mu0.bin_masses(cfg.bins, a) for a in range(d)])
        mu0_mom = prob.mu0.integrate_family(fam)
        rows = [(0.0, 0, mu0_marg, mu0_mom, 0.0)]
        for c in self.checkpoints:
            if c.time in cfg.checkpoints:
                rows.append((c.time, c.rebirths, self.marginals_at(c), self.moments_at(c), c.wall_ms))
        hists = np.array([r[2] for r in rows])
        tv = np.array([max(0.5 * np.abs(h[a] - prob.ref_bins[a]).sum() for a in range(d)) for h in hists])
        dw = np.array([float(np.sum(w * np.abs(r[3] - prob.ref_moments))) for r in rows])
        if self.measure is not None and cfg.events:
            kt, pre, post = self.measure.events() if self.keep_path else (np.empty(0),) * 3
            events = (kt[:cfg.events], pre[:cfg.events], post[:cfg.events])
        else:
            events = (np.empty(0), np.empty((0, d)), np.empty((0, d)))
        meta = dict(reference=prob.reference, kappa_lower=prob.killing.kappa_lower,
                    kappa_upper=prob.killing.kappa_upper, K=prob.killing.offset_K,
                    family="fourier-l1-order", n_terms=cfg.n_terms, hist_mode=cfg.hist_mode,
                    seeds=_seed_label(cfg.seeds, self.replica),
                    lifetimes=int(self.istate[1]), steps=int(self.istate[0]))
        return RunTrace(np.array([r[0] for r in rows]), np.array([r[1] for r in rows], dtype=np.int64),
                        tv, dw, np.array([r[4] for r in rows]), hists,
                        np.linspace(0.0, TWO_PI, cfg.bins + 1), events, meta)


def _seed_label(seeds, replica):
    return f"{seeds[0]},{seeds[1]},{seeds[2]}" + (f"#replica{replica}" if replica else "")


def run(cfg, problem=None, **kwargs):
    """Convenience wrapper: build an :class:`Engine` and run it."""
    return Engine(cfg, problem, **kwargs).run()


def replay(cfg, problem=None):
    """Re-run ``cfg``; the result equals the original trace (wall time aside)."""
    return run(cfg, problem)


def run_replicas(cfg, replicas, problem=None, workers=None, keep_path=False):
    """
    Run ``replicas`` independent engines (replica ``i`` reseeds via spawn key
    ``i``) on a thread pool and return their traces in replica order.
    """
    if replicas < 1:
        raise ConfigError("replicas must be >= 1", key="--replicas")
    problem = problem if problem is not None else build_problem(cfg)

    def one(i):
        return Engine(cfg, problem, replica=i, keep_path=keep_path or cfg.events > 0).run()

    with ThreadPoolExecutor(max_workers=workers or replicas) as pool:
        return list(pool.map(one, range(replicas)))


def median_trace(traces):
    """Checkpoint-wise median of tv, dw and rebirths; histograms are averaged."""
    times = traces[0].times
    for t in traces[1:]:
        if not np.array_equal(t.times, times):
            raise InvalidInputError("replica traces have different checkpoints")
    stack = lambda name: np.array([getattr(t, name) for t in traces])
    return RunTrace(times, np.median(stack("rebirths"), axis=0), np.median(stack("tv"), axis=0),
                    np.median(stack("dw"), axis=0), np.max(stack("wall_ms"), axis=0),
                    np.mean(stack("histograms"), axis=0), traces[0].bin_edges,
                    (np.empty(0), np.empty((0, 1)), np.empty((0, 1))),
                    dict(traces[0].metadata, replicas=len(traces), aggregate="median"))
