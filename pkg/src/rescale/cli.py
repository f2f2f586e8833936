"""
Command line: ``rescale <subcommand> [--config FILE] [--out DIR] [--seed a,b,c]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 ``--check`` failure.
"""
import argparse
import filecmp
import os
import sys
import tempfile
import time

import numpy as np

from .config import load_config
from .errors import ConfigError, NumericalError, RescaleError
from .output import fmt, masked_lines, write_atomic, write_csv, write_trace

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4


class CheckFailed(Exception):
    pass


def _non_increasing(values, slack=0.0):
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) <= slack))


def _check(args, ok, what):
    if args.check:
        print(f"check {'PASS' if ok else 'FAIL'}: {what}")
        if not ok:
            raise CheckFailed(what)


# simulate / replay ----------------------------------------------------------

def _simulate_into(cfg, out, replicas):
    from .engine import Engine, build_problem, median_trace, run_replicas
    problem = build_problem(cfg.run)
    if replicas <= 1:
        trace = Engine(cfg.run, problem, keep_path=cfg.run.events > 0).run()
        write_trace(out, trace, cfg.run.dim)
        return trace
    traces = run_replicas(cfg.run, replicas, problem)
    for i, tr in enumerate(traces):
        write_trace(os.path.join(out, f"replica_{i}"), tr, cfg.run.dim)
    agg = median_trace(traces)
    write_trace(out, agg, cfg.run.dim)
    return agg


def cmd_simulate(args, cfg):
    trace = _simulate_into(cfg, args.out, args.replicas)
    for row in zip(trace.times, trace.rebirths, trace.tv, trace.dw):
        print("t={} rebirths={} tv={:.6g} dw={:.6g}".format(fmt(row[0]), int(row[1]), row[2], row[3]))
    tv = trace.tv[1:]
    _check(args, len(tv) > 0 and _non_increasing(tv) and tv[-1] <= 0.05,
           "TV to reference non-increasing across checkpoints and <= 0.05 at the last one")


def _output_files(root):
    found = []
    for base, _, files in os.walk(root):
        for f in files:
            if f.endswith(".csv") or f == "resolved.cfg":
                found.append(os.path.relpath(os.path.join(base, f), root))
    return sorted(found)


def cmd_replay(args, cfg):
    """Re-run into a scratch directory and compare with ``--out`` byte for byte."""
    original = _output_files(args.out)
    if "trace.csv" not in original:
        raise ConfigError(f"no trace.csv under {args.out}; run simulate first", key="--out")
    with tempfile.TemporaryDirectory() as scratch:
        write_atomic(os.path.join(scratch, "resolved.cfg"), cfg.resolved_text())
        _simulate_into(cfg, scratch, args.replicas)
        fresh = _output_files(scratch)
        diffs = sorted(set(original) ^ set(fresh))
        for name in sorted(set(original) & set(fresh)):
            a, b = os.path.join(args.out, name), os.path.join(scratch, name)
            if os.path.basename(name) == "trace.csv":
                same = masked_lines(a) == masked_lines(b)
            else:
                same = filecmp.cmp(a, b, shallow=False)
            if not same:
                diffs.append(name)
    if diffs:
        print("replay differs: " + ", ".join(diffs))
        raise CheckFailed("replay mismatch")
    print(f"replay identical ({len(original)} files, wall_ms masked)")


# oracle -------------------------------------------------------------------

def _oracle(cfg):
    from .engine import build_problem
    from .oracle import Oracle
    run = cfg.run
    problem = build_problem(run, oracle_factory=lambda A, k, n: Oracle(A, k, n, cfg.oracle_tol))
    return problem, Oracle(problem.drift, problem.killing, run.grid_n, cfg.oracle_tol)


def cmd_oracle_qsd(args, cfg):
    from .oracle import pi_map
    from .torus import cell_centres, cell_masses
    problem, orc = _oracle(cfg)
    n, dim = orc.n, orc.dim
    pts = cell_centres(n, dim)
    analytic = cell_masses(problem.pi, n, dim) if problem.pi is not None else np.full(n ** dim, np.nan)
    cols = ["theta"] if dim == 1 else [f"theta{j + 1}" for j in range(dim)]
    write_csv(os.path.join(args.out, "qsd.csv"), "qsd", cols + ["pi_disc", "pi_analytic"],
              (tuple(p) + (a, b) for p, a, b in zip(pts, orc.pi, analytic)),
              {"n": n, "beta": orc.qsd.beta, "residual": orc.qsd.residual})
    write_atomic(os.path.join(args.out, "beta.txt"), fmt(orc.qsd.beta) + "\n")
    fp = float(np.abs(pi_map(orc.pi, orc.resolvent) - orc.pi).sum())
    print(f"beta={orc.qsd.beta:.12g} decay_rate={1 / orc.qsd.beta:.12g} residual={orc.qsd.residual:.3g} "
          f"fixed_point_l1={fp:.3g}")
    ok = fp <= 1e-8
    if problem.pi is not None:
        err = float(np.abs(orc.pi - analytic).sum())
        print(f"l1_to_analytic={err:.6g}")
        ok = ok and err <= 0.01
    _check(args, ok, "QSD is a fixed point of Pi and matches the analytic law within 0.01 (L1)")


def flow_initials(n, dim):
    """Four point masses spread over the grid plus the uniform law."""
    size = n ** dim
    inits, names = [], []
    for q in range(4):
        idx = (q * n) // 4
        cell = sum(idx * n ** a for a in range(dim))
        v = np.zeros(size)
        v[cell] = 1.0
        inits.append(v)
        names.append(f"point{q}")
    inits.append(np.full(size, 1.0 / size))
    names.append("uniform")
    return inits, names


def cmd_oracle_flow(args, cfg):
    from .oracle import flow_integrate, tv
    _, orc = _oracle(cfg)
    T = cfg.oracle_T
    times = [0.0] + [2.0 ** j for j in range(0, 64) if 2.0 ** j <= T]
    if times[-1] < T:
        times.append(T)
    inits, names = flow_initials(orc.n, orc.dim)
    cols = []
    for mu in inits:
        _, states = flow_integrate(mu, orc.resolvent, T, cfg.oracle_dt_flow, times)
        cols.append([tv(s, orc.pi) for s in states])
    _, fixed = flow_integrate(orc.pi, orc.resolvent, T, cfg.oracle_dt_flow, times)
    drift = max(float(np.abs(s - orc.pi).sum()) for s in fixed)
    write_csv(os.path.join(args.out, "flow.csv"), "flow", ["t"] + [f"tv_{n}" for n in names],
              (tuple([t]) + tuple(c[i] for c in cols) for i, t in enumerate(times)),
              {"dt_flow": cfg.oracle_dt_flow, "fixed_point_drift_l1": drift})
    final = max(c[-1] for c in cols)
    print(f"max TV at T={fmt(T)}: {final:.3g}; fixed-point drift {drift:.3g}")
    ok = all(_non_increasing(c[1:], 1e-15) for c in cols) and final <= 1e-3 and drift <= 1e-8
    _check(args, ok, "flow TV non-increasing, <= 1e-3 at the horizon, fixed point held to 1e-8")


def cmd_oracle_contraction(args, cfg):
    from .oracle import fr_semigroup, pi_map
    _, orc = _oracle(cfg)
    rng = np.random.default_rng(cfg.run.seeds[0])
    kl = float(np.min(orc.generator.kappa))
    size = orc.generator.size
    rows, ok = [], True
    for pair in range(20):
        nu = rng.dirichlet(np.ones(size))
        mu = rng.dirichlet(np.ones(size))
        target = pi_map(mu, orc.resolvent)
        for t in (0.5, 1.0, 2.0, 4.0):
            p = fr_semigroup(mu, orc.generator, orc.resolvent, t)
            dist = float(np.abs(nu @ p - target).sum())
            bound = 2.0 * np.exp(-t * kl)
            ok = ok and dist <= bound + 1e-8
            rows.append((pair, t, dist, bound))
    write_csv(os.path.join(args.out, "contraction.csv"), "contraction", ["pair", "t", "l1", "bound"], rows,
              {"kappa_lower_grid": kl})
    print(f"max l1/bound ratio: {max(r[2] / r[3] for r in rows):.3g}")
    _check(args, ok, "||nu P_t - Pi(mu)||_1 <= 2 exp(-t kappa_lower) + 1e-8 for all pairs")


# APT -----------------------------------------------------------------------

def cmd_apt(args, cfg):
    from .apt import apt_check, snapshot_times
    from .engine import Engine, RunConfig
    from dataclasses import replace
    problem, orc = _oracle(cfg)
    sched = cfg.run.schedule
    lattice = snapshot_times(sched, cfg.apt_base_times, cfg.apt_T, cfg.apt_n_s)
    T_end = float(lattice.max())
    run = replace(cfg.run, T_end=T_end, checkpoints=(T_end,), events=0)
    reports = []
    for i in range(max(1, args.replicas)):
        eng = Engine(run, problem, replica=i, snapshot_times=lattice.ravel(), keep_path=False)
        eng.run()
        table = {c.time: eng.cells_at(c, "full") for c in eng.checkpoints}
        reports.append(apt_check(table, orc.resolvent, sched, cfg.apt_base_times, cfg.apt_T,
                                 cfg.apt_n_s, cfg.run.n_terms, cfg.run.dim, cfg.oracle_dt_flow,
                                 problem.pi, cfg.run.bins))
    med = np.median([r.discrepancy for r in reports], axis=0)
    rep = reports[0]
    write_csv(os.path.join(args.out, "apt.csv"), "apt",
              ["base_time", "wall_time", "discrepancy"] + [f"replica_{i}" for i in range(len(reports))],
              (tuple([t, lattice[j, 0], med[j]]) + tuple(r.discrepancy[j] for r in reports)
               for j, t in enumerate(cfg.apt_base_times)),
              {"T": rep.T, "n_s": rep.n_s, "floor": rep.floor, "truncation": rep.truncation,
               "binning": rep.binning, "aggregate": "median"})
    for t, d in zip(cfg.apt_base_times, med):
        print(f"t={fmt(t)} discrepancy={d:.6g}")
    print(f"floor={rep.floor:.6g} (truncation {rep.truncation:.3g} + binning {rep.binning:.3g})")
    _check(args, _non_increasing(med) and med[-1] <= 2 * rep.floor,
           "APT discrepancy non-increasing and within 2x the floor at the last base time")


# kappa ---------------------------------------------------------------------

def cmd_kappa_report(args, cfg):
    from .engine import build_problem
    from .torus import TWO_PI
    problem = build_problem(cfg.run, oracle_factory=_NoOracle)
    kr = problem.killing
    text = "\n".join([
        f"kappa = {kr.kappa.name}",
        f"K = {fmt(kr.offset_K)}",
        f"kappa_lower = {fmt(kr.kappa_lower)}",
        f"kappa_upper = {fmt(kr.kappa_upper)}",
        f"lipschitz_margin = {fmt(kr.margin)}",
        f"thinning_bound = {fmt(kr.thinning_bound)}",
        f"grid_n = {kr.grid_n}",
        f"mean_lifetime_bounds = {fmt(1 / kr.kappa_upper)}, {fmt(1 / kr.kappa_lower)}",
    ]) + "\n"
    write_atomic(os.path.join(args.out, "kappa_report.txt"), text)
    if cfg.run.dim == 1:
        theta = np.linspace(0.0, TWO_PI, 1001)[:-1]
        write_csv(os.path.join(args.out, "kappa.csv"), "kappa", ["theta", "kappa"],
                  zip(theta, kr.kappa.value(theta[:, None])))
    sys.stdout.write(text)
    _check(args, kr.kappa_lower > 0, "kappa bounded away from zero")


class _NoOracle:
    """Stand-in used when only the killing rate is needed."""

    def __init__(self, drift, kappa, n):
        self.n = n
        self.pi = np.full(n ** drift.dim, 1.0 / n ** drift.dim)


# entry point ---------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", help="seed triple diffusion,killing,rebirth")
    common.add_argument("--check", action="store_true", help="exit 4 if the run's acceptance check fails")
    p = argparse.ArgumentParser(prog="rescale", description=__doc__.split("\n")[1], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "replay"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--replicas", type=int, default=1)
    o = sub.add_parser("oracle", parents=[common])
    o.add_argument("what", choices=["qsd", "flow", "contraction"])
    a = sub.add_parser("apt-check", parents=[common])
    a.add_argument("--replicas", type=int, default=3)
    k = sub.add_parser("kappa", parents=[common])
    k.add_argument("what", choices=["report"])
    return p


def _overrides(seed):
    if not seed:
        return None
    parts = [p.strip() for p in seed.split(",")]
    if len(parts) != 3:
        raise ConfigError("--seed needs three comma-separated integers", key="--seed")
    return dict(zip(("seed.diffusion", "seed.killing", "seed.rebirth"), parts))


COMMANDS = {
    "simulate": cmd_simulate,
    "replay": cmd_replay,
    ("oracle", "qsd"): cmd_oracle_qsd,
    ("oracle", "flow"): cmd_oracle_flow,
    ("oracle", "contraction"): cmd_oracle_contraction,
    "apt-check": cmd_apt,
    ("kappa", "report"): cmd_kappa_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    key = (args.command, args.what) if hasattr(args, "what") else args.command
    args.replicas = getattr(args, "replicas", 1)
    try:
        cfg = load_config(args.config, _overrides(args.seed))
        os.makedirs(args.out, exist_ok=True)
        if args.command != "replay":
            write_atomic(os.path.join(args.out, "resolved.cfg"), cfg.resolved_text())
        t0 = time.perf_counter()
        COMMANDS[key](args, cfg)
        print(f"done in {time.perf_counter() - t0:.2f} s")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailed:
        return EXIT_CHECK
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        _dump(args, exc)
        return EXIT_NUMERICAL
    except RescaleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def _dump(args, exc):
    try:
        write_atomic(os.path.join(args.out, "diagnostic.txt"), f"{type(exc).__name__}: {exc}\n")
    except OSError:
        pass


if __name__ == "__main__":
    sys.exit(main())
