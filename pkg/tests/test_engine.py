import math

import numpy as np
import pytest

from rescale.engine import Engine, RunConfig, build_problem, grid_bin_masses, median_trace, replay, run, run_replicas
from rescale.errors import ConfigError
from rescale.occupation import fourier_family
from rescale.torus import TWO_PI, torus_distance


def small(**kw):
    base = dict(T_end=200.0, checkpoints=(25.0, 100.0, 200.0), events=100_000)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def fig1_problem():
    return build_problem(small())


def test_constant_rate_rebirths_are_poisson():
    c, T = 2.0, 500.0
    cfg = RunConfig(kappa_mode="explicit", kappa_field="fourier:2", T_end=T, checkpoints=(T,),
                    oracle_n=32, events=0)
    tr = run(cfg)
    assert abs(tr.rebirths[-1] - c * T) < 3 * math.sqrt(c * T)
    assert tr.metadata["reference"].startswith("oracle_qsd")


def test_t_end_zero_has_only_initial_row():
    tr = run(RunConfig(T_end=0.0, checkpoints=()))
    assert tr.times.tolist() == [0.0]
    assert np.allclose(tr.histograms[0], 1 / 50, atol=1e-15)
    assert tr.rebirths.tolist() == [0]


def test_checkpoint_validation():
    with pytest.raises(ConfigError):
        RunConfig(T_end=10.0, checkpoints=(5.0, 20.0))
    with pytest.raises(ConfigError):
        RunConfig(checkpoints=(100.0, 25.0))
    with pytest.raises(ConfigError):
        RunConfig(method="exact")


def test_replay_is_identical(fig1_problem):
    cfg = small()
    a = run(cfg, fig1_problem)
    b = replay(cfg, fig1_problem)
    assert a == b and a.digest() == b.digest()
    assert np.all(np.diff(a.rebirths) >= 0)


def test_rebirth_seed_isolates_first_lifetime(fig1_problem):
    a = run(small(seeds=(1, 2, 3)), fig1_problem)
    b = run(small(seeds=(1, 2, 4)), fig1_problem)
    assert a.events[0][0] == b.events[0][0]
    assert np.array_equal(a.events[1][0], b.events[1][0])
    assert not np.array_equal(a.events[2][:5], b.events[2][:5])


def test_diffusion_seed_changes_trace(fig1_problem):
    a = run(small(seeds=(1, 2, 3)), fig1_problem)
    b = run(small(seeds=(9, 2, 3)), fig1_problem)
    assert a.tv[1] != b.tv[1]


def test_path_has_no_jumps_between_kills(fig1_problem):
    eng = Engine(small(T_end=100.0, checkpoints=(100.0,)), fig1_problem)
    eng.run()
    m = eng.measure
    # driftless: a step exceeding 8 standard deviations has probability ~1e-15
    bound = 8 * math.sqrt(0.05)
    for i in range(len(m.births)):
        stop = m.offsets[i + 1] if i + 1 < len(m.births) else len(m.states)
        seg = m.states[m.offsets[i]:stop]
        assert np.all(torus_distance(seg[1:], seg[:-1]) < bound)


def test_trace_matches_occupation_measure(fig1_problem):
    eng = Engine(small(), fig1_problem)
    tr = eng.run()
    m = eng.measure
    fam = fourier_family(1, 12)
    for c in eng.checkpoints:
        view = m.at(c.time)
        assert np.allclose(view.histogram(50), eng.marginals_at(c)[0], atol=1e-12)
        assert np.allclose(view.integrate_family(fam, "path_only"), eng.moments_at(c), atol=1e-12)
        assert np.allclose(view.cell_masses(200), eng.cells_at(c), atol=1e-12)
        assert view.rebirths == c.rebirths
    assert np.all(tr.tv >= 0) and np.all(tr.dw <= 2)


def test_engine_matches_python_rebirth_rule(fig1_problem):
    # replay the engine's rebirth draws with the occupation-measure sampler
    from rescale.sde import RngStreams
    eng = Engine(small(T_end=50.0, checkpoints=(50.0,)), fig1_problem)
    eng.run()
    m = eng.measure
    rng = RngStreams.from_seeds(1, 2, 3)
    for i in range(1, min(len(m.births), 40)):
        view = m.at(m.births[i])
        x = view.sample_rebirth(rng)
        assert np.array_equal(x, m.states[m.offsets[i]])


def test_thinning_engine_runs(fig1_problem):
    tr = run(small(method="thinning", T_end=100.0, checkpoints=(100.0,)), fig1_problem)
    assert tr.tv[-1] < 0.5


def test_grid_bin_masses_aggregates():
    m = np.arange(1, 201, dtype=float)
    m /= m.sum()
    b = grid_bin_masses(m, 200, 1, 50)
    assert np.allclose(b, m.reshape(50, 4).sum(axis=1), atol=1e-15)


def test_replicas_and_median(fig1_problem):
    cfg = small(T_end=100.0, checkpoints=(100.0,), events=0)
    traces = run_replicas(cfg, 3, fig1_problem)
    assert len({t.digest() for t in traces}) == 3
    again = run_replicas(cfg, 3, fig1_problem, workers=1)
    assert [t.digest() for t in traces] == [t.digest() for t in again]
    med = median_trace(traces)
    assert med.tv[-1] == np.median([t.tv[-1] for t in traces])


def test_two_dimensional_run():
    cfg = RunConfig(dim=2, K=3.5, T_end=50.0, checkpoints=(50.0,), bins=20, oracle_n=16, kappa_grid_n=64)
    tr = run(cfg)
    assert tr.histograms.shape == (2, 2, 20)
    assert np.allclose(tr.histograms.sum(axis=2), 1.0)
