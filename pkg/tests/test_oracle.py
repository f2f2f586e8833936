import numpy as np
import pytest

from rescale.errors import GridTooCoarseError, InvalidInputError
from rescale.killing import certify
from rescale.oracle import (build_generator, flow_integrate, fr_semigroup, l1, phi_via_tilde, pi_map,
                            principal_left_eigenvector, qsd_fixed_point, resolvent, tilde_flow,
                            tilde_log_mass, tv)
from rescale.torus import TWO_PI, FourierField, cell_centres, cell_masses, trimodal


@pytest.fixture(scope="module")
def const_setup():
    A = FourierField.constant(0.0, 1)
    gen = build_generator(A, FourierField.constant(2.0, 1), 64)
    return gen, resolvent(gen)


def test_constant_rate_generator_structure(const_setup):
    gen, _ = const_setup
    n, h = 64, TWO_PI / 64
    d2 = (np.roll(np.eye(n), 1, 1) + np.roll(np.eye(n), -1, 1) - 2 * np.eye(n)) / h ** 2
    assert np.allclose(gen.matrix, 2.0 * np.eye(n) - 0.5 * d2, atol=1e-12)
    assert np.allclose(gen.matrix.sum(axis=1), 2.0, atol=1e-12)


def test_cosine_is_eigenfunction(zero_drift):
    errs = []
    for n in (64, 128):
        gen = build_generator(zero_drift, FourierField.constant(0.0, 1), n)
        c = np.cos(cell_centres(n)[:, 0])
        errs.append(np.max(np.abs(gen.matrix @ c - 0.5 * c)))
    # discrete eigenvalue (1 - cos h)/h^2 = 1/2 - h^2/24 + ...
    assert errs[0] == pytest.approx((TWO_PI / 64) ** 2 / 24, rel=1e-2)
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=1e-2)


def test_row_sums_equal_kappa(fig1_oracle, fig1_kappa):
    gen = fig1_oracle.generator
    assert np.allclose(gen.matrix.sum(axis=1), fig1_kappa.kappa.value(cell_centres(200)), atol=1e-12, rtol=0)
    off = gen.matrix - np.diag(np.diag(gen.matrix))
    assert off.max() <= 0


def test_monotonicity_enforced(fig1_kappa):
    steep = FourierField([[1]], [10.0])
    with pytest.raises(GridTooCoarseError):
        build_generator(steep, fig1_kappa, 32)
    build_generator(steep, fig1_kappa, 64)
    with pytest.raises(InvalidInputError):
        build_generator(FourierField.constant(0.0, 1), fig1_kappa, 8)


def test_resolvent_constant_case_exact(const_setup):
    gen, res = const_setup
    assert np.allclose(res.ones, 0.5, atol=1e-10, rtol=0)
    assert res.matrix.min() > 0
    u = np.full(64, 1 / 64)
    assert np.allclose(pi_map(u, res), u, atol=1e-15)
    q = qsd_fixed_point(res)
    assert np.allclose(q.pi, u, atol=1e-14) and q.beta == pytest.approx(0.5, abs=1e-12)


def test_pi_map_of_point_mass_is_normalised_row(fig1_oracle):
    res = fig1_oracle.resolvent
    e = np.zeros(200)
    e[17] = 1.0
    assert np.allclose(pi_map(e, res), res.matrix[17] / res.matrix[17].sum(), atol=1e-16)


def test_resolvent_bounds_and_positivity(fig1_oracle):
    res = fig1_oracle.resolvent
    assert res.matrix.min() > 0
    assert res.ones.min() >= 1 / 9.25 - 1e-3
    assert res.ones.max() <= 52 + 1e-3


def test_qsd_properties(fig1_oracle):
    q = fig1_oracle.qsd
    assert q.residual <= 1e-10
    assert 1 / 9.25 <= q.beta <= 52
    assert l1(pi_map(q.pi, fig1_oracle.resolvent), q.pi) <= 1e-8
    direct, beta = principal_left_eigenvector(fig1_oracle.resolvent)
    assert l1(direct, q.pi) < 1e-9 and beta == pytest.approx(q.beta, rel=1e-10)
    # with A = 0 the decay rate is exactly K = 1.75 in the continuum
    assert 1 / q.beta == pytest.approx(1.75, rel=2e-3)


def test_round_trip_second_order(zero_drift, fig1_kappa):
    errs = []
    for n in (100, 200, 400):
        o = qsd_fixed_point(resolvent(build_generator(zero_drift, fig1_kappa, n)))
        errs.append(l1(o.pi, cell_masses(trimodal(1), n)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.allclose(rates, 2.0, atol=0.01)
    assert errs[1] < 0.01


def test_qsd_two_dimensional_round_trip():
    pi, A = trimodal(2), FourierField.constant(0.0, 2)
    from rescale.killing import kappa_from_pi
    kappa = certify(kappa_from_pi(pi, A, 3.5), grid_n=128)
    errs = []
    for n in (16, 32):
        q = qsd_fixed_point(resolvent(build_generator(A, kappa, n)))
        errs.append(l1(q.pi, cell_masses(pi, n, 2)))
    assert errs[0] / errs[1] > 3.5


def test_fr_semigroup_identity_and_stationarity(fig1_oracle, rng):
    gen, res = fig1_oracle.generator, fig1_oracle.resolvent
    mu = rng.dirichlet(np.ones(200))
    assert np.allclose(fr_semigroup(mu, gen, res, 0.0), np.eye(200), atol=1e-15)
    p = fr_semigroup(mu, gen, res, 1.0)
    target = pi_map(mu, res)
    assert l1(target @ p, target) < 1e-8


def test_fr_contraction_sample(fig1_oracle, rng):
    gen, res = fig1_oracle.generator, fig1_oracle.resolvent
    kl = gen.kappa.min()
    for _ in range(3):
        nu, mu = rng.dirichlet(np.ones(200)), rng.dirichlet(np.ones(200))
        for t in (0.5, 2.0):
            assert l1(nu @ fr_semigroup(mu, gen, res, t), pi_map(mu, res)) <= 2 * np.exp(-t * kl) + 1e-8


def test_flow_fixed_point_and_attraction(fig1_oracle):
    res, pi = fig1_oracle.resolvent, fig1_oracle.pi
    _, fixed = flow_integrate(pi, res, 100.0, 0.05, [1.0, 10.0, 100.0])
    assert max(l1(s, pi) for s in fixed) < 1e-8
    e = np.zeros(200)
    e[0] = 1.0
    _, traj = flow_integrate(e, res, 64.0, 0.05, [1, 2, 4, 8, 16, 32, 64])
    d = [tv(s, pi) for s in traj]
    assert np.all(np.diff(d) < 0) and d[-1] < 5e-3


def test_flow_step_halving(fig1_oracle):
    e = np.zeros(200)
    e[50] = 1.0
    a = flow_integrate(e, fig1_oracle.resolvent, 4.0, 0.1, [4.0])[1][0]
    b = flow_integrate(e, fig1_oracle.resolvent, 4.0, 0.05, [4.0])[1][0]
    assert l1(a, b) < 1e-6


def test_tilde_flow_examples(fig1_oracle):
    res, q = fig1_oracle.resolvent, fig1_oracle.qsd
    mu = np.full(200, 1 / 200)
    v, s = tilde_flow(mu, res, 0.0)
    assert np.array_equal(v, mu) and s == 0.0
    v, s = tilde_flow(q.pi, res, 5.0)
    assert l1(v, q.pi) < 1e-10 and s == pytest.approx(q.beta * 5.0, rel=1e-9)
    v, s = tilde_flow(mu, res, 3.0)
    assert s == pytest.approx(tilde_log_mass(mu, res, 3.0), abs=1e-7)


def test_tilde_flow_large_t_does_not_overflow(fig1_oracle):
    mu = np.full(200, 1 / 200)
    v, s = tilde_flow(mu, fig1_oracle.resolvent, 4000.0, tol=1e-6)
    assert np.isfinite(s) and l1(v, fig1_oracle.pi) < 1e-8


def test_s_derivative_bounded_below(fig1_oracle):
    mu = np.zeros(200)
    mu[0] = 1.0
    ts = np.linspace(0, 4, 9)
    s = np.array([tilde_flow(mu, fig1_oracle.resolvent, t)[1] for t in ts])
    assert np.all(np.diff(s) / np.diff(ts) >= 1 / 9.25)


def test_reduced_ode(fig1_oracle):
    res = fig1_oracle.resolvent
    mu = np.random.default_rng(3).dirichlet(np.ones(200))
    h, t = 1e-3, 0.7
    vm, vp = tilde_flow(mu, res, t - h)[0], tilde_flow(mu, res, t + h)[0]
    v = tilde_flow(mu, res, t)[0]
    rhs = v @ res.matrix - (v @ res.ones) * v
    assert np.max(np.abs((vp - vm) / (2 * h) - rhs)) < 1e-5


def test_flow_agrees_with_time_changed_tilde_flow(fig1_oracle):
    res = fig1_oracle.resolvent
    mu = np.zeros(200)
    mu[30] = 0.5
    mu[150] = 0.5
    times = [0.5, 1.0, 2.0, 4.0, 8.0]
    _, states = flow_integrate(mu, res, 8.0, 0.01, times)
    for t, s in zip(times, states):
        v, _ = phi_via_tilde(mu, res, t)
        assert tv(v, s) < 1e-6
