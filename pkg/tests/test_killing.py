import numpy as np
import pytest

from rescale.errors import AssumptionViolationError, InvalidDensityError, InvalidInputError
from rescale.killing import calibrate_K, certify, certify_bounds, kappa_from_pi
from rescale.oracle import Oracle, l1
from rescale.torus import TWO_PI, FourierField, builtin_field, cosexp, trimodal

# The trimodal rate is 2.25(2cos^2(1.5t) - 1)/(0.3 + sin^2(1.5t)) + K.  Its
# minimum sits at t = pi/3 where the expression equals -2.25/1.3 = -45/26.
KAPPA_MIN_K0 = -45.0 / 26.0


def closed_form(th, K=1.75):
    return 2.25 * (2 * np.cos(1.5 * th) ** 2 - 1) / (0.3 + np.sin(1.5 * th) ** 2) + K


def test_kappa_at_origin_is_9_25(zero_drift):
    kappa = kappa_from_pi(trimodal(1), zero_drift, 1.75)
    assert float(kappa.value(np.array([0.0]))) == pytest.approx(9.25, abs=1e-12)


def test_kappa_matches_closed_form(zero_drift):
    th = np.linspace(0, TWO_PI, 257)
    kappa = kappa_from_pi(trimodal(1), zero_drift, 1.75)
    assert np.allclose(kappa.value(th[:, None]), closed_form(th), atol=1e-12)


def test_uniform_pi_gives_constant_rate(zero_drift):
    kappa = kappa_from_pi(builtin_field("uniform", 1), zero_drift, 3.0)
    assert np.allclose(kappa.value(np.linspace(0, 6, 9)[:, None]), 3.0, atol=1e-14)


def test_cosexp_rate_symbolic(zero_drift):
    th = np.linspace(0, TWO_PI, 100)
    kappa = kappa_from_pi(cosexp(1), zero_drift, 0.4)
    assert np.allclose(kappa.value(th[:, None]), 0.5 * (np.sin(th) ** 2 - np.cos(th)) + 0.4, atol=1e-12)


def test_kappa_with_drift_uses_gradient_term():
    # pi = cosexp, A = 0.5 cos: grad pi / pi = -sin, grad A = -0.5 sin, lap A = -0.5 cos
    A = FourierField([[1]], [0.5])
    th = np.linspace(0, TWO_PI, 50)
    kappa = kappa_from_pi(cosexp(1), A, 0.0)
    grad_pi_over_pi = -np.sin(th)
    expect = 0.5 * (np.sin(th) ** 2 - np.cos(th)) - (-0.5 * np.sin(th)) * grad_pi_over_pi - (-0.5 * np.cos(th))
    assert np.allclose(kappa.value(th[:, None]), expect, atol=1e-12)


def test_nonpositive_density_rejected(zero_drift):
    with pytest.raises(InvalidDensityError):
        kappa_from_pi(FourierField([[0], [1]], [0.5, 1.0]), zero_drift, 1.0)


def test_calibrate_K_trimodal(zero_drift):
    K = calibrate_K(trimodal(1), zero_drift, 0.02, 10_000)
    assert K == pytest.approx(0.02 - KAPPA_MIN_K0, abs=1e-9)
    assert K == pytest.approx(1.7508, abs=1e-4)


def test_calibrate_K_simple_cases(zero_drift):
    assert calibrate_K(builtin_field("uniform", 1), zero_drift, 1.0) == pytest.approx(1.0, abs=1e-14)
    assert calibrate_K(cosexp(1), zero_drift, 0.1) == pytest.approx(0.6, abs=1e-9)
    with pytest.raises(InvalidInputError):
        calibrate_K(cosexp(1), zero_drift, 0.0)


def test_certify_bounds_examples(zero_drift, fig1_kappa):
    assert certify_bounds(FourierField.constant(3.0, 1)) == (3.0, 3.0)
    assert fig1_kappa.kappa_upper == pytest.approx(9.25, abs=1e-12)
    assert fig1_kappa.kappa_lower == pytest.approx(1.75 + KAPPA_MIN_K0, abs=1e-9)
    lo, hi = certify_bounds(kappa_from_pi(cosexp(1), zero_drift, 0.6))
    assert lo == pytest.approx(0.1, abs=1e-9)
    # max of (1 - c^2 - c)/2 over c = cos t is 0.625 at c = -1/2
    assert hi == pytest.approx(0.6 + 0.625, abs=1e-6)


def test_certify_rejects_rate_touching_zero(zero_drift):
    with pytest.raises(AssumptionViolationError):
        certify(kappa_from_pi(trimodal(1), zero_drift, 1.0))


def test_margin_covers_off_grid_values(fig1_kappa):
    x = np.random.default_rng(5).uniform(0, TWO_PI, (20_000, 1))
    vals = fig1_kappa.kappa.value(x)
    assert vals.max() <= fig1_kappa.thinning_bound
    assert vals.min() >= fig1_kappa.kappa_lower - fig1_kappa.margin


def test_offset_shifts_bounds_and_keeps_qsd(zero_drift):
    base = kappa_from_pi(trimodal(1), zero_drift, 1.75)
    a = certify(base)
    b = certify(base.shifted(0.5))
    assert b.kappa_lower - a.kappa_lower == pytest.approx(0.5, abs=1e-12)
    assert b.kappa_upper - a.kappa_upper == pytest.approx(0.5, abs=1e-12)
    qa = Oracle(zero_drift, a, 100).pi
    qb = Oracle(zero_drift, b, 100).pi
    assert l1(qa, qb) < 1e-10
