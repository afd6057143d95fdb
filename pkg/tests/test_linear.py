import numpy as np
import pytest
import scipy.linalg
from scipy.integrate import quad
from scipy.special import gamma

from rhdlab.errors import FitError, QuadratureError
from rhdlab.linear import (
    DecayCurve, RadialPropagator, decay_curve, decay_target, envelope_constant,
    fit_decay_exponent, gaussian_profile, heat_kernel_curve, lower_bound_functional,
    lower_bound_scan, propagate_hat, radial_grid, sobolev_norm,
)
from rhdlab.spectral import assemble_symbol


@pytest.fixture(scope="module")
def grid():
    return radial_grid(4097)


def gaussian_moment(w, k):
    """(4 pi int r^(2k) e^{-2 w r^2} r^2 dr)^(1/2) via the Gamma function."""
    return np.sqrt(4 * np.pi * gamma(k + 1.5) / (2 * (2 * w) ** (k + 1.5)))


def test_profile_definition(grid):
    prof = gaussian_profile((1, 0, 0, 0), 0.5, grid)
    assert prof.hat_n[0] == pytest.approx(1.0, abs=1e-8)
    assert not prof.hat_m.any() and not prof.hat_u_par.any() and not prof.hat_u_perp.any()
    prof = gaussian_profile((0, 0, 0, 1), 0.5, grid)
    assert np.allclose(prof.hat_m, np.exp(-grid ** 2 / 2), rtol=1e-15)
    assert prof.meta["l1"] == 1.0
    with pytest.raises(ValueError):
        gaussian_profile((1, 0, 0, 0), 0.0, grid)


@pytest.mark.parametrize("w", [0.25, 0.5, 1.0, 4.0])
@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_sobolev_norm_closed_form(grid, w, k):
    prof = gaussian_profile((0, 0, 0, 1), w, grid)
    assert sobolev_norm(prof, k) == pytest.approx(gaussian_moment(w, k), rel=1e-10)


def test_sobolev_norm_reference_value(grid):
    prof = gaussian_profile((0, 0, 0, 1), 0.5, grid)
    assert sobolev_norm(prof, 0) == pytest.approx(np.pi ** 0.75, rel=1e-12)
    assert sobolev_norm(gaussian_profile((0, 0, 0, 0), 1.0, grid), 0) == 0.0
    with pytest.raises(ValueError):
        sobolev_norm(prof, -1)


def test_quadrature_tail_error():
    short = radial_grid(513, 1e-4, 1.0)
    with pytest.raises(QuadratureError):
        sobolev_norm(gaussian_profile((1, 0, 0, 0), 0.1, short), 0)


def test_propagate_identity_and_transverse(grid, p1):
    prof = gaussian_profile((0.3, 0.2, 0.7, -0.4), 1.0, grid)
    same = propagate_hat(prof, 0.0, p1)
    assert np.array_equal(same.hat, prof.hat)
    assert sobolev_norm(same, 0) == sobolev_norm(prof, 0)
    tr = gaussian_profile((0, 0, 1, 0), 1.0, grid)
    out = propagate_hat(tr, 2.5, p1)
    assert np.allclose(out.hat_u_perp, tr.hat_u_perp * np.exp(-p1.mu * grid ** 2 * 2.5), rtol=1e-12, atol=0)
    assert not out.hat_n.any() and not out.hat_m.any() and not out.hat_u_par.any()
    with pytest.raises(ValueError):
        propagate_hat(prof, -1.0, p1)


def test_propagate_matches_nodewise_expm(p1):
    r = np.geomspace(1e-3, 30, 41)
    prof = gaussian_profile((1, 0.5, 0.5, 0.5), 1.0, r)
    out = propagate_hat(prof, 1.0, p1)
    for i in range(0, r.size, 5):
        G = scipy.linalg.expm(assemble_symbol(np.array([r[i], 0, 0]), p1).entries)
        assert np.abs(out.hat[i] - G @ prof.hat[i]).max() < 1e-10


def test_heat_kernel_control():
    t = np.geomspace(1, 1e5, 80)
    c = heat_kernel_curve(0.5, 0, np.concatenate([[0.0], t]), grid=radial_grid(8193, 1e-6, 1e3))
    assert np.allclose(c.norms, np.pi ** 0.75 * (1 + 2 * c.times) ** -0.75, rtol=1e-10)
    slopes = [fit_decay_exponent(c, (10, T2), target=-0.75).slope for T2 in (1e2, 1e3, 1e5)]
    errs = [abs(s + 0.75) for s in slopes]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 5e-3


@pytest.fixture(scope="module")
def decay_runs(grid):
    from rhdlab.model import reference_params

    p = reference_params(1.0)
    prop = RadialPropagator(grid, p)
    prof = gaussian_profile((1, 0.5, 0.5, 0.5), 2.0, grid)
    times = np.geomspace(1, 1e3, 60)
    return {k: decay_curve(prof, k, times, p, prop) for k in range(3)}, prof


@pytest.mark.parametrize("k", [0, 1, 2])
def test_decay_slopes(decay_runs, k):
    fit = fit_decay_exponent(decay_runs[0][k])
    assert fit.target == -0.75 - k / 2
    assert fit.passed, fit
    assert abs(fit.asymptotic_slope - fit.target) < 0.02


def test_exponent_additivity(decay_runs):
    curves = decay_runs[0]
    s0 = fit_decay_exponent(curves[0]).slope
    for k in (1, 2):
        assert abs(fit_decay_exponent(curves[k]).slope - s0 + k / 2) <= 0.05


def test_monotone_envelope(decay_runs):
    curves, prof = decay_runs
    data = prof.meta["l1"] + sobolev_norm(prof, 0)
    c = envelope_constant(curves[0], -0.75, data)
    assert np.isfinite(c) and c > 0
    assert np.all(curves[0].norms <= c * (1 + curves[0].times) ** -0.75 * data * (1 + 1e-12))


def test_vanishing_profile_target(grid, p1):
    prof = gaussian_profile((1, 0.5, 0.5, 0.5), 2.0, grid, density_order=3.0)
    assert decay_target(0, 3.0) == -1.5
    fit = fit_decay_exponent(decay_curve(prof, 0, np.geomspace(1, 1e3, 60), p1),
                             target=decay_target(0, 3.0))
    assert fit.passed


def test_decay_curve_validation(grid, p1):
    prof = gaussian_profile((1, 0, 0, 0), 1.0, grid)
    with pytest.raises(ValueError):
        decay_curve(prof, 5, [1, 2], p1)
    with pytest.raises(ValueError):
        decay_curve(prof, 0, [2, 1], p1)


def test_fit_errors():
    t = np.geomspace(1, 1e3, 50)
    wiggly = DecayCurve(0, t, (1 + t) ** -0.75 * (1 + 0.5 * np.sin(t)))
    with pytest.raises(FitError):
        fit_decay_exponent(wiggly)
    with pytest.raises(FitError):
        fit_decay_exponent(DecayCurve(0, t, (1 + t) ** -0.75), window=(2e3, 3e3))


def test_sigma_values(grid, p1):
    prof = gaussian_profile((1, 0, 0, 0), 2.0, grid)
    rep = lower_bound_scan(prof, np.array([1.0, 10.0]), p1)
    assert rep.sigma1 == 2.0
    assert rep.sigma2 == pytest.approx(7 / 6 + 5 / 7.5)
    assert rep.sigma3 == pytest.approx(np.sqrt(5 / 3))


def test_lower_bound_functional_oracle():
    s1, s2, s3, eps = 2.0, 11 / 6, np.sqrt(5 / 3), 1e-2
    for t in (1.0, 50.0, 1e3):
        f = lambda z: 4 * np.pi * z * z * (np.exp(-s1 * z * z)
                                          + np.exp(-s2 * z * z) * np.cos(s3 * z * np.sqrt(t))) ** 2
        ref = quad(f, 0, eps * np.sqrt(t), epsabs=0, epsrel=1e-12, limit=200)[0]
        assert lower_bound_functional(t, s1, s2, s3, eps) == pytest.approx(ref, rel=1e-9)
    # small ball: cos ~ 1, integrand >= e^{-2 s1 z^2}
    small = lower_bound_functional(1e-4, s1, s2, s3, eps)
    assert small >= 4 * np.pi * (eps * 1e-2) ** 3 / 3 * np.exp(-2 * s1 * 1e-8)


def test_lower_bound_scan_floor_and_decomposition(grid, p1):
    times = np.geomspace(1, 1e3, 30)
    prof = gaussian_profile((1, 0.05, 0.05, 0.05), 2.0, grid)
    rep = lower_bound_scan(prof, times, p1)
    assert rep.passed and rep.ratio_floor > 0.1 and rep.F_floor > 0
    assert rep.ratio_ceiling < 2.0
    T = rep.T_terms
    tiny = 1e-14 * T["T1"]
    assert np.all(T["n_low_sq"] >= 0.5 * T["T1"] - T["T2"] - tiny)
    assert np.all(T["T1"] >= T["T3"] - T["T4"] - tiny)
    # only n0 data: the n-row is the only contribution
    solo = lower_bound_scan(gaussian_profile((1, 0, 0, 0), 2.0, grid), times, p1)
    assert np.all(solo.T_terms["T4"] == 0)


def test_lower_bound_resolution_stability(p1):
    times = np.geomspace(1, 1e3, 20)
    floors = []
    for nodes in (2049, 4097):
        g = radial_grid(nodes)
        rep = lower_bound_scan(gaussian_profile((1, 0.05, 0.05, 0.05), 2.0, g), times, p1)
        floors.append(rep.ratio_floor)
    assert abs(floors[1] / floors[0] - 1) < 0.1
