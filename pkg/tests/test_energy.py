import csv
import io
import json

import numpy as np
import pytest

from rhdlab.energy import (
    F_from_curves, F_from_trajectory, audit_apriori, bootstrap_G, cross_term, dissipation,
    hk_norm, lyapunov_functional, weighted_energy,
)
from rhdlab.errors import EquivalenceError
from rhdlab.linear import RadialPropagator, decay_curve, gaussian_profile, radial_grid
from rhdlab.model import reference_params
from rhdlab.solver import GridSpec, SolverConfig, init_grid, random_smooth_state, run, step

TWO_PI = 2 * np.pi


@pytest.fixture(scope="module")
def ctx():
    return init_grid(GridSpec(16, TWO_PI), reference_params(1.0), 0.05)


def _spec(ctx, *fields):
    return ctx.fft(np.stack(fields).astype(float))


def test_hk_norm_constant(ctx):
    f = _spec(ctx, np.full((16,) * 3, -3.0))
    assert hk_norm(f, ctx, 0) == pytest.approx(3.0 * TWO_PI ** 1.5, rel=1e-14)
    assert hk_norm(f, ctx, 2) == pytest.approx(hk_norm(f, ctx, 0), rel=1e-14)


def test_hk_norm_sine(ctx):
    x, _, _ = ctx.grid_points()
    f = ctx.fft(np.sin(x))
    assert hk_norm(f, ctx, 0) ** 2 == pytest.approx(TWO_PI ** 3 / 2, rel=1e-13)
    assert hk_norm(f, ctx, 1) ** 2 == pytest.approx(TWO_PI ** 3, rel=1e-13)


def test_parseval(ctx):
    U = random_smooth_state(ctx, 0.3, seed=8, k_init=4)
    phys = ctx.ifft(U)
    quad = np.sum(phys ** 2) * ctx.spec.dx ** 3
    assert hk_norm(U, ctx, 0) ** 2 == pytest.approx(quad, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_hk_monotone_in_k(ctx, seed):
    U = random_smooth_state(ctx, 0.1, seed=seed, k_init=4)
    vals = [hk_norm(U, ctx, k) for k in range(5)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        hk_norm(U, ctx, -1)


def test_lyapunov_zero_and_orthogonal(ctx):
    zero = np.zeros((5,) + ctx.xi2.shape, dtype=complex)
    assert lyapunov_functional(zero, ctx, 0) == (0.0, 1.0)
    x, y, _ = ctx.grid_points()
    z = np.zeros_like(x)
    U = _spec(ctx, np.cos(x), np.sin(y), z, z, z)
    F, ratio = lyapunov_functional(U, ctx, 0)
    norm_sq = sum(hk_norm(U * ctx.a ** j, ctx, 0) ** 2 for j in range(3))
    assert F == pytest.approx(norm_sq, rel=1e-14) and ratio == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(ValueError):
        lyapunov_functional(U, ctx, 0, delta=0.0)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("k", [0, 1, 2])
def test_lyapunov_cauchy_schwarz(ctx, seed, k):
    U = random_smooth_state(ctx, 0.2, seed=seed, k_init=4)
    delta = 0.05
    F, _ = lyapunov_functional(U, ctx, k, delta)
    norm_sq = sum(hk_norm(U * ctx.a ** j, ctx, 0) ** 2 for j in range(k, k + 3))
    bound = sum(hk_norm(U[1:4] * ctx.a ** j, ctx, 0) * hk_norm(U[0] * ctx.a ** (j + 1), ctx, 0)
                for j in (k, k + 1))
    assert abs(F - norm_sq) <= delta * bound * (1 + 1e-12)


def test_cross_term_direct(ctx):
    x, _, _ = ctx.grid_points()
    z = np.zeros_like(x)
    U = _spec(ctx, np.sin(x), -np.cos(x), z, z, z)   # u1 = -cos x, dn/dx1 = cos x
    assert cross_term(U, ctx, 0) == pytest.approx(-TWO_PI ** 3 / 2, rel=1e-13)


def test_equivalence_corpus_and_error(ctx):
    for seed in range(6):
        for amp in (1e-3, 0.1, 0.5):
            U = random_smooth_state(ctx, amp, seed=seed, k_init=4)
            for k in range(3):
                _, r = lyapunov_functional(U, ctx, k, 0.05)
                assert 0.5 <= r <= 2.0
    x, _, _ = ctx.grid_points()
    z = np.zeros_like(x)
    aligned = _spec(ctx, np.sin(x), np.cos(x), z, z, z)
    with pytest.raises(EquivalenceError):
        lyapunov_functional(aligned, ctx, 0, delta=5.0)


def test_linear_energy_identity(ctx):
    """Along the linear flow, dL/dt = -D_exact; D here is a lower bound by design."""
    p = ctx.p
    U = random_smooth_state(ctx, 1.0, seed=1, k_init=1)
    L0 = weighted_energy(U, ctx, p, 0.0)
    h = 1e-4
    L1 = weighted_energy(step(U, h, ctx, nonlinear=False), ctx, p, 0.0)
    _, D_sub = dissipation(U, ctx, p, 0.0)
    assert (L1 - L0) / h == pytest.approx(-D_sub, rel=1e-3)


def test_audit_zero_trajectory():
    cfg = SolverConfig(grid=GridSpec(16), dt=0.1, t_final=0.5, snapshot_every=0.1)
    tr = run(cfg, initial=np.zeros((5, 16, 16, 9), dtype=complex))
    rep = audit_apriori(tr)
    assert not rep.margins.any() and rep.passed
    assert rep.fitted_constant == 0.0


@pytest.fixture(scope="module")
def audits():
    out = {}
    for kappa in (1.0, 0.0):
        for nl in (False, True):
            cfg = SolverConfig(grid=GridSpec(16), params=reference_params(kappa), dt=0.05,
                               t_final=3.0, snapshot_every=0.1, amplitude=1e-2, seed=2, nonlinear=nl)
            out[kappa, nl] = audit_apriori(run(cfg))
    return out


def test_linear_runs_strictly_decrease(audits):
    assert audits[1.0, False].strictly_decreasing and audits[0.0, False].strictly_decreasing


@pytest.mark.parametrize("kappa", [1.0, 0.0])
def test_nonlinear_margin(audits, kappa):
    rep = audits[kappa, True]
    assert rep.passed and rep.worst_margin_ratio <= 0.1
    assert rep.E1 > 0 and rep.E2 > 0 and rep.fitted_constant >= 1.0
    assert all((v >= 0).all() for v in rep.hk.values())
    assert np.allclose(rep.dissipation_raw, rep.dissipation_substituted, rtol=0.05)


def test_report_export(audits):
    rep = audits[1.0, True]
    d = json.loads(rep.to_json())
    assert d["passed"] and len(d["margins"]) == len(rep.times) - 1
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == ["t", "lyapunov", "dissipation", "F0", "F1", "F2"]
    assert len(rows) == len(rep.times) + 1


def test_audit_requires_dense_snapshots():
    cfg = SolverConfig(grid=GridSpec(16), dt=0.1, t_final=0.4, snapshot_every=0.2, amplitude=1e-3)
    with pytest.raises(ValueError):
        audit_apriori(run(cfg))


def test_bootstrap_exact_rates():
    t = np.linspace(0, 100, 401)
    for k in range(3):
        F = {i: (1 + t) ** (-1.5 - i) for i in range(k + 1)}
        G = bootstrap_G(t, F, k)
        assert np.allclose(G.G, k + 1, rtol=1e-13) and G.verdict == "bounded"


def test_bootstrap_slow_rates():
    t = np.linspace(0, 100, 401)
    G = bootstrap_G(t, {0: (1 + t) ** -1.0, 1: (1 + t) ** -1.0}, 1)
    assert G.verdict == "unbounded"
    assert np.all(np.diff(G.G) >= 0)


def test_bootstrap_on_decay_curves():
    grid = radial_grid(4097)
    p = reference_params(1.0)
    prop = RadialPropagator(grid, p)
    prof = gaussian_profile((1, 0.5, 0.5, 0.5), 2.0, grid)
    t = np.geomspace(1, 1e3, 40)
    curves = {k: decay_curve(prof, k, t, p, prop) for k in range(3)}
    times, F = F_from_curves(curves)
    assert bootstrap_G(times, F, 2).verdict == "bounded"
    slowed = {i: F[i] * (1 + times) ** 2 for i in F}
    assert bootstrap_G(times, slowed, 2).verdict == "unbounded"


def test_F_from_trajectory():
    cfg = SolverConfig(grid=GridSpec(16), dt=0.1, t_final=1.0, snapshot_every=0.5, amplitude=1e-2)
    tr = run(cfg)
    t, F = F_from_trajectory(tr, 1)
    assert t.tolist() == [0.0, 0.5, 1.0] and set(F) == {0, 1}
    assert np.all(F[0] > 0)
