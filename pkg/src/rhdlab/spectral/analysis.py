"""Asymptotic fits, spectral-gap scans and pointwise semigroup bounds."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import FitError
from ..model import ValidatedParams
from .expm import matrix_exponential_oracle
from .symbol import (
    longitudinal_roots, projector_batch, semigroup_batch, symbol_batch, track_branches,
)

LOW_BAND = (1e-3, 1e-2)
HIGH_BAND = (1e2, 1e3)


@dataclass
class FittedCoefficient:
    name: str
    fitted: float
    target: float | None
    rel_err: float | None
    slope: float
    expected_slope: float
    reference: float | None = None

    def ok(self, tol):
        return self.target is None or (self.rel_err is not None and self.rel_err <= tol)


@dataclass
class ExpansionReport:
    regime: str
    kappa_case: str
    tol: float
    coefficients: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.ok(self.tol) for c in self.coefficients)

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def low_frequency_targets(p: ValidatedParams):
    """Leading coefficients of the small-|xi| expansions.

    Returns (sigma1, d1, d2): lambda1 ~ -sigma1 |xi|^2 and
    lambda2 ~ -d1 |xi|^2 + i d2 |xi|.
    """
    sigma1 = (p.kappa + 4.0) / (p.R + p.C_v)
    d1 = p.nu / 2.0 + (p.kappa + 4.0) * p.R / (2.0 * p.C_v * (p.C_v + p.R))
    d2 = np.sqrt(p.R + p.R ** 2 / p.C_v)
    return sigma1, d1, float(d2)


def high_frequency_limits_no_conduction(p: ValidatedParams):
    """O(1) limits of lambda1, lambda3 as |xi| -> inf when kappa = 0.

    Dividing the cubic by nu |xi|^2 leaves
    nu l^2 + (nu h_inf + R + R^2/C_v) l + R h_inf = 0 with h_inf = 4/C_v.
    Returned as (lambda1_limit, lambda3_limit), least damped first.
    """
    h_inf = 4.0 / p.C_v
    b = p.nu * h_inf + p.R + p.R ** 2 / p.C_v
    disc = np.sqrt(b * b - 4.0 * p.nu * p.R * h_inf)
    return (-b + disc) / (2.0 * p.nu), (-b - disc) / (2.0 * p.nu)


def _lead_fit(a, y, powers):
    """Least-squares fit y ~ sum_k c_k a^powers[k], relative to the leading term."""
    B = np.stack([a ** q for q in powers], axis=1)
    w = a ** powers[0]
    coef, *_ = np.linalg.lstsq(B / w[:, None], y / w, rcond=None)
    return coef


def _loglog_slope(a, y):
    return float(np.polyfit(np.log(a), np.log(np.abs(y)), 1)[0])


def _coef(name, a, y, powers, target, tol_slope, reference=None):
    fitted = float(_lead_fit(a, y, powers)[0])
    slope = _loglog_slope(a, y)
    if abs(slope - powers[0]) > tol_slope:
        raise FitError(f"{name}: log-log slope {slope:.4f}, expected {powers[0]}")
    rel = None if target is None else abs(fitted - target) / abs(target)
    return FittedCoefficient(name=name, fitted=fitted, target=target, rel_err=rel,
                             slope=slope, expected_slope=float(powers[0]), reference=reference)


def asymptotic_fit(p: ValidatedParams, regime: str, grid=None, n: int = 64,
                   tol: float = 0.01, slope_tol: float = 0.1) -> ExpansionReport:
    """Fit leading small- or large-|xi| behaviour of each branch."""
    if grid is None:
        lo, hi = LOW_BAND if regime == "low" else HIGH_BAND
        grid = np.logspace(np.log10(lo), np.log10(hi), n)
    a = np.asarray(grid, dtype=float)
    lam = track_branches(a, p)
    l1, l2, l3 = lam[:, 0], lam[:, 1], lam[:, 2]
    rep = ExpansionReport(regime=regime, kappa_case="positive" if p.kappa > 0 else "zero", tol=tol)
    if regime == "low":
        sigma1, d1, d2 = low_frequency_targets(p)
        rep.coefficients = [
            _coef("lambda1/|xi|^2", a, l1.real, (2, 4), -sigma1, slope_tol),
            _coef("-Re lambda2/|xi|^2", a, -l2.real, (2, 4), d1, slope_tol),
            _coef("Im lambda2/|xi|", a, l2.imag, (1, 3), d2, slope_tol),
        ]
    elif regime == "high":
        lam2 = _coef("lambda2/|xi|^2", a, l2.real, (2, 0), -p.nu, slope_tol)
        if p.kappa > 0:
            rep.coefficients = [
                _coef("lambda1", a, l1.real, (0, -2), -p.R / p.nu, slope_tol),
                lam2,
                _coef("lambda3/|xi|^2", a, l3.real, (2, 0), -p.kappa / p.C_v, slope_tol),
            ]
        else:
            r1, r3 = high_frequency_limits_no_conduction(p)
            c1 = _coef("lambda1", a, l1.real, (0, -2), None, slope_tol, reference=r1)
            c3 = _coef("lambda3", a, l3.real, (0, -2), None, slope_tol, reference=r3)
            for c in (c1, c3):
                if c.fitted >= 0:
                    raise FitError(f"{c.name} limit {c.fitted} is not negative")
            rep.coefficients = [c1, lam2, c3]
            for c in (c1, c3):
                c.reference = float(c.reference)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return rep


@dataclass
class GapScan:
    eps: float
    K: float
    n_samples: int
    max_re: float
    argmax_xi: float
    coalescence_candidates: list
    flagged: list

    @property
    def passed(self):
        return self.max_re < 0

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _pairwise_gap(lam_all):
    d = np.abs(lam_all[:, :, None] - lam_all[:, None, :])
    mag = np.maximum(np.abs(lam_all)[:, :, None], np.abs(lam_all)[:, None, :])
    iu = np.triu_indices(lam_all.shape[1], k=1)
    return (d / mag)[:, iu[0], iu[1]].min(axis=1)


def spectral_gap_scan(p: ValidatedParams, eps: float = 1e-2, K: float = 1e2,
                      n_samples: int = 10_000, candidate_level: float = 1e-2) -> GapScan:
    """Largest Re lambda over all branches on a log grid of eps <= |xi| <= K.

    Local minima of the relative pairwise branch distance below
    ``candidate_level`` are returned as candidate coalescence frequencies.
    """
    if not 0 < eps < K:
        raise ValueError("need 0 < eps < K")
    a = np.logspace(np.log10(eps), np.log10(K), n_samples)
    lam, lam4, deg = longitudinal_roots(a, p)
    lam_all = np.concatenate([lam, lam4[:, None]], axis=1)
    re_max = lam_all.real.max(axis=1)
    i = int(np.argmax(re_max))
    gap = _pairwise_gap(lam_all)
    interior = (gap[1:-1] <= gap[:-2]) & (gap[1:-1] <= gap[2:]) & (gap[1:-1] < candidate_level)
    cand = a[1:-1][interior]
    return GapScan(eps=eps, K=K, n_samples=n_samples, max_re=float(re_max[i]),
                   argmax_xi=float(a[i]), coalescence_candidates=[float(x) for x in cand],
                   flagged=[float(x) for x in a[deg]])


@dataclass
class PointwiseBound:
    eps: float
    c_low: float
    C_low: float
    c_high: float
    C_high: float
    prefactor_cap: float

    @property
    def passed(self):
        return self.c_low > 0 and self.c_high > 0

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


_DIRECTIONS = np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 1.0]]) / np.array([[1.0], [np.sqrt(3.0)]])


def _entry_max(p, a, t_grid):
    """max_ij |G_ij(t, xi)| on an (|xi|, t) grid, maximised over sample directions."""
    out = np.zeros((a.size, len(t_grid)))
    xi = (a[:, None, None] * _DIRECTIONS[None]).reshape(-1, 3)
    for k, t in enumerate(t_grid):
        G = semigroup_batch(xi, float(t), p)
        out[:, k] = np.abs(G).reshape(a.size, -1).max(axis=1)
    return out


def _best_rate(gmax, exponent, rates, cap):
    """Largest rate c with max(gmax * exp(c * exponent)) <= cap, and that max."""
    for c in rates:
        with np.errstate(over="ignore"):
            C = float(np.max(gmax * np.exp(c * exponent)))
        if C <= cap:
            return float(c), C
    return 0.0, float("inf")


def pointwise_bound_fit(p: ValidatedParams, xi_grid, t_grid, eps: float = 1e-2,
                        prefactor_cap: float = 4.0, rates=None) -> PointwiseBound:
    """Fit |G_ij| <= C exp(-c |xi|^2 t) for |xi| <= eps and C exp(-c t) above.

    A decay rate c is swept downwards from 10 and the first one whose
    prefactor C stays below ``prefactor_cap`` on the grid is returned. Empty
    frequency bands report c = inf, C = 0.
    """
    xi_grid = np.asarray(xi_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    if xi_grid.size == 0 or t_grid.size == 0:
        raise ValueError("grids must be non-empty")
    if rates is None:
        rates = np.geomspace(10.0, 1e-6, 400)
    low = xi_grid[xi_grid <= eps]
    high = xi_grid[xi_grid >= eps]
    c_low = c_high = float("inf")
    C_low = C_high = 0.0
    if low.size:
        g = _entry_max(p, low, t_grid)
        c_low, C_low = _best_rate(g, (low[:, None] ** 2) * t_grid[None, :], rates, prefactor_cap)
    if high.size:
        g = _entry_max(p, high, t_grid)
        c_high, C_high = _best_rate(g, np.broadcast_to(t_grid[None, :], g.shape), rates, prefactor_cap)
    return PointwiseBound(eps=eps, c_low=c_low, C_low=C_low, c_high=c_high, C_high=C_high,
                          prefactor_cap=prefactor_cap)


@dataclass
class OracleSweep:
    samples: int
    seed: int
    max_semigroup_err: float
    max_completeness_err: float
    max_idempotency_err: float
    skipped_degenerate: int

    def passed(self, tol=1e-8, proj_tol=1e-8, idem_tol=1e-7):
        return (self.max_semigroup_err < tol and self.max_completeness_err < proj_tol
                and self.max_idempotency_err < idem_tol)

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed()
        return d


def random_frequency_samples(samples: int, seed: int, xi_range=(1e-3, 1e3), t_max=10.0):
    """Seeded (xi, t) pairs: log-uniform |xi|, uniform direction, uniform t."""
    rng = np.random.default_rng(seed)
    mag = 10.0 ** rng.uniform(np.log10(xi_range[0]), np.log10(xi_range[1]), samples)
    d = rng.standard_normal((samples, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t = rng.uniform(0.0, t_max, samples)
    return mag[:, None] * d, t


def semigroup_oracle_sweep(p: ValidatedParams, samples: int = 100, seed: int = 7) -> OracleSweep:
    """Compare the spectral sum against scaling and squaring on random (xi, t).

    Projector completeness and idempotency are checked at every sample
    whose spectrum is simple.
    """
    xi, t = random_frequency_samples(samples, seed)
    A = symbol_batch(xi, p)
    err = 0.0
    for i in range(samples):
        G = semigroup_batch(xi[i:i + 1], float(t[i]), p)[0]
        ref = matrix_exponential_oracle(t[i] * A[i])
        err = max(err, float(np.max(np.abs(G - ref))))
    a = np.linalg.norm(xi, axis=1)
    lam, _, deg = longitudinal_roots(a, p)
    ok = ~deg
    P = projector_batch(xi[ok], lam[ok], p)
    comp = float(np.max(np.abs(P.sum(axis=1) - np.eye(5)))) if ok.any() else 0.0
    idem = float(np.max(np.abs(P @ P - P))) if ok.any() else 0.0
    return OracleSweep(samples=samples, seed=seed, max_semigroup_err=err,
                       max_completeness_err=comp, max_idempotency_err=idem,
                       skipped_degenerate=int(deg.sum()))
