"""Norms, Lyapunov functionals and a priori energy audits on box trajectories.

All norms are box Parseval sums over rfft coefficients, so they are exact for
the trigonometric polynomials the solver carries.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EquivalenceError
from .model import ValidatedParams
from .solver import SolverContext, Trajectory, box_inner, init_grid, recover_flux_q

C_EQ = 2.0
DELTA = 0.05
SLACK = 0.1


def _grad_power_sq(state, ctx: SolverContext, j: int):
    """||grad^j U||^2 summed over the components of ``state`` (leading axes)."""
    return box_inner(state * ctx.a ** j, state * ctx.a ** j, ctx)


def hk_norm(state, ctx: SolverContext, k: int = 0) -> float:
    """(sum_{j<=k} ||grad^j .||^2)^{1/2} for a spectral field or stack of fields."""
    if k < 0:
        raise ValueError("k must be non-negative")
    return float(np.sqrt(sum(_grad_power_sq(state, ctx, j) for j in range(k + 1))))


def cross_term(state, ctx: SolverContext, j: int) -> float:
    """sum_{|alpha|=j} <d^alpha u, grad d^alpha n> over ordered multi-indices."""
    w = ctx.a ** (2 * j)
    grad_n = ctx.ik * state[0]
    return box_inner(state[1:4] * w, grad_n, ctx)


def lyapunov_functional(state, ctx: SolverContext, k: int = 0, delta: float = DELTA,
                        c_eq: float = C_EQ, check: bool = True):
    """F_k = ||grad^k U||_{H^2}^2 + delta sum_{k<=|alpha|<=k+1} <d^alpha u, grad d^alpha n>.

    Returns (F_k, ratio) where ratio = F_k / ||grad^k U||_{H^2}^2 (1 for the
    zero state). Raises EquivalenceError if the ratio leaves [1/c_eq, c_eq].
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    norm_sq = sum(_grad_power_sq(state, ctx, j) for j in range(k, k + 3))
    F = norm_sq + delta * sum(cross_term(state, ctx, j) for j in (k, k + 1))
    ratio = F / norm_sq if norm_sq > 0 else 1.0
    if check and not (1.0 / c_eq <= ratio <= c_eq):
        raise EquivalenceError(f"F_{k} / norm^2 = {ratio:.4g} outside [{1 / c_eq}, {c_eq}]")
    return float(F), float(ratio)


def weighted_energy(state, ctx: SolverContext, p: ValidatedParams, delta: float = DELTA) -> float:
    """L = 1/2 (R ||n||^2 + ||u||^2 + C_v ||m||^2) + delta <u, grad n>."""
    base = 0.5 * (p.R * box_inner(state[0], state[0], ctx) + box_inner(state[1:4], state[1:4], ctx)
                  + p.C_v * box_inner(state[4], state[4], ctx))
    return base + delta * cross_term(state, ctx, 0)


def dissipation(state, ctx: SolverContext, p: ValidatedParams, delta: float = DELTA):
    """Dissipation rate paired with :func:`weighted_energy`.

    Returns (raw, substituted): ``raw`` uses |q|^2/4 + |div q|^2/4 with q
    recovered from the full nonlinear closure, ``substituted`` replaces those
    by 4 sum |xi|^2/(1+|xi|^2) |m_hat|^2, their linearized value.
    """
    grad_u = _grad_power_sq(state[1:4], ctx, 1)
    div_h = np.sum(ctx.ik * state[1:4], axis=0)
    div_u = box_inner(div_h, div_h, ctx)
    grad_m = _grad_power_sq(state[4], ctx, 1)
    grad_n = _grad_power_sq(state[0], ctx, 1)
    base = p.mu * grad_u + (p.mu + p.mu_prime) * div_u + p.kappa * grad_m + 0.5 * delta * p.R * grad_n
    q, divq = recover_flux_q(ctx.ifft(state[4]), ctx)
    q_h, divq_h = ctx.fft(q), ctx.fft(divq)
    rad_raw = 0.25 * (box_inner(q_h, q_h, ctx) + box_inner(divq_h, divq_h, ctx))
    mult = np.sqrt(4.0 * ctx.xi2 / (1.0 + ctx.xi2))
    rad_sub = box_inner(mult * state[4], mult * state[4], ctx)
    return base + rad_raw, base + rad_sub


def _trapz_cumulative(t, y):
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


@dataclass
class EnergyReport:
    kappa_case: str
    delta: float
    slack: float
    times: np.ndarray
    hk: dict
    cross: dict
    F: dict
    equivalence_ratio: dict
    lyapunov: np.ndarray
    dissipation_raw: np.ndarray
    dissipation_substituted: np.ndarray
    dL: np.ndarray
    D_int: np.ndarray
    margins: np.ndarray
    E1: float
    E2: float
    fitted_constant: float
    worst_margin_ratio: float = 0.0
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return bool(np.all(self.margins <= self.slack * self.D_int + 1e-300))

    @property
    def strictly_decreasing(self):
        return bool(np.all(self.dL < 0))

    def to_dict(self):
        ser = lambda v: {str(k): np.asarray(a).tolist() for k, a in v.items()}
        return {
            "kappa_case": self.kappa_case, "delta": self.delta, "slack": self.slack,
            "times": self.times.tolist(), "hk": ser(self.hk), "cross": ser(self.cross),
            "F": ser(self.F), "equivalence_ratio": ser(self.equivalence_ratio),
            "lyapunov": self.lyapunov.tolist(),
            "dissipation_raw": self.dissipation_raw.tolist(),
            "dissipation_substituted": self.dissipation_substituted.tolist(),
            "dL": self.dL.tolist(), "D_int": self.D_int.tolist(), "margins": self.margins.tolist(),
            "E1": self.E1, "E2": self.E2, "fitted_constant": self.fitted_constant,
            "worst_margin_ratio": self.worst_margin_ratio,
            "passed": self.passed, "strictly_decreasing": self.strictly_decreasing,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = sorted(self.F)
        w.writerow(["t", "lyapunov", "dissipation"] + [f"F{k}" for k in keys])
        for i, t in enumerate(self.times):
            w.writerow([repr(float(t)), repr(float(self.lyapunov[i])), repr(float(self.dissipation_raw[i]))]
                       + [repr(float(self.F[k][i])) for k in keys])
        return buf.getvalue()


def audit_apriori(traj: Trajectory, p: ValidatedParams | None = None, delta: float = DELTA,
                  slack: float = SLACK, k_max: int = 2, max_snapshot_gap: float = 0.1,
                  ctx: SolverContext | None = None) -> EnergyReport:
    """Check L(t_{i+1}) - L(t_i) + int D <= slack * int D on every snapshot interval.

    The integral of the dissipation uses the trapezoid rule on snapshot
    times, so the check is the integrated form of dL/dt + D <= slack * D.
    """
    cfg = traj.config
    p = cfg.params if p is None else p
    t = np.asarray(traj.times, dtype=float)
    if t.size > 1 and np.max(np.diff(t)) > max_snapshot_gap * (1 + 1e-9):
        raise ValueError(f"snapshot spacing exceeds {max_snapshot_gap}")
    if ctx is None:
        ctx = init_grid(cfg.grid, p, cfg.dt)
    S = len(traj.snapshots)
    hk = {k: np.empty(S) for k in range(3)}
    cross = {j: np.empty(S) for j in range(3)}
    F = {k: np.empty(S) for k in range(k_max + 1)}
    ratio = {k: np.empty(S) for k in range(k_max + 1)}
    L = np.empty(S)
    D_raw = np.empty(S)
    D_sub = np.empty(S)
    e1 = np.empty(S)
    e2 = np.empty(S)
    for i, U in enumerate(traj.snapshots):
        for k in hk:
            hk[k][i] = hk_norm(U, ctx, k)
        for j in cross:
            cross[j][i] = cross_term(U, ctx, j)
        for k in F:
            F[k][i], ratio[k][i] = lyapunov_functional(U, ctx, k, delta, check=False)
        L[i] = weighted_energy(U, ctx, p, delta)
        D_raw[i], D_sub[i] = dissipation(U, ctx, p, delta)
        gq = lambda V, lo, hi: sum(_grad_power_sq(V, ctx, j) for j in range(lo, hi + 1))
        q, _ = recover_flux_q(ctx.ifft(U[4]), ctx)
        q_h2 = gq(ctx.fft(q), 0, 2)
        e1[i] = gq(U[0], 1, 2) + gq(U[1:4], 1, 3) + gq(U[4], 1, 3) + q_h2
        e2[i] = gq(U[0], 1, 2) + gq(U[4], 1, 2) + gq(U[1:4], 1, 3) + q_h2
    dL = np.diff(L)
    D_int = 0.5 * (D_raw[1:] + D_raw[:-1]) * np.diff(t)
    margins = dL + D_int
    with np.errstate(invalid="ignore", divide="ignore"):
        mr = np.where(D_int > 0, margins / D_int, 0.0)
    E1 = float(_trapz_cumulative(t, e1)[-1]) if S > 1 else 0.0
    E2 = float(_trapz_cumulative(t, e2)[-1]) if S > 1 else 0.0
    h2 = hk[2] ** 2
    E_cum = _trapz_cumulative(t, e1 if p.kappa > 0 else e2)
    fitted = float(np.max(h2 + E_cum) / h2[0]) if h2[0] > 0 else 0.0
    return EnergyReport(
        kappa_case="positive" if p.kappa > 0 else "zero", delta=delta, slack=slack, times=t,
        hk=hk, cross=cross, F=F, equivalence_ratio=ratio, lyapunov=L, dissipation_raw=D_raw,
        dissipation_substituted=D_sub, dL=dL, D_int=D_int, margins=margins, E1=E1, E2=E2,
        fitted_constant=fitted, worst_margin_ratio=float(mr.max()) if mr.size else 0.0,
    )


@dataclass
class FunctionalSeries:
    times: np.ndarray
    G: np.ndarray
    k_max: int
    verdict: str

    def to_dict(self):
        return {"times": self.times.tolist(), "G": self.G.tolist(), "k_max": self.k_max,
                "verdict": self.verdict}

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "G"])
        for t, g in zip(self.times, self.G):
            w.writerow([repr(float(t)), repr(float(g))])
        return buf.getvalue()


def bootstrap_G(times, F_series, k: int) -> FunctionalSeries:
    """G_k(t) = sup_{tau<=t} sum_{i<=k} (1+tau)^{3/2+i} F_i(tau).

    ``F_series`` maps i to an array of F_i on ``times``. The verdict is
    "bounded" iff G_k(T) <= 2 G_k(T/2), with T/2 taken as the last sample
    time not after half the horizon.
    """
    t = np.asarray(times, dtype=float)
    total = np.zeros_like(t)
    for i in range(k + 1):
        total += (1.0 + t) ** (1.5 + i) * np.asarray(F_series[i], dtype=float)
    G = np.maximum.accumulate(total)
    half = int(np.searchsorted(t, 0.5 * t[-1], side="right")) - 1
    verdict = "bounded" if G[-1] <= 2.0 * G[max(half, 0)] else "unbounded"
    return FunctionalSeries(times=t, G=G, k_max=k, verdict=verdict)


def F_from_curves(curves: dict) -> tuple:
    """F_i = sum_{j=i}^{i+2} ||grad^j U||^2 from decay curves keyed by derivative order.

    Orders missing from ``curves`` are dropped from the sum. All curves must
    share the same sample times.
    """
    orders = sorted(curves)
    t = np.asarray(curves[orders[0]].times)
    F = {}
    for i in orders:
        F[i] = sum(np.asarray(curves[j].norms) ** 2 for j in range(i, i + 3) if j in curves)
    return t, F


def F_from_trajectory(traj: Trajectory, k: int, delta: float = DELTA, ctx: SolverContext | None = None):
    cfg = traj.config
    if ctx is None:
        ctx = init_grid(cfg.grid, cfg.params, cfg.dt)
    F = {i: np.array([lyapunov_functional(U, ctx, i, delta, check=False)[0] for U in traj.snapshots])
         for i in range(k + 1)}
    return np.asarray(traj.times, dtype=float), F
