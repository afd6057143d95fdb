"""Fourier symbol of the linearized system, its spectrum and semigroup.

Component order everywhere is (n, u1, u2, u3, m). With a = |xi| and the
radiative-thermal damping

    h(a^2) = (kappa / C_v) a^2 + 4 a^2 / (C_v (a^2 + 1)),

the characteristic polynomial factors as

    det(A - lambda I) = -(lambda + mu a^2)^2 g(lambda),
    g(lambda) = lambda^3 + c2 lambda^2 + c1 lambda + c0,

with c2 = h + nu a^2, c1 = nu a^2 h + (R + R^2/C_v) a^2, c0 = R a^2 h and
nu = 2 mu + mu'. The three roots of g are the longitudinal branches; the
transverse branch -mu a^2 has multiplicity two.

All heavy lifting is done on stacks of frequencies; the single-frequency
functions are thin wrappers around the batched ones.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateSpectrum, RootFailure
from ..model import ValidatedParams
from .expm import matrix_exponential_oracle

COALESCENCE_TOL = 1e-6
ROOT_RESIDUAL_TOL = 1e-10
_REAL_TOL = 1e-12


@dataclass(frozen=True)
class SymbolMatrix:
    xi: np.ndarray
    entries: np.ndarray


@dataclass(frozen=True)
class CubicCoeffs:
    c2: float
    c1: float
    c0: float
    a2: float
    h: float
    c3: float = 1.0

    def __call__(self, lam):
        return ((lam + self.c2) * lam + self.c1) * lam + self.c0

    def derivative(self, lam):
        return (3.0 * lam + 2.0 * self.c2) * lam + self.c1


@dataclass(frozen=True)
class DispersionPoint:
    xi_norm: float
    lambda1: complex
    lambda2: complex
    lambda3: complex
    lambda4: float
    degenerate_flag: bool

    @property
    def longitudinal(self):
        return np.array([self.lambda1, self.lambda2, self.lambda3], dtype=complex)

    @property
    def all(self):
        return np.array([self.lambda1, self.lambda2, self.lambda3, self.lambda4], dtype=complex)


@dataclass(frozen=True)
class ProjectorSet:
    P1: np.ndarray | None
    P2: np.ndarray | None
    P3: np.ndarray | None
    P4: np.ndarray | None
    source: str

    def stack(self):
        return np.stack([self.P1, self.P2, self.P3, self.P4])


def radiative_damping(a2, p: ValidatedParams):
    a2 = np.asarray(a2, dtype=float)
    return (p.kappa / p.C_v) * a2 + 4.0 * a2 / (p.C_v * (a2 + 1.0))


def _as_xi_stack(xi):
    xi = np.asarray(xi, dtype=float)
    return xi.reshape(-1, 3)


def symbol_batch(xi, p: ValidatedParams):
    """Stack of symbols A(xi) for an (N, 3) array of frequencies."""
    xi = _as_xi_stack(xi)
    a2 = np.einsum("ij,ij->i", xi, xi)
    N = xi.shape[0]
    A = np.zeros((N, 5, 5), dtype=complex)
    A[:, 0, 1:4] = -1j * xi
    A[:, 1:4, 0] = -1j * p.R * xi
    A[:, 1:4, 4] = -1j * p.R * xi
    A[:, 4, 1:4] = -1j * (p.R / p.C_v) * xi
    A[:, 1:4, 1:4] = (-p.mu * a2[:, None, None] * np.eye(3)
                      - (p.mu + p.mu_prime) * xi[:, :, None] * xi[:, None, :])
    A[:, 4, 4] = -radiative_damping(a2, p)
    return A


def assemble_symbol(xi, p: ValidatedParams) -> SymbolMatrix:
    xi = np.asarray(xi, dtype=float).reshape(3)
    return SymbolMatrix(xi=xi.copy(), entries=symbol_batch(xi, p)[0])


def cubic_coefficients(a2, p: ValidatedParams):
    """Vectorized (c2, c1, c0, h) of the longitudinal cubic."""
    a2 = np.asarray(a2, dtype=float)
    h = radiative_damping(a2, p)
    c2 = h + p.nu * a2
    c1 = p.nu * a2 * h + (p.R + p.R ** 2 / p.C_v) * a2
    c0 = p.R * a2 * h
    return c2, c1, c0, h


def characteristic_cubic(a2: float, p: ValidatedParams) -> CubicCoeffs:
    if a2 < 0:
        raise ValueError("a2 must be non-negative")
    c2, c1, c0, h = cubic_coefficients(a2, p)
    return CubicCoeffs(c2=float(c2), c1=float(c1), c0=float(c0), a2=float(a2), h=float(h))


def _horner(lam, c2, c1, c0):
    return ((lam + c2) * lam + c1) * lam + c0


def _scaled_residual(lam, c2, c1, c0):
    num = np.abs(_horner(lam, c2, c1, c0))
    x = np.abs(lam)
    den = x ** 3 + np.abs(c2) * x ** 2 + np.abs(c1) * x + np.abs(c0)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def _label(roots):
    """Order each row as (lambda1, lambda2, lambda3).

    One real root and a conjugate pair: lambda1 is the real one, lambda2 has
    Im >= 0 and lambda3 = conj(lambda2) exactly. Three real roots: lambda1 is
    the least damped, lambda2 the most damped. This matches continuation
    from the low-frequency regime for the parameter sets used here; grid
    scans use :func:`track_branches` instead.
    """
    out = np.empty_like(roots)
    scale = np.maximum(np.abs(roots).max(axis=1), np.finfo(float).tiny)
    is_real = np.abs(roots.imag) <= _REAL_TOL * scale[:, None]
    nreal = is_real.sum(axis=1)
    for i in range(roots.shape[0]):
        r = roots[i]
        if nreal[i] >= 2:
            re = np.sort(r.real)
            out[i] = [re[2], re[0], re[1]]
        else:
            k_real = int(np.argmin(np.abs(r.imag)))
            pair = np.delete(r, k_real)
            top = pair[np.argmax(pair.imag)]
            if abs(top.imag) <= _REAL_TOL * scale[i]:
                top = complex(top.real, 0.0)
            out[i] = [complex(r[k_real].real, 0.0), top, np.conj(top)]
    return out


def _coalescing(lam_all):
    """True where any two of the four branches nearly coincide."""
    d = np.abs(lam_all[:, :, None] - lam_all[:, None, :])
    mag = np.maximum(np.abs(lam_all)[:, :, None], np.abs(lam_all)[:, None, :])
    close = d < COALESCENCE_TOL * mag
    iu = np.triu_indices(lam_all.shape[1], k=1)
    return close[:, iu[0], iu[1]].any(axis=1)


def longitudinal_roots(a, p: ValidatedParams, check=True):
    """Roots of the longitudinal cubic for an array of |xi| > 0.

    Companion-matrix eigenvalues on a rescaled cubic, then one Newton step
    on the original cubic. Returns (lam, lam4, degenerate) with lam of shape
    (N, 3) labeled by :func:`_label`.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    a2 = a * a
    c2, c1, c0, _ = cubic_coefficients(a2, p)
    s = np.maximum.reduce([np.abs(c2), np.sqrt(np.abs(c1)), np.cbrt(np.abs(c0))])
    s = np.where(s > 0, s, 1.0)
    comp = np.zeros((a.size, 3, 3))
    comp[:, 0, 0] = -c2 / s
    comp[:, 0, 1] = -c1 / s ** 2
    comp[:, 0, 2] = -c0 / s ** 3
    comp[:, 1, 0] = 1.0
    comp[:, 2, 1] = 1.0
    roots = np.linalg.eigvals(comp).astype(complex) * s[:, None]

    C2, C1, C0 = c2[:, None], c1[:, None], c0[:, None]
    g = _horner(roots, C2, C1, C0)
    dg = (3.0 * roots + 2.0 * C2) * roots + C1
    with np.errstate(divide="ignore", invalid="ignore"):
        cand = roots - g / dg
    better = np.isfinite(cand) & (np.abs(_horner(cand, C2, C1, C0)) < np.abs(g))
    roots = np.where(better, cand, roots)

    lam = _label(roots)
    if check:
        res = _scaled_residual(lam, C2, C1, C0)
        bad = (res > ROOT_RESIDUAL_TOL) & (a2[:, None] > 0)
        if bad.any():
            i = int(np.argwhere(bad)[0, 0])
            raise RootFailure(f"cubic residual {res[bad].max():.3e} at |xi|={a[i]:.6g}")
    lam4 = -p.mu * a2
    lam_all = np.concatenate([lam, lam4[:, None].astype(complex)], axis=1)
    degenerate = _coalescing(lam_all) & (a2 > 0)
    return lam, lam4, degenerate


def dispersion_roots(xi, p: ValidatedParams) -> DispersionPoint:
    xi = np.asarray(xi, dtype=float).reshape(3)
    a = float(np.linalg.norm(xi))
    if a <= 0:
        raise ValueError("dispersion_roots needs |xi| > 0")
    lam, lam4, deg = longitudinal_roots(a, p)
    l1, l2, l3 = lam[0]
    return DispersionPoint(xi_norm=a, lambda1=complex(l1), lambda2=complex(l2),
                           lambda3=complex(l3), lambda4=float(lam4[0]),
                           degenerate_flag=bool(deg[0]))


def track_branches(a_grid, p: ValidatedParams):
    """Label branches along an increasing |xi| grid by continuity.

    lambda1 follows the nearest neighbour of its previous value; the other
    two are ordered by Im sign (complex pair) or by damping (real pair).
    """
    a_grid = np.asarray(a_grid, dtype=float)
    lam, _, _ = longitudinal_roots(a_grid, p)
    out = lam.copy()
    for i in range(1, len(a_grid)):
        r = lam[i]
        k = int(np.argmin(np.abs(r - out[i - 1, 0])))
        rest = np.delete(r, k)
        if np.all(rest.imag == 0):
            rest = np.sort(rest.real).astype(complex)
        else:
            rest = rest[np.argsort(-rest.imag)]
        out[i] = [r[k], rest[0], rest[1]]
    return out


def projector_batch(xi, lam, p: ValidatedParams):
    """Spectral projectors P1..P4 for a stack of frequencies.

    Longitudinal projectors are r l^T / (l^T r) with the closed-form right and
    left eigenvectors

        r = (a^2/lam, i xi, (R/C_v) a^2 / (h + lam)),
        l = (R a^2/lam, i xi, R a^2 / (h + lam)).

    Returns an array of shape (N, 4, 5, 5).
    """
    xi = _as_xi_stack(xi)
    a2 = np.einsum("ij,ij->i", xi, xi)
    h = radiative_damping(a2, p)
    N = xi.shape[0]
    P = np.zeros((N, 4, 5, 5), dtype=complex)
    for j in range(3):
        lj = lam[:, j]
        r = np.empty((N, 5), dtype=complex)
        l = np.empty((N, 5), dtype=complex)
        r[:, 0] = a2 / lj
        r[:, 1:4] = 1j * xi
        r[:, 4] = (p.R / p.C_v) * a2 / (h + lj)
        l[:, 0] = p.R * a2 / lj
        l[:, 1:4] = 1j * xi
        l[:, 4] = p.R * a2 / (h + lj)
        norm = np.einsum("ij,ij->i", l, r)
        P[:, j] = r[:, :, None] * l[:, None, :] / norm[:, None, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        xx = xi[:, :, None] * xi[:, None, :] / a2[:, None, None]
    P[:, 3, 1:4, 1:4] = np.eye(3) - xx
    return P


def projector_set(xi, p: ValidatedParams, roots: DispersionPoint | None = None) -> ProjectorSet:
    xi = np.asarray(xi, dtype=float).reshape(3)
    if roots is None:
        roots = dispersion_roots(xi, p)
    if roots.degenerate_flag:
        raise DegenerateSpectrum(roots)
    P = projector_batch(xi, roots.longitudinal[None], p)[0]
    return ProjectorSet(P1=P[0], P2=P[1], P3=P[2], P4=P[3].real.copy(), source="explicit-formula")


def semigroup_batch(xi, t, p: ValidatedParams, return_source=False):
    """e^{t A(xi)} for a stack of frequencies and one time t >= 0.

    Spectral sum over the projectors where the spectrum is simple; the
    scaling-and-squaring exponential where branches coalesce.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    xi = _as_xi_stack(xi)
    N = xi.shape[0]
    a = np.sqrt(np.einsum("ij,ij->i", xi, xi))
    G = np.empty((N, 5, 5), dtype=complex)
    source = np.full(N, "explicit-formula", dtype=object)
    zero = a == 0
    G[zero] = np.eye(5)
    source[zero] = "identity"
    nz = ~zero
    if nz.any():
        lam, lam4, deg = longitudinal_roots(a[nz], p)
        idx = np.flatnonzero(nz)
        ok = idx[~deg]
        if ok.size:
            P = projector_batch(xi[ok], lam[~deg], p)
            lam_all = np.concatenate([lam[~deg], lam4[~deg, None]], axis=1)
            G[ok] = np.einsum("nk,nkij->nij", np.exp(lam_all * t), P)
        bad = idx[deg]
        if bad.size:
            G[bad] = matrix_exponential_oracle(t * symbol_batch(xi[bad], p))
            source[bad] = "expm-fallback"
    if return_source:
        return G, source
    return G


def semigroup_matrix(xi, t: float, p: ValidatedParams):
    if t == 0:
        return np.eye(5, dtype=complex)
    return semigroup_batch(np.asarray(xi, dtype=float).reshape(1, 3), t, p)[0]
