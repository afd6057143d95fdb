"""Pseudo-spectral solver for the perturbation system on a periodic box.

Unknowns are (n, u1, u2, u3, m) stored as real-to-complex FFT coefficients of
shape (5, N, N, N//2 + 1). The linear part is integrated exactly with a
second-order exponential Runge-Kutta scheme (ETD2RK):

    a     = e^{hA} U + h phi1(hA) N(U)
    U_new = a + h phi2(hA) (N(a) - N(U))

where N = (R1, R2, R3 / C_v). Because A(xi) commutes with rotations, it
splits into a 3x3 block acting on (n, xi_hat . u, m) that depends only on
|xi|, and the scalar -mu |xi|^2 on the transverse velocity. The phi-functions
are therefore computed once per distinct |xi|^2 on the lattice.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft
from scipy.linalg import expm

from .errors import PositivityError, StabilityError
from .model import ValidatedParams, reference_params, strain_rate
from .spectral.symbol import radiative_damping

VALID_N = (16, 32, 64, 128)
MAGIC = b"RHD1"


def _workers():
    try:
        return max(1, int(os.environ.get("RHD_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class GridSpec:
    N: int = 64
    L: float = 16.0 * np.pi
    dealias: str = "2/3"

    def __post_init__(self):
        if self.N not in VALID_N:
            raise ValueError(f"N must be one of {VALID_N}, got {self.N}")
        if not self.L > 0:
            raise ValueError("L must be positive")
        if self.dealias != "2/3":
            raise ValueError(f"unknown dealias rule {self.dealias!r}")

    @property
    def dx(self):
        return self.L / self.N


def _phi_blocks(M, h):
    """e^{hM}, h phi1(hM), h phi2(hM) for a stack of square matrices.

    Uses the exponential of the augmented matrix [[hM, I, 0], [0, 0, I], [0, 0, 0]],
    whose first block row is [e^{hM}, phi1(hM), phi2(hM)].
    """
    n, d = M.shape[0], M.shape[-1]
    aug = np.zeros((n, 3 * d, 3 * d), dtype=complex)
    eye = np.eye(d)
    aug[:, :d, :d] = h * M
    aug[:, :d, d:2 * d] = eye
    aug[:, d:2 * d, 2 * d:] = eye
    X = expm(aug)
    return X[:, :d, :d], h * X[:, :d, d:2 * d], h * X[:, :d, 2 * d:]


def longitudinal_block(a, p: ValidatedParams):
    """The 3x3 symbol on (n, xi_hat . u, m) at |xi| = a (vectorized)."""
    a = np.asarray(a, dtype=float)
    B = np.zeros(a.shape + (3, 3), dtype=complex)
    B[..., 0, 1] = -1j * a
    B[..., 1, 0] = -1j * p.R * a
    B[..., 1, 1] = -p.nu * a * a
    B[..., 1, 2] = -1j * p.R * a
    B[..., 2, 1] = -1j * (p.R / p.C_v) * a
    B[..., 2, 2] = -radiative_damping(a * a, p)
    return B


@dataclass
class ModeOperators:
    """Per-mode e^{hA}, h phi1(hA), h phi2(hA), split into the two blocks."""

    dt: float
    long: tuple
    trans: tuple


class SolverContext:
    def __init__(self, spec: GridSpec, p: ValidatedParams, dt: float = 1e-2,
                 pos_floor: float = 0.1, cfl_max: float = 1.0):
        self.spec = spec
        self.p = p
        self.dt = float(dt)
        self.pos_floor = pos_floor
        self.cfl_max = cfl_max
        N, L = spec.N, spec.L
        self.workers = _workers()
        k = sfft.fftfreq(N, 1.0 / N)
        kz = sfft.rfftfreq(N, 1.0 / N)
        KX, KY, KZ = np.meshgrid(k, k, kz, indexing="ij")
        self.kint = (KX, KY, KZ)
        scale = 2.0 * np.pi / L
        self.xi = np.stack([KX, KY, KZ]) * scale
        self.xi2 = np.sum(self.xi ** 2, axis=0)
        self.a = np.sqrt(self.xi2)
        cut = N / 3.0
        self.mask = (np.abs(KX) < cut) & (np.abs(KY) < cut) & (np.abs(KZ) < cut)
        self.nonlocal_mult = -self.xi2 / (1.0 + self.xi2)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.xi_hat = np.where(self.a > 0, self.xi / np.where(self.a > 0, self.a, 1.0), 0.0)
        self.ik = 1j * self.xi
        # rfft half-spectrum multiplicity for Parseval sums
        w = np.full(kz.shape, 2.0)
        w[0] = 1.0
        if N % 2 == 0:
            w[-1] = 1.0
        self.parseval_weight = np.broadcast_to(w, self.xi2.shape)
        uniq, inv = np.unique(self.xi2, return_inverse=True)
        self._a_uniq = np.sqrt(uniq)
        self._inv = inv.reshape(self.xi2.shape)
        self._ops: dict[float, ModeOperators] = {}

    # transforms over the last three axes
    def fft(self, f):
        return sfft.rfftn(f, axes=(-3, -2, -1), workers=self.workers)

    def ifft(self, fh):
        N = self.spec.N
        return sfft.irfftn(fh, s=(N, N, N), axes=(-3, -2, -1), workers=self.workers)

    def dealias(self, fh):
        return fh * self.mask

    def grid_points(self):
        x = np.arange(self.spec.N) * self.spec.dx
        return np.meshgrid(x, x, x, indexing="ij")

    def operators(self, dt: float | None = None) -> ModeOperators:
        dt = self.dt if dt is None else float(dt)
        if dt not in self._ops:
            E, P1, P2 = _phi_blocks(longitudinal_block(self._a_uniq, self.p), dt)
            Tm = (-self.p.mu * self._a_uniq ** 2).reshape(-1, 1, 1).astype(complex)
            tE, tP1, tP2 = _phi_blocks(Tm, dt)
            g = self._inv
            self._ops[dt] = ModeOperators(
                dt=dt,
                long=tuple(M[g] for M in (E, P1, P2)),
                trans=tuple(M[g, 0, 0] for M in (tE, tP1, tP2)),
            )
        return self._ops[dt]

    def apply(self, which: int, ops: ModeOperators, U):
        """Apply operator ``which`` (0: e^{hA}, 1: h phi1, 2: h phi2) to a spectral state."""
        M, s = ops.long[which], ops.trans[which]
        xh = self.xi_hat
        u = U[1:4]
        u_par = np.sum(xh * u, axis=0)
        u_perp = u - xh * u_par
        v = np.stack([U[0], u_par, U[4]], axis=-1)
        w = np.einsum("...ij,...j->...i", M, v)
        out = np.empty_like(U)
        out[0] = w[..., 0]
        out[1:4] = xh * w[..., 1] + s * u_perp
        out[4] = w[..., 2]
        return out

    def mode_propagator(self, idx, dt: float | None = None):
        """Full 5x5 e^{dt A(xi)} at lattice index ``idx`` = (i, j, l), as cached."""
        ops = self.operators(dt)
        cols = []
        for j in range(5):
            e = np.zeros((5, 1, 1, 1), dtype=complex)
            e[j] = 1.0
            U = np.zeros((5,) + self.xi2.shape, dtype=complex)
            U[(slice(None),) + tuple(idx)] = e[:, 0, 0, 0]
            cols.append(self.apply(0, ops, U)[(slice(None),) + tuple(idx)])
        return np.stack(cols, axis=1)


def init_grid(spec: GridSpec, p: ValidatedParams, dt: float = 1e-2, **kw) -> SolverContext:
    return SolverContext(spec, p, dt, **kw)


def nonlocal_apply(field_hat, ctx: SolverContext):
    """Multiply by -|xi|^2 / (1 + |xi|^2), the symbol of (1 - Delta)^{-1} Delta."""
    return field_hat * ctx.nonlocal_mult


def _dealiased_product(ctx, f, g):
    return ctx.ifft(ctx.dealias(ctx.fft(f * g)))


def _rhs(U, ctx: SolverContext):
    p = ctx.p
    ik = ctx.ik
    n = ctx.ifft(U[0])
    u = ctx.ifft(U[1:4])
    m = ctx.ifft(U[4])
    floor = float(np.min(1.0 + n))
    if floor < ctx.pos_floor:
        raise PositivityError(f"min(1 + n) = {floor:.4g} below floor {ctx.pos_floor}")
    fields = {"n": n, "u": u, "m": m}
    grad_n = ctx.ifft(ik * U[0])
    grad_m = ctx.ifft(ik * U[4])
    grad_u = ctx.ifft(ik[None, :] * U[1:4, None])  # grad_u[i, j] = d_j u_i
    div_h = np.sum(ik * U[1:4], axis=0)
    div = ctx.ifft(div_h)
    lap_u = ctx.ifft(-ctx.xi2 * U[1:4])
    grad_div = ctx.ifft(ik * div_h)
    lap_m = ctx.ifft(-ctx.xi2 * U[4])

    inv = 1.0 / (1.0 + n)
    w = n * inv

    R1 = -np.sum(ik * ctx.fft(n * u), axis=0)

    adv_u = np.einsum("j...,ij...->i...", u, grad_u)
    visc = p.mu * lap_u + (p.mu + p.mu_prime) * grad_div
    R2 = -adv_u - w * visc + p.R * ((n - m) * inv) * grad_n

    m2 = _dealiased_product(ctx, m, m)
    m3 = _dealiased_product(ctx, m2, m)
    m4 = _dealiased_product(ctx, m2, m2)
    poly_h = ctx.fft(6.0 * m2 + 4.0 * m3 + m4)
    div_q = ctx.ifft(-nonlocal_apply(4.0 * U[4] + poly_h, ctx))
    D = strain_rate(np.moveaxis(grad_u, (0, 1), (-2, -1)))
    DD = np.sum(D * D, axis=(-2, -1))
    R3 = (-p.C_v * np.sum(u * grad_m, axis=0) - p.R * m * div - p.kappa * w * lap_m
          + inv * (2.0 * p.mu * DD + p.mu_prime * div * div) + w * div_q)
    R3_h = ctx.fft(R3) + nonlocal_apply(poly_h, ctx)
    return ctx.dealias(R1), ctx.dealias(ctx.fft(R2)), ctx.dealias(R3_h), fields


def nonlinear_rhs(state, ctx: SolverContext):
    """Spectral (R1, R2, R3) of the perturbation system; R2 has shape (3, ...)."""
    R1, R2, R3, _ = _rhs(state, ctx)
    return R1, R2, R3


def _stack_rhs(R1, R2, R3, p):
    return np.concatenate([R1[None], R2, (R3 / p.C_v)[None]])


def _diagnose(fields, ctx, dt):
    max_n = float(np.max(np.abs(fields["n"])))
    max_m = float(np.max(np.abs(fields["m"])))
    max_u = float(np.max(np.sqrt(np.sum(fields["u"] ** 2, axis=0))))
    cfl = max_u * dt / ctx.spec.dx
    vals = (max_n, max_m, cfl)
    if not all(np.isfinite(vals)):
        raise StabilityError("non-finite diagnostics")
    if max_n >= 1.0 or max_m >= 1.0:
        raise StabilityError(f"positivity margin lost: max|n|={max_n:.3g}, max|m|={max_m:.3g}")
    if cfl > ctx.cfl_max:
        raise StabilityError(f"CFL indicator {cfl:.3g} exceeds {ctx.cfl_max}")
    return {"max_n": max_n, "max_m": max_m, "cfl": cfl}


def step(state, dt: float, ctx: SolverContext, nonlinear: bool = True, return_diag: bool = False):
    """One ETD2RK step. With ``nonlinear=False`` this is exact linear propagation."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    ops = ctx.operators(dt)
    a = ctx.apply(0, ops, state)
    diag = None
    if nonlinear:
        R1, R2, R3, fields = _rhs(state, ctx)
        diag = _diagnose(fields, ctx, dt)
        N0 = _stack_rhs(R1, R2, R3, ctx.p)
        a = a + ctx.apply(1, ops, N0)
        R1, R2, R3, _ = _rhs(a, ctx)
        Na = _stack_rhs(R1, R2, R3, ctx.p)
        out = a + ctx.apply(2, ops, Na - N0)
    else:
        out = a
    if not np.all(np.isfinite(out)):
        raise StabilityError("non-finite state after step")
    return (out, diag) if return_diag else out


def recover_flux_q(m_field, ctx: SolverContext, linearized: bool = False):
    """Radiative flux q and div q from a physical temperature perturbation m.

    q_hat = -4 i xi s_hat / (1 + |xi|^2), div q_hat = 4 |xi|^2 s_hat / (1 + |xi|^2),
    with s = m + 3/2 m^2 + m^3 + m^4/4 (or s = m when ``linearized``).
    """
    m = np.asarray(m_field, dtype=float)
    s = m if linearized else m + 1.5 * m ** 2 + m ** 3 + 0.25 * m ** 4
    s_h = ctx.fft(s)
    denom = 1.0 + ctx.xi2
    q_h = -4.0 * ctx.ik * s_h / denom
    divq_h = 4.0 * ctx.xi2 * s_h / denom
    return ctx.ifft(q_h), ctx.ifft(divq_h)


def flux_residual(m_field, q, ctx: SolverContext, linearized: bool = False):
    """L2 norm of -1/4 grad div q + 1/4 q + grad m - S4 on the box."""
    m = np.asarray(m_field, dtype=float)
    s = m if linearized else m + 1.5 * m ** 2 + m ** 3 + 0.25 * m ** 4
    q_h = ctx.fft(q)
    div_h = np.sum(ctx.ik * q_h, axis=0)
    res_h = -0.25 * ctx.ik * div_h + 0.25 * q_h + ctx.ik * ctx.fft(s)
    return float(np.sqrt(box_inner(res_h, res_h, ctx)))


def box_inner(f_h, g_h, ctx: SolverContext):
    """Re int f g* dx over the box, from rfft coefficients (components summed)."""
    N, L = ctx.spec.N, ctx.spec.L
    prod = (f_h * np.conj(g_h)).real * ctx.parseval_weight
    return float(np.sum(prod) * L ** 3 / N ** 6)


def hermitian_defect(state, ctx: SolverContext):
    """Relative change of the coefficients under a real-space round trip."""
    back = ctx.fft(ctx.ifft(state))
    scale = max(float(np.max(np.abs(state))), 1e-300)
    return float(np.max(np.abs(back - state)) / scale)


@dataclass
class SolverConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    params: ValidatedParams = field(default_factory=reference_params)
    dt: float = 1e-2
    t_final: float = 1.0
    snapshot_every: float | None = None
    amplitude: float = 1e-2
    seed: int = 0
    k_init: int = 2
    pos_floor: float = 0.1
    max_halvings: int = 4
    nonlinear: bool = True


@dataclass
class Trajectory:
    times: list
    snapshots: list
    diagnostics: dict
    config: SolverConfig
    halvings: int = 0

    @property
    def final(self):
        return self.snapshots[-1]

    def bounded(self):
        d = self.diagnostics
        return bool(np.all(np.asarray(d["max_n"]) < 1.0) and np.all(np.asarray(d["max_m"]) < 1.0))


def random_smooth_state(ctx: SolverContext, amplitude: float, seed: int = 0, k_init: int = 2):
    """Random real trigonometric polynomial on integer modes |k_i| <= k_init.

    Each component is f(x) = sum_k Re(c_k e^{i k.x}) with c_k drawn from the
    seeded generator, scaled so that sum |c_k| = amplitude; hence
    max |f| <= amplitude and the data do not depend on N.
    """
    rng = np.random.default_rng(seed)
    side = 2 * k_init + 1
    N = ctx.spec.N
    if k_init >= N / 3:
        raise ValueError("k_init must lie inside the dealiased band")
    scale = 2.0 * np.pi / ctx.spec.L
    x = np.arange(N) * ctx.spec.dx
    ks = np.arange(-k_init, k_init + 1)
    U = np.empty((5,) + ctx.xi2.shape, dtype=complex)
    for comp in range(5):
        c = rng.standard_normal((side, side, side)) + 1j * rng.standard_normal((side, side, side))
        c[k_init, k_init, k_init] = 0.0
        c *= amplitude / np.abs(c).sum()
        # separable evaluation of sum_k Re(c_k e^{i k.x})
        ex = np.exp(1j * scale * np.outer(ks, x))
        f = np.einsum("abc,ai,bj,ck->ijk", c, ex, ex, ex, optimize=True).real
        U[comp] = ctx.fft(f)
    return ctx.dealias(U)


def single_mode_state(ctx: SolverContext, k_index, vec, amplitude: float = 1.0):
    """State with one lattice coefficient set to amplitude * vec (needs k_z index > 0)."""
    kx, ky, kz = k_index
    if kz <= 0:
        raise ValueError("use a mode with k_z > 0 so no Hermitian partner is stored")
    N = ctx.spec.N
    U = np.zeros((5,) + ctx.xi2.shape, dtype=complex)
    U[:, kx % N, ky % N, kz] = amplitude * np.asarray(vec, dtype=complex) * N ** 3
    return U


def run(config: SolverConfig, initial=None) -> Trajectory:
    """Integrate to ``config.t_final`` and keep snapshots every ``snapshot_every``.

    A step that raises StabilityError is retried as two half steps, up to
    ``max_halvings`` levels deep; the number of halvings is recorded. Errors
    that survive the retries are raised.
    """
    ctx = init_grid(config.grid, config.params, config.dt, pos_floor=config.pos_floor)
    U = (random_smooth_state(ctx, config.amplitude, config.seed, config.k_init)
         if initial is None else np.array(initial, dtype=complex))
    dt = config.dt
    n_steps = int(round(config.t_final / dt))
    every = config.snapshot_every or config.t_final
    snap_stride = max(1, int(round(every / dt)))
    times, snaps = [0.0], [U.copy()]
    diag = {"t": [], "max_n": [], "max_m": [], "cfl": [], "mean_n": [float(U[0, 0, 0, 0].real)]}
    halvings = 0

    def advance(V, h, depth):
        nonlocal halvings
        try:
            return step(V, h, ctx, config.nonlinear, return_diag=True)
        except StabilityError:
            if depth >= config.max_halvings:
                raise
            halvings += 1
            V, d = advance(V, h / 2, depth + 1)
            V, _ = advance(V, h / 2, depth + 1)
            return V, d

    for i in range(1, n_steps + 1):
        U, d = advance(U, dt, 0)
        if d is None:
            phys = {"n": ctx.ifft(U[0]), "m": ctx.ifft(U[4]), "u": ctx.ifft(U[1:4])}
            d = _diagnose(phys, ctx, dt)
        diag["t"].append((i - 1) * dt)
        for key in ("max_n", "max_m", "cfl"):
            diag[key].append(d[key])
        diag["mean_n"].append(float(U[0, 0, 0, 0].real))
        if i % snap_stride == 0 or i == n_steps:
            times.append(i * dt)
            snaps.append(U.copy())
    diag = {k: np.asarray(v) for k, v in diag.items()}
    return Trajectory(times=times, snapshots=snaps, diagnostics=diag, config=config, halvings=halvings)


def linear_reference(ctx: SolverContext, U0, t: float, dt: float):
    """Exact linear propagation by repeated application of the cached e^{dt A}."""
    n = int(round(t / dt))
    ops = ctx.operators(dt)
    U = U0
    for _ in range(n):
        U = ctx.apply(0, ops, U)
    return U


def write_snapshot(path, ctx: SolverContext, state, with_q: bool = False):
    """Little-endian: b'RHD1', u32 N, f64 L, u32 count, then f64 arrays x-fastest."""
    phys = ctx.ifft(state)
    comps = [phys[i] for i in range(5)]
    if with_q:
        q, _ = recover_flux_q(phys[4], ctx)
        comps += [q[i] for i in range(3)]
    N = ctx.spec.N
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IdI", N, float(ctx.spec.L), len(comps)))
        for c in comps:
            fh.write(np.ascontiguousarray(c.T, dtype="<f8").tobytes())


def read_snapshot(path):
    """Return (N, L, array of shape (count, N, N, N) indexed [c, x, y, z])."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError("not an RHD1 snapshot")
    N, L, count = struct.unpack("<IdI", raw[4:20])
    data = np.frombuffer(raw[20:], dtype="<f8")
    if data.size != count * N ** 3:
        raise ValueError("truncated snapshot")
    arr = data.reshape(count, N, N, N).transpose(0, 3, 2, 1)
    return N, L, np.array(arr)


def with_dt(config: SolverConfig, dt: float) -> SolverConfig:
    return replace(config, dt=dt)
