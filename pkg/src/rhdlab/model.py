"""Physical parameters, constitutive laws and state conversions.

The equilibrium is fixed at (rho, u, theta) = (1, 0, 1); perturbation
variables are n = rho - 1 and m = theta - 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParamError, PositivityError


@dataclass(frozen=True)
class FluidParams:
    R: float = 1.0
    C_v: float = 1.5
    mu: float = 1.0
    mu_prime: float = 1.0 / 3.0
    kappa: float = 1.0


@dataclass(frozen=True)
class ValidatedParams(FluidParams):
    """FluidParams that passed :func:`validate_params`, with ``nu = 2 mu + mu'``."""

    nu: float = field(default=0.0, compare=False)


def validate_params(p: FluidParams) -> ValidatedParams:
    for name in ("R", "C_v", "mu", "mu_prime"):
        v = getattr(p, name)
        if not np.isfinite(v) or v <= 0:
            raise ParamError(name, f"{name} must be positive, got {v!r}")
    if not np.isfinite(p.kappa) or p.kappa < 0:
        raise ParamError("kappa", f"kappa must be non-negative, got {p.kappa!r}")
    return ValidatedParams(
        R=float(p.R), C_v=float(p.C_v), mu=float(p.mu), mu_prime=float(p.mu_prime),
        kappa=float(p.kappa), nu=2.0 * p.mu + p.mu_prime,
    )


def reference_params(kappa: float = 1.0) -> ValidatedParams:
    """The reference configuration R=1, C_v=1.5, mu=1, mu'=1/3."""
    return validate_params(FluidParams(kappa=kappa))


def constitutive_eval(rho, theta, u, p: FluidParams):
    """Pressure, internal energy and total specific energy of an ideal gas.

    Returns a dict with keys ``P``, ``e`` and ``E``.
    """
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(rho <= 0):
        raise DomainError("rho must be positive")
    if np.any(theta <= 0):
        raise DomainError("theta must be positive")
    u = np.asarray(u, dtype=float)
    e = p.C_v * theta
    return {"P": p.R * rho * theta, "e": e, "E": e + 0.5 * np.sum(u * u, axis=0)}


def strain_rate(grad_u):
    """Symmetric part of a velocity gradient, D(u) = (grad u + grad u^T) / 2.

    The last two axes index the tensor, so stacks of gradients are fine.
    """
    g = np.asarray(grad_u)
    return 0.5 * (g + np.swapaxes(g, -1, -2))


@dataclass
class PrimitiveState:
    rho: np.ndarray
    u: np.ndarray
    theta: np.ndarray


@dataclass
class PerturbationState:
    n: np.ndarray
    u: np.ndarray
    m: np.ndarray
    q: np.ndarray | None = None


def to_perturbation(s: PrimitiveState) -> PerturbationState:
    rho = np.asarray(s.rho, dtype=float)
    theta = np.asarray(s.theta, dtype=float)
    if np.any(rho <= 0):
        raise PositivityError("rho <= 0")
    if np.any(theta <= 0):
        raise PositivityError("theta <= 0")
    return PerturbationState(n=rho - 1.0, u=np.array(s.u, dtype=float), m=theta - 1.0)


def to_primitive(s: PerturbationState) -> PrimitiveState:
    rho = np.asarray(s.n, dtype=float) + 1.0
    theta = np.asarray(s.m, dtype=float) + 1.0
    if np.any(rho <= 0):
        raise PositivityError("rho = 1 + n <= 0")
    if np.any(theta <= 0):
        raise PositivityError("theta = 1 + m <= 0")
    return PrimitiveState(rho=rho, u=np.array(s.u, dtype=float), theta=theta)


def convert_state(s, direction: str | None = None):
    """Convert between primitive and perturbation representations.

    ``direction`` is ``"to_perturbation"`` or ``"to_primitive"``; when omitted
    it is inferred from the type of ``s``.
    """
    if direction is None:
        direction = "to_perturbation" if isinstance(s, PrimitiveState) else "to_primitive"
    if direction == "to_perturbation":
        return to_perturbation(s)
    if direction == "to_primitive":
        return to_primitive(s)
    raise ValueError(f"unknown direction {direction!r}")
