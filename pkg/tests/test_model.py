import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from rhdlab.errors import DomainError, ParamError, PositivityError
from rhdlab.model import (
    FluidParams, PerturbationState, PrimitiveState, constitutive_eval, convert_state,
    reference_params, strain_rate, validate_params,
)


def test_reference_params_nu():
    p = validate_params(FluidParams())
    assert (p.R, p.C_v, p.mu, p.mu_prime, p.kappa) == (1.0, 1.5, 1.0, 1.0 / 3.0, 1.0)
    assert p.nu == pytest.approx(7.0 / 3.0, abs=1e-15)


@pytest.mark.parametrize("name", ["R", "C_v", "mu", "mu_prime"])
@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan")])
def test_non_positive_field_rejected(name, bad):
    with pytest.raises(ParamError) as exc:
        validate_params(FluidParams(**{name: bad}))
    assert exc.value.field == name


def test_zero_conduction_allowed_negative_rejected():
    assert validate_params(FluidParams(kappa=0.0)).kappa == 0.0
    with pytest.raises(ParamError) as exc:
        validate_params(FluidParams(kappa=-0.1))
    assert exc.value.field == "kappa"


def test_constitutive_examples():
    p = reference_params()
    out = constitutive_eval(1.0, 1.0, np.zeros(3), p)
    assert (out["P"], out["e"], out["E"]) == (1.0, 1.5, 1.5)
    assert constitutive_eval(1.0, 1.0, np.array([1.0, 0, 0]), p)["E"] == 2.0
    assert constitutive_eval(2.0, 0.5, np.zeros(3), p)["P"] == 1.0


@pytest.mark.parametrize("rho,theta", [(0.0, 1.0), (1.0, -1.0)])
def test_constitutive_domain(rho, theta):
    with pytest.raises(DomainError):
        constitutive_eval(rho, theta, np.zeros(3), reference_params())


def test_strain_rate_examples():
    S = np.array([[1.0, 2, 3], [2, 4, 5], [3, 5, 6]])
    assert np.array_equal(strain_rate(S), S)
    W = np.array([[0.0, 1, -2], [-1, 0, 3], [2, -3, 0]])
    assert np.array_equal(strain_rate(W), np.zeros((3, 3)))
    g = np.zeros((3, 3))
    g[0, 1] = 1
    assert np.array_equal(strain_rate(g), np.array([[0, 0.5, 0], [0.5, 0, 0], [0, 0, 0]]))


def test_strain_rate_batched(rng):
    g = rng.standard_normal((4, 5, 3, 3))
    D = strain_rate(g)
    assert np.allclose(D, np.swapaxes(D, -1, -2))
    assert np.allclose(D[2, 3], 0.5 * (g[2, 3] + g[2, 3].T))


def test_convert_examples():
    s = convert_state(PrimitiveState(np.ones(4), np.zeros((3, 4)), np.ones(4)))
    assert isinstance(s, PerturbationState)
    assert not s.n.any() and not s.m.any() and not s.u.any()
    back = convert_state(PerturbationState(np.full(3, 0.1), np.zeros((3, 3)), np.full(3, -0.2)))
    assert np.allclose(back.rho, 1.1) and np.allclose(back.theta, 0.8)
    with pytest.raises(PositivityError):
        convert_state(PerturbationState(np.full(2, -1.0), np.zeros((3, 2)), np.zeros(2)))
    with pytest.raises(PositivityError):
        convert_state(PrimitiveState(np.ones(2), np.zeros((3, 2)), np.zeros(2)))
    with pytest.raises(ValueError):
        convert_state(s, "sideways")


# Sterbenz: x - 1 is exact for x in [0.5, 2], and (x - 1) + 1 then recovers x.
@given(arrays(np.float64, 16, elements=st.floats(0.5, 2.0)),
       arrays(np.float64, 16, elements=st.floats(0.5, 2.0)))
def test_round_trip_bit_exact(rho, theta):
    u = np.zeros((3, 16))
    back = convert_state(convert_state(PrimitiveState(rho, u, theta)))
    assert np.array_equal(back.rho, rho) and np.array_equal(back.theta, theta)


@given(arrays(np.float64, 16, elements=st.floats(1e-3, 1e3)))
def test_round_trip_machine_precision(rho):
    s = PrimitiveState(rho, np.zeros((3, 16)), rho)
    back = convert_state(convert_state(s))
    assert np.allclose(back.rho, rho, rtol=4e-16, atol=2.3e-16)
