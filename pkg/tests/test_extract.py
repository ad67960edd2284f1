import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from spinloc import (
    APPROXIMATE,
    EXACT,
    CouplingEstimate,
    CouplingInputs,
    DomainError,
    InconsistentInputError,
    extract_couplings,
    nominal_tau,
    propagate_coupling_sigma,
    rabi_frequency,
)


def test_nominal_tau():
    assert nominal_tau(101.7e3, 114.2e3) == pytest.approx(1.0 / (2.0 * 215.9e3))


def test_input_validation():
    with pytest.raises(ValueError):
        CouplingInputs(f0=100e3, f_m1=90e3, f_rabi=10e3, tau=2e-6)
    with pytest.raises(ValueError):
        CouplingInputs(f0=100e3, f_m1=110e3, f_rabi=0.0, tau=2e-6)
    with pytest.raises(ValueError):
        CouplingInputs(f0=100e3, f_m1=110e3, f_rabi=10e3, tau=0.0)
    with pytest.raises(ValueError):
        CouplingInputs(f0=100e3, f_m1=110e3, f_rabi=10e3, tau=2e-6, sigma_f0=-1.0)
    with pytest.raises(ValueError):
        CouplingEstimate(a_par=1e3, a_perp=-1.0, method=EXACT)
    with pytest.raises(ValueError):
        CouplingEstimate(a_par=1e3, a_perp=1e3, method="guess")


def test_approximate_method_formulas():
    est = extract_couplings(101.7e3, 114.2e3, 14.4e3,
                            nominal_tau(101.7e3, 114.2e3), method=APPROXIMATE)
    assert est.a_par == pytest.approx(12.5e3)
    assert est.a_perp == pytest.approx(math.pi * 14.4e3)
    assert est.method == APPROXIMATE
    assert est.inputs.f0 == 101.7e3


def test_exact_forward_backward_round_trip():
    # forward: couplings -> the slow oscillation; backward: extraction
    a_par, a_perp, f0 = 3.4e3, 41.0e3, 97.0e3
    f_m1 = math.hypot(f0 + a_par, a_perp)
    tau = nominal_tau(f0, f_m1)
    f_rabi = rabi_frequency(f0, a_par, a_perp, tau)
    est = extract_couplings(f0, f_m1, f_rabi, tau)
    assert est.method == EXACT
    assert est.a_par == pytest.approx(a_par, abs=1e-6)
    assert est.a_perp == pytest.approx(a_perp, abs=1e-6)


@settings(max_examples=200, deadline=None)
@given(
    f0=st.floats(60e3, 140e3),
    a_par=st.floats(-20e3, 20e3),
    a_perp=st.floats(5e3, 60e3),
    detune=st.floats(0.8, 1.25),
)
def test_round_trip_property(f0, a_par, a_perp, detune):
    f_m1 = math.hypot(f0 + a_par, a_perp)
    assume(f_m1 >= f0)
    tau = detune * nominal_tau(f0, f_m1)
    f_rabi = rabi_frequency(f0, a_par, a_perp, tau)
    if f_rabi <= 0.0:
        return  # phase fell on the branch edge; nothing to invert
    est = extract_couplings(f0, f_m1, f_rabi, tau)
    assert est.a_par == pytest.approx(a_par, abs=1e-3)
    assert est.a_perp == pytest.approx(a_perp, abs=1e-3)


def test_exact_differs_from_approximate_at_strong_coupling():
    f0, f_m1, f_rabi = 101.7e3, 114.2e3, 14.4e3
    tau = nominal_tau(f0, f_m1)
    exact = extract_couplings(f0, f_m1, f_rabi, tau, method=EXACT)
    approx = extract_couplings(f0, f_m1, f_rabi, tau, method=APPROXIMATE)
    # couplings here are comparable to the Zeeman scale, so the weak-coupling
    # shortcut is off by several kHz
    assert abs(exact.a_par - approx.a_par) > 5e3
    assert abs(exact.a_perp - approx.a_perp) > 1e3


def test_detuned_tau_draws_warning():
    f0, f_m1 = 101.7e3, 114.2e3
    with pytest.warns(UserWarning):
        extract_couplings(f0, f_m1, 14.4e3, 5.0 * nominal_tau(f0, f_m1))


def test_singular_tau_rejected():
    f0, f_m1 = 100e3, 110e3
    tau = 1.0 / (2.0 * f0)  # phase pi at the pulse spacing
    with pytest.raises(DomainError):
        extract_couplings(f0, f_m1, 10e3, tau, tau_tolerance_factor=math.inf)


def test_inconsistent_triplet_rejected():
    # phases past pi/2 with a slow oscillation near zero push the inferred
    # direction cosine beyond 1; no real coupling pair reproduces that
    with pytest.raises(InconsistentInputError):
        extract_couplings(80e3, 85e3, 1e3, 5e-6, tau_tolerance_factor=math.inf)


def test_rabi_forward_guards():
    with pytest.raises(ValueError):
        rabi_frequency(100e3, 1e3, 1e3, 0.0)
    with pytest.raises(DomainError):
        rabi_frequency(0.0, 0.0, 0.0, 2e-6)


def test_sigma_propagation_scales_linearly():
    f0, a_par, a_perp = 101.7e3, 3.1e3, 44.5e3
    f_m1 = math.hypot(f0 + a_par, a_perp)
    tau = nominal_tau(f0, f_m1)
    f_rabi = rabi_frequency(f0, a_par, a_perp, tau)

    def run(scale):
        inputs = CouplingInputs(f0=f0, f_m1=f_m1, f_rabi=f_rabi, tau=tau,
                                sigma_f0=scale * 100.0, sigma_f_m1=scale * 100.0,
                                sigma_f_rabi=scale * 100.0)
        return propagate_coupling_sigma(inputs, n_samples=20_000, seed=5)

    one = run(1.0)
    two = run(2.0)
    assert one.sigma_a_par > 0.0 and one.sigma_a_perp > 0.0
    assert two.sigma_a_par == pytest.approx(2.0 * one.sigma_a_par, rel=0.05)
    assert two.sigma_a_perp == pytest.approx(2.0 * one.sigma_a_perp, rel=0.05)
    # the point estimate stays the unperturbed extraction
    assert one.a_par == pytest.approx(a_par, abs=1e-6)


def test_sigma_propagation_approximate_matches_analytic():
    inputs = CouplingInputs(f0=101.7e3, f_m1=114.2e3, f_rabi=14.4e3,
                            tau=nominal_tau(101.7e3, 114.2e3),
                            sigma_f0=100.0, sigma_f_m1=100.0, sigma_f_rabi=100.0)
    est = propagate_coupling_sigma(inputs, method=APPROXIMATE,
                                   n_samples=200_000, seed=1)
    # difference of two independent normals and a pi-scaled one
    assert est.sigma_a_par == pytest.approx(math.sqrt(2.0) * 100.0, rel=0.02)
    assert est.sigma_a_perp == pytest.approx(math.pi * 100.0, rel=0.02)


def test_sigma_propagation_deterministic():
    inputs = CouplingInputs(f0=101.7e3, f_m1=114.2e3, f_rabi=14.4e3,
                            tau=nominal_tau(101.7e3, 114.2e3),
                            sigma_f0=100.0, sigma_f_m1=100.0, sigma_f_rabi=100.0)
    a = propagate_coupling_sigma(inputs, seed=9)
    b = propagate_coupling_sigma(inputs, seed=9)
    assert (a.sigma_a_par, a.sigma_a_perp) == (b.sigma_a_par, b.sigma_a_perp)


def test_sigma_propagation_rejects_hopeless_noise():
    inputs = CouplingInputs(f0=100e3, f_m1=100.2e3, f_rabi=50.0, tau=2.5e-6,
                            sigma_f0=5e3, sigma_f_m1=5e3, sigma_f_rabi=10.0)
    with pytest.raises(InconsistentInputError):
        propagate_coupling_sigma(inputs)
