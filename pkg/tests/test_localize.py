import math

import numpy as np
import pytest

from spinloc import (
    EXACT,
    CouplingEstimate,
    FrameError,
    IdentifiabilityError,
    MeasurementRecord,
    SPIN_DENSITY_CENTER_OFFSET,
    SphericalPosition,
    Vector3,
    assemble_position,
    cost_curve,
    dipole_tensor,
    fit_azimuth,
    precession_frequency,
    secular_couplings,
    sum_sq_xi,
    xi,
)

ANGSTROM = 1e-10

_B0_TABLE = (0.028e-3, -0.056e-3, 9.502e-3)
_COILS = (
    (-1.715e-3, 0.614e-3, -1.547e-3),
    (0.9e-3, -1.4e-3, 0.3e-3),
    (-0.4e-3, -1.1e-3, 1.0e-3),
)

_TRUTH = SphericalPosition(8.3 * ANGSTROM, math.radians(58.0), math.radians(238.0))
_A_ISO = 9e3


def _records(pos, a_iso, coils, b0=_B0_TABLE):
    hf = dipole_tensor(pos, a_iso)
    B0 = Vector3(np.asarray(b0), "nv0")
    zero = Vector3(np.zeros(3), "nv0")
    f0 = precession_frequency(B0, zero, hf, 0)
    f_m1 = precession_frequency(B0, zero, hf, -1)
    out = []
    for k, db in enumerate(coils):
        dB = Vector3(np.asarray(db), "nv0")
        out.append(MeasurementRecord(
            label=f"cfg{k}", f0=f0, sigma_f0=100.0, f_m1=f_m1, sigma_f_m1=100.0,
            fp0=precession_frequency(B0, dB, hf, 0), sigma_fp0=300.0,
            fp_m1=precession_frequency(B0, dB, hf, -1), sigma_fp_m1=200.0,
            B0=B0, sigma_B0=15e-6, dB=dB, sigma_dB=15e-6))
    return out


def _coupling(pos, a_iso):
    a_par, a_perp = secular_couplings(pos.r, pos.theta, a_iso)
    return CouplingEstimate(a_par=a_par, a_perp=a_perp, method=EXACT)


def test_record_validation():
    recs = _records(_TRUTH, _A_ISO, _COILS)
    good = recs[0]
    with pytest.raises(ValueError):
        MeasurementRecord(label="x", f0=good.f0, sigma_f0=0.0, f_m1=good.f_m1,
                          sigma_f_m1=100.0, fp0=good.fp0, sigma_fp0=300.0,
                          fp_m1=good.fp_m1, sigma_fp_m1=200.0, B0=good.B0,
                          sigma_B0=15e-6, dB=good.dB, sigma_dB=15e-6)
    with pytest.raises(FrameError):
        MeasurementRecord(label="x", f0=good.f0, sigma_f0=100.0, f_m1=good.f_m1,
                          sigma_f_m1=100.0, fp0=good.fp0, sigma_fp0=300.0,
                          fp_m1=good.fp_m1, sigma_fp_m1=200.0,
                          B0=Vector3(np.asarray(_B0_TABLE), "lab"),
                          sigma_B0=15e-6, dB=good.dB, sigma_dB=15e-6)
    assert good.measured_difference == good.fp_m1 - good.fp0


def test_xi_vanishes_at_truth():
    recs = _records(_TRUTH, _A_ISO, _COILS)
    coupling = _coupling(_TRUTH, _A_ISO)
    for rec in recs:
        assert abs(xi(rec, coupling, _TRUTH.phi, _A_ISO)) < 1e-6


def test_vectorized_cost_matches_scalar():
    recs = _records(_TRUTH, _A_ISO, _COILS)
    coupling = _coupling(_TRUTH, _A_ISO)
    for phi_deg, iso in ((10.0, 0.0), (238.0, 9e3), (301.5, -4e3)):
        phi = math.radians(phi_deg)
        direct = sum(xi(rec, coupling, phi, iso) ** 2 for rec in recs)
        assert float(sum_sq_xi(recs, coupling, phi, iso)) == pytest.approx(
            direct, rel=1e-12)


def test_fit_recovers_truth_with_fixed_contact_term():
    recs = _records(_TRUTH, _A_ISO, _COILS)
    fit = fit_azimuth(recs, _coupling(_TRUTH, _A_ISO), fix_a_iso=_A_ISO)
    assert fit.a_iso_fixed
    assert fit.a_iso == _A_ISO
    assert fit.phi == pytest.approx(_TRUTH.phi, abs=1e-6)
    assert fit.residual < 1e-3
    assert len(fit.per_record_xi) == 3


def test_joint_fit_recovers_truth():
    recs = _records(_TRUTH, _A_ISO, _COILS)
    fit = fit_azimuth(recs, _coupling(_TRUTH, _A_ISO))
    assert not fit.a_iso_fixed
    assert fit.phi == pytest.approx(_TRUTH.phi, abs=1e-4)
    assert fit.a_iso == pytest.approx(_A_ISO, abs=10.0)
    # three independent coil directions single out one minimum
    assert len(fit.minima) == 1


def test_single_configuration_leaves_two_minima():
    recs = _records(_TRUTH, _A_ISO, _COILS[:1])
    fit = fit_azimuth(recs, _coupling(_TRUTH, _A_ISO), fix_a_iso=_A_ISO)
    assert len(fit.minima) == 2
    assert fit.phi in fit.degenerate_minima
    assert any(abs(m.phi - _TRUTH.phi) < 1e-3 for m in fit.minima)


def test_mirror_tie_resolves_to_smaller_phi():
    # purely axial static field and one coil in the xz plane: the cost is
    # exactly even in phi, so truth at 330 deg ties with its mirror at 30 deg
    # and the reported phi is the smaller one
    pos = _TRUTH.with_phi(math.radians(330.0))
    coil = ((2.0e-3, 0.0, 0.5e-3),)
    recs = _records(pos, 0.0, coil, b0=(0.0, 0.0, 9.502e-3))
    fit = fit_azimuth(recs, _coupling(pos, 0.0), fix_a_iso=0.0)
    assert fit.phi == pytest.approx(math.radians(30.0), abs=1e-6)
    assert len(fit.minima) == 2
    phis = sorted(math.degrees(m.phi) for m in fit.minima)
    assert phis[0] == pytest.approx(30.0, abs=1e-3)
    assert phis[1] == pytest.approx(330.0, abs=1e-3)


def test_axial_coil_is_unidentifiable():
    recs = _records(_TRUTH, _A_ISO, ((0.0, 0.0, 2.0e-3),))
    with pytest.raises(IdentifiabilityError):
        fit_azimuth(recs, _coupling(_TRUTH, _A_ISO), fix_a_iso=_A_ISO)


def test_no_records_rejected():
    with pytest.raises(ValueError):
        fit_azimuth([], _coupling(_TRUTH, _A_ISO))


def test_unknown_refine_option_rejected():
    recs = _records(_TRUTH, _A_ISO, _COILS)
    with pytest.raises(ValueError):
        fit_azimuth(recs, _coupling(_TRUTH, _A_ISO), fix_a_iso=_A_ISO,
                    refine_options={"xtol": 1e-3})


def test_cost_curve_structure():
    recs = _records(_TRUTH, _A_ISO, _COILS)
    coupling = _coupling(_TRUTH, _A_ISO)
    curve = cost_curve(recs, coupling, a_iso=_A_ISO, phi_step_deg=1.0)
    assert curve.phi.shape == (360,)
    assert curve.per_record.shape == (3, 360)
    assert np.all(curve.per_record >= 0.0)
    np.testing.assert_allclose(curve.total, (curve.per_record ** 2).sum(axis=0),
                               rtol=1e-12)
    # the sampled minimum sits within one grid step of the truth
    k = int(np.argmin(curve.total))
    dphi = abs((curve.phi[k] - _TRUTH.phi + math.pi) % (2 * math.pi) - math.pi)
    assert dphi <= math.radians(1.0)


def test_assemble_position_applies_axial_offset():
    recs = _records(_TRUTH, _A_ISO, _COILS)
    coupling = _coupling(_TRUTH, _A_ISO)
    fit = fit_azimuth(recs, coupling, fix_a_iso=_A_ISO)
    loc = assemble_position(coupling, fit)
    assert loc.position.r == pytest.approx(_TRUTH.r, rel=1e-9)
    assert loc.position.theta == pytest.approx(_TRUTH.theta, abs=1e-9)
    assert loc.position.phi == pytest.approx(_TRUTH.phi, abs=1e-6)
    np.testing.assert_allclose(
        loc.cartesian_offset - loc.cartesian,
        [0.0, 0.0, SPIN_DENSITY_CENTER_OFFSET], atol=1e-18)
    np.testing.assert_allclose(loc.cartesian, _TRUTH.cartesian(), atol=1e-16)
