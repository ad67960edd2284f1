"""Turn measured frequency triplets (f0, f_m1, f_rabi) into hyperfine scalars.

The sequence parameter tau passed in here is the sensing half-interval, the
one chosen as tau ~ [2(f0+f_m1)]^-1; the transformation formulas below are
written in terms of the pi-pulse spacing, which is twice that. All inputs
and outputs are ordinary frequencies in Hz and times in seconds.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InconsistentInputError

EXACT = "exact"
APPROXIMATE = "approximate"

_MIN_SIGMA_SAMPLES = 10_000


@dataclass(frozen=True)
class CouplingInputs:
    """Raw frequency observations behind a coupling estimate, kept so
    downstream uncertainty propagation can re-run the extraction."""

    f0: float
    f_m1: float
    f_rabi: float
    tau: float
    sigma_f0: float = 0.0
    sigma_f_m1: float = 0.0
    sigma_f_rabi: float = 0.0

    def __post_init__(self):
        if not (self.f_m1 >= self.f0 > 0.0):
            raise ValueError(
                f"need f_m1 >= f0 > 0, got f0={self.f0!r}, f_m1={self.f_m1!r}")
        if self.f_rabi <= 0.0:
            raise ValueError(f"f_rabi must be positive, got {self.f_rabi!r}")
        if self.tau <= 0.0:
            raise ValueError(f"tau must be positive, got {self.tau!r}")
        for name in ("sigma_f0", "sigma_f_m1", "sigma_f_rabi"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class CouplingEstimate:
    """Secular coupling scalars in Hz, with uncertainties once propagated."""

    a_par: float
    a_perp: float
    method: str
    sigma_a_par: float | None = None
    sigma_a_perp: float | None = None
    inputs: CouplingInputs | None = None

    def __post_init__(self):
        if self.a_perp < 0.0:
            raise ValueError(f"a_perp must be non-negative, got {self.a_perp!r}")
        if self.method not in (EXACT, APPROXIMATE):
            raise ValueError(f"method must be {EXACT!r} or {APPROXIMATE!r}")
        for name in ("sigma_a_par", "sigma_a_perp"):
            s = getattr(self, name)
            if s is not None and s < 0.0:
                raise ValueError(f"{name} must be non-negative when given")

    def with_sigmas(self, sigma_a_par: float, sigma_a_perp: float) -> "CouplingEstimate":
        return CouplingEstimate(self.a_par, self.a_perp, self.method,
                                sigma_a_par, sigma_a_perp, self.inputs)


def nominal_tau(f0: float, f_m1: float) -> float:
    """The half-interval [2(f0+f_m1)]^-1 the sequence is tuned to, seconds."""
    return 1.0 / (2.0 * (f0 + f_m1))


def _exact_arrays(f0, f_m1, f_rabi, tau):
    """Vectorized exact transformation. Returns (a_par, a_perp, valid)."""
    spacing = 2.0 * tau
    c0 = np.cos(math.pi * f0 * spacing)
    s0 = np.sin(math.pi * f0 * spacing)
    c1 = np.cos(math.pi * f_m1 * spacing)
    s1 = np.sin(math.pi * f_m1 * spacing)
    denom = s1 * s0
    with np.errstate(divide="ignore", invalid="ignore"):
        cos_alpha = (c1 * c0 - np.cos(math.pi - 2.0 * math.pi * f_rabi * spacing)) / denom
        a_par = f_m1 * cos_alpha - f0
        arg = f_m1 ** 2 - (f0 + a_par) ** 2
        valid = (denom != 0.0) & np.isfinite(arg) & (arg >= 0.0)
        a_perp = np.sqrt(np.where(valid, arg, np.nan))
    return a_par, a_perp, valid


def extract_couplings(f0: float, f_m1: float, f_rabi: float, tau: float,
                      method: str = EXACT,
                      tau_tolerance_factor: float = 2.0) -> CouplingEstimate:
    """Couplings (a_par, a_perp) from the measured frequency triplet.

    The exact method inverts the interferometric relation between the slow
    oscillation f_rabi and the two precession frequencies at pi-pulse spacing
    2*tau; the approximate method is the weak-coupling limit
    (a_par, a_perp) = (f_m1 - f0, pi*f_rabi). A tau far from the nominal
    [2(f0+f_m1)]^-1 (beyond tau_tolerance_factor either way) draws a warning
    since the exact inversion degrades away from the tuned point.
    """
    inputs = CouplingInputs(f0=f0, f_m1=f_m1, f_rabi=f_rabi, tau=tau)
    ratio = tau / nominal_tau(f0, f_m1)
    if not (1.0 / tau_tolerance_factor <= ratio <= tau_tolerance_factor):
        warnings.warn(
            f"tau={tau:g} s is {ratio:.3g}x the nominal [2(f0+f_m1)]^-1; "
            "extraction assumes the sequence was tuned near nominal",
            stacklevel=2)

    if method == APPROXIMATE:
        return CouplingEstimate(a_par=f_m1 - f0, a_perp=math.pi * f_rabi,
                                method=APPROXIMATE, inputs=inputs)
    if method != EXACT:
        raise ValueError(f"method must be {EXACT!r} or {APPROXIMATE!r}, got {method!r}")

    spacing = 2.0 * tau
    if (abs(math.sin(math.pi * f0 * spacing)) < 1e-9
            or abs(math.sin(math.pi * f_m1 * spacing)) < 1e-9):
        raise DomainError(
            f"tau={tau:g} s makes a precession phase a multiple of pi; "
            "the exact transformation is singular there")
    a_par_a, a_perp_a, valid = _exact_arrays(
        np.float64(f0), np.float64(f_m1), np.float64(f_rabi), tau)
    if not bool(valid):
        raise InconsistentInputError(
            "square root argument f_m1^2 - (f0+a_par)^2 is negative; the "
            "frequency triplet is inconsistent (mis-identified peaks?)")
    return CouplingEstimate(a_par=float(a_par_a), a_perp=float(a_perp_a),
                            method=EXACT, inputs=inputs)


def rabi_frequency(f0: float, a_par: float, a_perp: float, tau: float) -> float:
    """Forward relation: the slow oscillation frequency the sequence would
    show for given couplings, at half-interval tau.

    Inverse of the exact extract_couplings branch; the phase 2*pi*f_rabi
    times the pulse spacing is kept in (0, pi), consistent with a sequence
    tuned near the nominal tau.
    """
    if tau <= 0.0:
        raise ValueError(f"tau must be positive, got {tau!r}")
    f_m1 = math.hypot(f0 + a_par, a_perp)
    if f_m1 == 0.0:
        raise DomainError("f_m1 vanishes; no oscillation to speak of")
    cos_alpha = (f0 + a_par) / f_m1
    spacing = 2.0 * tau
    c0 = math.cos(math.pi * f0 * spacing)
    s0 = math.sin(math.pi * f0 * spacing)
    c1 = math.cos(math.pi * f_m1 * spacing)
    s1 = math.sin(math.pi * f_m1 * spacing)
    x = min(1.0, max(-1.0, c1 * c0 - cos_alpha * s1 * s0))
    return (math.pi - math.acos(x)) / (2.0 * math.pi * spacing)


def propagate_coupling_sigma(inputs: CouplingInputs, method: str = EXACT,
                             n_samples: int = 10_000, seed: int = 0,
                             max_failure_fraction: float = 0.01) -> CouplingEstimate:
    """Monte Carlo uncertainties for the extracted couplings.

    Draws the three frequencies from independent normals around the measured
    values (draw order f0, f_m1, f_rabi; counter-based generator keyed by
    seed), re-runs the extraction on each sample, and reports the sample
    standard deviations. Samples where the exact transformation fails are
    dropped; more than ``max_failure_fraction`` of them aborts.
    """
    if n_samples < _MIN_SIGMA_SAMPLES:
        raise ValueError(f"n_samples must be at least {_MIN_SIGMA_SAMPLES}")
    point = extract_couplings(inputs.f0, inputs.f_m1, inputs.f_rabi, inputs.tau,
                              method=method)
    rng = np.random.Generator(np.random.Philox(key=seed))
    f0 = inputs.f0 + inputs.sigma_f0 * rng.standard_normal(n_samples)
    f_m1 = inputs.f_m1 + inputs.sigma_f_m1 * rng.standard_normal(n_samples)
    f_rabi = inputs.f_rabi + inputs.sigma_f_rabi * rng.standard_normal(n_samples)

    if method == APPROXIMATE:
        a_par = f_m1 - f0
        a_perp = math.pi * f_rabi
        valid = np.isfinite(a_par)
    else:
        a_par, a_perp, valid = _exact_arrays(f0, f_m1, f_rabi, inputs.tau)

    n_failed = int(n_samples - np.count_nonzero(valid))
    if n_failed > max_failure_fraction * n_samples:
        raise InconsistentInputError(
            f"{n_failed}/{n_samples} samples failed the exact transformation; "
            "input uncertainties are too large for these frequencies")
    sig_par = float(np.std(a_par[valid], ddof=1))
    sig_perp = float(np.std(a_perp[valid], ddof=1))
    return CouplingEstimate(point.a_par, point.a_perp, point.method,
                            sigma_a_par=sig_par, sigma_a_perp=sig_perp,
                            inputs=inputs)
