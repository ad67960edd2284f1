"""Monte Carlo propagation of measurement uncertainties to (phi, a_iso, r, theta).

Every sample redraws all uncertain inputs from independent normals, re-runs
the extraction + azimuth fit + inversion pipeline, and contributes one
scatter point. Sampling is keyed per sample index with a counter-based
generator and the numerics below are strictly elementwise per sample, so the
result is bit-identical no matter how the samples are partitioned across
workers.

The per-sample fit is a bounded local search warm-started at the
unperturbed optimum (golden-section line minimizations, alternated over phi
and a_iso when the contact term is free). It tracks the scipy refinement
used for the point fit to ~1e-6 deg in phi, at a small fixed cost per
sample; basin hops to mirror minima are deliberately not sampled, since
degenerate minima are reported separately by the fit itself.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import DEFAULT_CONSTANTS, PhysicalConstants
from .dipole import invert_dipole, invert_many
from .dynamics import GENERAL_FIELD, LOW_FIELD
from .errors import ConvergenceError
from .extract import APPROXIMATE, EXACT, _exact_arrays
from .localize import fit_azimuth

_TWO_PI = 2.0 * math.pi

PARAMETERS = ("phi", "a_iso", "r", "theta")
_COLUMN = {name: k for k, name in enumerate(PARAMETERS)}


class PointEstimate(NamedTuple):
    phi: float    # rad
    a_iso: float  # Hz
    r: float      # m
    theta: float  # rad


@dataclass(frozen=True)
class McConfig:
    n_samples: int = 40_000
    seed: int = 0
    confidence_levels: tuple = (0.6827, 0.95)
    parallel_chunks: int = 1
    max_failure_fraction: float = 0.05

    def __post_init__(self):
        if self.n_samples < 100:
            raise ValueError(f"n_samples must be at least 100, got {self.n_samples!r}")
        if not self.confidence_levels:
            raise ValueError("need at least one confidence level")
        for lv in self.confidence_levels:
            if not (0.0 < lv < 1.0):
                raise ValueError(f"confidence level must be in (0, 1), got {lv!r}")
        if self.parallel_chunks < 1:
            raise ValueError("parallel_chunks must be positive")


@dataclass(frozen=True)
class EstimateResult:
    """Point estimates, confidence intervals and the scatter behind them.

    ``point`` is the fit on unperturbed inputs (primary); ``scatter_mode`` is
    the per-parameter histogram mode of the scatter (secondary, coarse).
    ``ci`` maps parameter name -> confidence level -> (low, high). For phi
    the interval brackets the circular spread around the circular mean and
    its endpoints may fall outside [0, 2pi) so that low < high always holds.
    """

    point: PointEstimate
    scatter_mode: PointEstimate
    ci: dict
    scatter: np.ndarray  # (n_ok, 4) columns phi, a_iso, r, theta
    n_samples: int
    n_failed: int

    def __post_init__(self):
        s = np.asarray(self.scatter, dtype=float)
        if s.ndim != 2 or s.shape[1] != 4:
            raise ValueError("scatter must have shape (n, 4)")
        if s.shape[0] != self.n_samples - self.n_failed:
            raise ValueError("scatter length must equal n_samples - n_failed")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "scatter", s)


def circular_mean(phi: np.ndarray) -> float:
    return float(np.arctan2(np.mean(np.sin(phi)), np.mean(np.cos(phi)))) % _TWO_PI


def _recenter(phi: np.ndarray, center: float) -> np.ndarray:
    """Signed deviations from center, in (-pi, pi]."""
    return (np.asarray(phi) - center + math.pi) % _TWO_PI - math.pi


def _quantile_ci(values: np.ndarray, level: float) -> tuple[float, float]:
    lo = (1.0 - level) / 2.0
    return (float(np.quantile(values, lo)), float(np.quantile(values, 1.0 - lo)))


def _hist_mode(values: np.ndarray, bins: int = 64) -> float:
    vmin, vmax = float(np.min(values)), float(np.max(values))
    if vmin == vmax:
        return vmin
    counts, edges = np.histogram(values, bins=bins, range=(vmin, vmax))
    k = int(np.argmax(counts))
    return 0.5 * (edges[k] + edges[k + 1])


# warm-start search geometry: generous first brackets around the point fit,
# then re-centered narrow line searches to beat the phi/a_iso coupling
_PHI_WINDOW = math.pi / 6.0
_ISO_WINDOW = 60e3      # Hz
_PHI_REFINE = 0.05      # rad
_ISO_REFINE = 10e3      # Hz
_REFINE_CYCLES = 8
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
_INVPHI2 = 1.0 - _INVPHI


def _finite_or_inf(c: np.ndarray) -> np.ndarray:
    return np.where(np.isfinite(c), c, np.inf)


def _golden(fn, lo: np.ndarray, hi: np.ndarray, iters: int):
    """Lane-wise golden-section minimization of fn over [lo, hi].

    Non-finite objective values count as +inf, so lanes probing outside the
    model's domain retreat to their best finite point instead of derailing.
    """
    a = lo.copy()
    b = hi.copy()
    for _ in range(iters):
        h = b - a
        c = a + _INVPHI2 * h
        d = a + _INVPHI * h
        left = _finite_or_inf(fn(c)) < _finite_or_inf(fn(d))
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    return 0.5 * (a + b)


def _chunk_cost(recs_data, a_par, a_perp, variant, constants):
    """Summed squared xi as a lane-wise function of (phi, a_iso) arrays.

    ``recs_data`` holds per record (measured fp_m1 - fp0 (m,), B0 (3, m),
    dB (3, m)); lanes whose couplings do not invert evaluate to NaN. Mirrors
    the scalar model in localize to machine precision.
    """
    C = constants.dipolar_coefficient
    gn = constants.gamma_n
    ge = constants.gamma_e
    D = constants.D

    def cost(phi, iso):
        r, theta = invert_many(a_par, a_perp, iso, constants)
        with np.errstate(invalid="ignore", divide="ignore"):
            b = C / r ** 3
            st = np.sin(theta)
            ct = np.cos(theta)
            nx = st * np.cos(phi)
            ny = st * np.sin(phi)
            nz = ct
            Axx = b * (3.0 * nx * nx - 1.0) + iso
            Axy = 3.0 * b * nx * ny
            Axz = 3.0 * b * nx * nz
            Ayy = b * (3.0 * ny * ny - 1.0) + iso
            Ayz = 3.0 * b * ny * nz
            Azz = b * (3.0 * nz * nz - 1.0) + iso
            total = 0.0
            for meas, B0, dB in recs_data:
                f_th = []
                for m_S in (0, -1):
                    if variant == LOW_FIELD:
                        k = (3.0 * abs(m_S) - 2.0) * ge / (gn * D)
                    else:
                        denom = D * D - (ge * B0[2]) ** 2
                        k = (((3.0 * abs(m_S) - 2.0) * D + m_S * ge * B0[2])
                             / denom) * (ge / gn)
                        k = np.where(np.abs(denom) < 1e-9 * D * D, np.nan, k)
                    ex = k * (Axx * dB[0] + Axy * dB[1] + Axz * dB[2])
                    ey = k * (Axy * dB[0] + Ayy * dB[1] + Ayz * dB[2])
                    vx = -gn * (B0[0] + dB[0] + ex) + m_S * Axz
                    vy = -gn * (B0[1] + dB[1] + ey) + m_S * Ayz
                    vz = -gn * (B0[2] + dB[2]) + m_S * Azz
                    f_th.append(np.sqrt(vx * vx + vy * vy + vz * vz))
                xi = meas - (f_th[1] - f_th[0])
                total = total + xi * xi
        return total

    return cost


def _chunk_estimates(idx: np.ndarray, seed: int, coupling, records,
                     fix_a_iso, point, variant, constants) -> np.ndarray:
    """(len(idx), 4) scatter rows for one contiguous sample range.

    Failed lanes (couplings that do not extract or invert, or a resonant
    enhancement denominator) come back as all-NaN rows.
    """
    m = len(idx)
    inputs = coupling.inputs
    n_input_draws = 3 if inputs is not None else 2
    n_draws = n_input_draws + 8 * len(records)
    draws = np.empty((m, n_draws))
    for j, i in enumerate(idx):
        rng = np.random.Generator(np.random.Philox(key=[seed, int(i)]))
        draws[j] = rng.standard_normal(n_draws)

    if inputs is not None:
        f0 = inputs.f0 + inputs.sigma_f0 * draws[:, 0]
        f_m1 = inputs.f_m1 + inputs.sigma_f_m1 * draws[:, 1]
        f_rabi = inputs.f_rabi + inputs.sigma_f_rabi * draws[:, 2]
        valid = (f0 > 0.0) & (f_m1 >= f0) & (f_rabi > 0.0)
        if coupling.method == APPROXIMATE:
            a_par = f_m1 - f0
            a_perp = math.pi * f_rabi
        else:
            a_par, a_perp, ok = _exact_arrays(f0, f_m1, f_rabi, inputs.tau)
            valid &= ok
    else:
        a_par = coupling.a_par + coupling.sigma_a_par * draws[:, 0]
        a_perp = coupling.a_perp + coupling.sigma_a_perp * draws[:, 1]
        valid = a_perp >= 0.0

    recs_data = []
    k = n_input_draws
    for rec in records:
        fp0 = rec.fp0 + rec.sigma_fp0 * draws[:, k]
        fp_m1 = rec.fp_m1 + rec.sigma_fp_m1 * draws[:, k + 1]
        B0 = rec.B0.components[:, None] + rec.sigma_B0[:, None] * draws[:, k + 2:k + 5].T
        dB = rec.dB.components[:, None] + rec.sigma_dB[:, None] * draws[:, k + 5:k + 8].T
        recs_data.append((fp_m1 - fp0, B0, dB))
        k += 8

    cost = _chunk_cost(recs_data, a_par, a_perp, variant, constants)
    phi = np.full(m, point.phi)
    if fix_a_iso is not None:
        iso = np.full(m, float(fix_a_iso))
        phi = _golden(lambda x: cost(x, iso), phi - _PHI_WINDOW,
                      phi + _PHI_WINDOW, 48)
    else:
        iso = np.full(m, point.a_iso)
        phi = _golden(lambda x: cost(x, iso), phi - _PHI_WINDOW,
                      phi + _PHI_WINDOW, 32)
        iso = _golden(lambda y: cost(phi, y), iso - _ISO_WINDOW,
                      iso + _ISO_WINDOW, 32)
        for _ in range(_REFINE_CYCLES):
            phi = _golden(lambda x: cost(x, iso), phi - _PHI_REFINE,
                          phi + _PHI_REFINE, 26)
            iso = _golden(lambda y: cost(phi, y), iso - _ISO_REFINE,
                          iso + _ISO_REFINE, 26)

    r, theta = invert_many(a_par, a_perp, iso, constants)
    ok = valid & np.isfinite(cost(phi, iso)) & np.isfinite(r)
    out = np.column_stack([phi % _TWO_PI, iso, r, theta])
    out[~ok] = np.nan
    return out


def propagate(records, coupling, mc: McConfig, fix_a_iso: float | None = None,
              variant: str = GENERAL_FIELD,
              constants: PhysicalConstants = DEFAULT_CONSTANTS,
              fit_options: dict | None = None) -> EstimateResult:
    """Full uncertainty propagation for one nucleus.

    Per-sample draw order is fixed and documented: first the coupling inputs
    (f0, f_m1, f_rabi when the estimate carries its raw inputs, otherwise
    a_par, a_perp from their sigmas), then per record fp0, fp_m1, B0x, B0y,
    B0z, dBx, dBy, dBz. Each sample uses its own generator keyed by
    (seed, sample index), so any worker partition produces the same scatter.
    Samples that fail extraction or inversion are dropped and counted; more
    than ``mc.max_failure_fraction`` of them aborts. ``fit_options`` is
    forwarded to the point fit only; the per-sample search is fixed.
    """
    records = list(records)
    if not records:
        raise ValueError("need at least one measurement record")
    if coupling.inputs is None and (coupling.sigma_a_par is None
                                    or coupling.sigma_a_perp is None):
        raise ValueError("coupling must carry raw inputs or both sigmas to propagate")
    seed = int(mc.seed) % (1 << 64)

    point_fit = fit_azimuth(records, coupling, fix_a_iso, variant=variant,
                            constants=constants, **(fit_options or {}))
    point_pos = invert_dipole(coupling.a_par, coupling.a_perp, point_fit.a_iso,
                              constants)
    point = PointEstimate(point_fit.phi, point_fit.a_iso, point_pos.r,
                          point_pos.theta)

    n = mc.n_samples
    chunks = np.array_split(np.arange(n), mc.parallel_chunks)

    def run_chunk(idx):
        return _chunk_estimates(idx, seed, coupling, records, fix_a_iso,
                                point, variant, constants)

    if mc.parallel_chunks == 1:
        rows = run_chunk(chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=mc.parallel_chunks) as ex:
            rows = np.concatenate(list(ex.map(run_chunk, chunks)))

    good = ~np.isnan(rows[:, 0])
    n_failed = int(n - good.sum())
    if n_failed > mc.max_failure_fraction * n:
        raise ConvergenceError(
            f"{n_failed}/{n} Monte Carlo samples failed the pipeline; "
            "uncertainties are too large for a meaningful propagation")
    if n_failed == n:
        raise ConvergenceError("all Monte Carlo samples failed")
    scatter = rows[good]

    phi_col = scatter[:, 0]
    mu = circular_mean(phi_col)
    dev = _recenter(phi_col, mu)
    ci: dict = {name: {} for name in PARAMETERS}
    for lv in mc.confidence_levels:
        lo, hi = _quantile_ci(dev, lv)
        ci["phi"][lv] = (mu + lo, mu + hi)
        for name in ("a_iso", "r", "theta"):
            ci[name][lv] = _quantile_ci(scatter[:, _COLUMN[name]], lv)

    mode = PointEstimate(
        phi=(mu + _hist_mode(dev)) % _TWO_PI,
        a_iso=_hist_mode(scatter[:, 1]),
        r=_hist_mode(scatter[:, 2]),
        theta=_hist_mode(scatter[:, 3]))
    return EstimateResult(point=point, scatter_mode=mode, ci=ci, scatter=scatter,
                          n_samples=n, n_failed=n_failed)


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray   # bins + 1 edges, in the parameter's native units
    counts: np.ndarray
    circular: bool      # True when edges live in recentered phi coordinates

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float).copy()
        c = np.asarray(self.counts).copy()
        if len(e) != len(c) + 1:
            raise ValueError("need len(edges) = len(counts) + 1")
        e.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "counts", c)


def histogram(scatter: np.ndarray, parameter: str, bins: int) -> Histogram:
    """Marginal histogram of one scatter column; counts sum to len(scatter).

    phi is binned circularly: values are recentered on their circular mean
    before binning so a mode wrapping 0/2pi stays contiguous. The returned
    edges are then in recentered coordinates (mean + deviation), which may
    extend slightly outside [0, 2pi).
    """
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins!r}")
    s = np.asarray(scatter, dtype=float)
    if s.ndim != 2 or s.shape[1] != 4 or s.shape[0] == 0:
        raise ValueError("scatter must be a non-empty (n, 4) array")
    if parameter not in _COLUMN:
        raise ValueError(f"parameter must be one of {PARAMETERS}, got {parameter!r}")
    col = s[:, _COLUMN[parameter]]
    if parameter == "phi":
        mu = circular_mean(col)
        dev = _recenter(col, mu)
        counts, edges = np.histogram(dev, bins=bins, range=(-math.pi, math.pi))
        return Histogram(edges=mu + edges, counts=counts, circular=True)
    counts, edges = np.histogram(col, bins=bins)
    return Histogram(edges=edges, counts=counts, circular=False)
