"""Semiclassical structure of the extended Rabi model.

The classical counterpart lives on the rescaled phase space (x', p') with
quasispin branch m = +-1/2:

    h(x, p, m) = (x^2 + p^2)/2 + m * sqrt(2 lambda^2 (x^2 + delta^2 p^2) + 1)
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .errors import NumericError, ParameterError, PhaseError

E_VAC = -0.5


@dataclass(frozen=True)
class PhasePoint:
    x: float
    p: float
    m: float = -0.5

    def __post_init__(self):
        if self.m not in (-0.5, 0.5):
            raise ParameterError(f"quasispin branch must be -1/2 or +1/2, got {self.m}")


def classical_energy(point, coupling: float, regime: float):
    """Classical energy at a :class:`PhasePoint` or an ``(x, p, m)`` tuple of arrays."""
    if isinstance(point, PhasePoint):
        x, p, m = point.x, point.p, point.m
    else:
        x, p, m = point
    x = np.asarray(x, float)
    p = np.asarray(p, float)
    out = 0.5 * (x * x + p * p) + np.asarray(m) * np.sqrt(
        2.0 * coupling ** 2 * (x * x + regime ** 2 * p * p) + 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CriticalSet:
    e_vac: float
    e_min: float
    e_sad: Optional[float]
    x_c: float
    p_c: Optional[float]
    lambda_c: float
    lambda_0: float


def _well(k: float) -> tuple:
    """Stationary radius and energy of the m=-1/2 branch along an axis with coupling k."""
    if k <= 1.0:
        return 0.0, E_VAC
    return k / math.sqrt(2.0) * math.sqrt(1.0 - k ** -4), -(k * k + k ** -2) / 4.0


def critical_set(coupling: float, regime: float) -> CriticalSet:
    if coupling < 0:
        raise ParameterError("coupling must be non-negative")
    x_c, e_min = _well(coupling)
    k = coupling * abs(regime)
    p_c, e_sad = _well(k) if k > 1.0 else (None, None)
    return CriticalSet(
        e_vac=E_VAC, e_min=e_min, e_sad=e_sad, x_c=x_c, p_c=p_c,
        lambda_c=1.0, lambda_0=math.inf if regime == 0 else 1.0 / abs(regime),
    )


class PhaseLabel(str, enum.Enum):
    N = "N"
    S1 = "S1"
    S2 = "S2"
    S2P = "S2'"


@dataclass(frozen=True)
class PhaseClass:
    label: PhaseLabel
    boundary: bool


def classify_phase(coupling: float, regime: float) -> PhaseClass:
    """Interaction phase; exact boundaries return the lower phase with a flag."""
    k = coupling * abs(regime)
    if coupling <= 1.0:
        return PhaseClass(PhaseLabel.N, coupling == 1.0)
    if k <= 1.0:
        return PhaseClass(PhaseLabel.S1, k == 1.0)
    return PhaseClass(PhaseLabel.S2 if regime > 0 else PhaseLabel.S2P, False)


# --------------------------------------------------------------------------
# density of states
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityOfStates:
    energies: np.ndarray
    density: np.ndarray
    sigma: float
    level_count: int

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.energies))

    def rows(self):
        for e, r in zip(self.energies, self.density):
            yield {"energy": float(e), "density": float(r)}


def smoothed_dos(spectrum, sigma: Optional[float] = None, grid=None, *, window=None,
                 points_per_sigma: int = 8) -> DensityOfStates:
    """Gaussian-smoothed density of states.

    ``spectrum`` may be a :class:`~ermsim.core.Spectrum` or an array of levels.
    The default width is three mean level spacings inside ``window`` (or the
    whole spectrum); the default grid extends six widths past the levels.
    """
    levels = np.asarray(getattr(spectrum, "eigenvalues", spectrum), float)
    if levels.size == 0:
        raise ParameterError("empty spectrum")
    if sigma is None:
        sel = levels if window is None else levels[(levels >= window[0]) & (levels <= window[1])]
        if sel.size < 2:
            raise ParameterError("need at least two levels to infer a default width")
        sigma = 3.0 * (sel.max() - sel.min()) / (sel.size - 1)
    if not sigma > 0:
        raise ParameterError("sigma must be positive")
    if grid is None:
        lo, hi = levels.min() - 6 * sigma, levels.max() + 6 * sigma
        grid = np.linspace(lo, hi, int(math.ceil((hi - lo) / sigma * points_per_sigma)) + 1)
    grid = np.asarray(grid, float)
    dens = np.zeros_like(grid)
    norm = 1.0 / (sigma * math.sqrt(2 * math.pi))
    for chunk in np.array_split(levels, max(1, levels.size // 512)):
        z = (grid[:, None] - chunk[None, :]) / sigma
        dens += norm * np.exp(-0.5 * z * z).sum(1)
    return DensityOfStates(grid, dens, float(sigma), int(levels.size))


# --------------------------------------------------------------------------
# (anti-)Jaynes-Cummings limit
# --------------------------------------------------------------------------


def jc_spectrum_analytic(system_size: float, coupling: float, sign: int, n_max: int) -> np.ndarray:
    """Closed-form spectrum at delta = sign (JC for +1, anti-JC for -1)."""
    if not system_size > 0 or coupling < 0:
        raise ParameterError("need system_size > 0 and coupling >= 0")
    if sign not in (1, -1):
        raise ParameterError("sign must be +1 or -1")
    d = system_size
    n = np.arange(n_max + 1)
    r = np.sqrt(((1 - sign * d) / d) ** 2 + 4 * coupling ** 2 * (n + 1) / d)
    mid = (2 * n + 1) / (2 * d)
    return np.sort(np.concatenate([[-sign / 2.0], mid - r / 2, mid + r / 2]))


# --------------------------------------------------------------------------
# phase-space volumes between e_sad and e_vac
# --------------------------------------------------------------------------


def _axis_coupling(phi, coupling, regime):
    return 2.0 * coupling ** 2 * (math.cos(phi) ** 2 + regime ** 2 * math.sin(phi) ** 2)


def _radial_w(c: float, e: float):
    """Roots w = sqrt(c u + 1) of w^2 - c w - (1 + 2 c e) = 0 and the discriminant."""
    disc = c * c + 4.0 + 8.0 * c * e
    if disc <= 0.0:
        w = 0.5 * c
        return w, w, 0.0
    w_out = 0.5 * (c + math.sqrt(disc))
    # product of the roots avoids cancellation in the smaller one
    w_in = -(1.0 + 2.0 * c * e) / w_out
    return w_in, w_out, disc


def radial_roots(c: float, e: float) -> tuple:
    """Inner and outer roots u = r^2 of u/2 - sqrt(c u + 1)/2 = e (m = -1/2).

    With w = sqrt(c u + 1) the level equation is the quadratic
    w^2 - c w - (1 + 2 c e) = 0.  For c > 2 and e < -1/2 both roots exceed 1;
    a non-positive discriminant returns the stationary radius twice.
    """
    if not c > 0:
        raise ParameterError("radial coupling must be positive")
    w_in, w_out, _ = _radial_w(c, e)
    if w_in < 1.0:
        raise NumericError("inner root outside the physical branch", {"c": c, "e": e})
    return (w_in * w_in - 1.0) / c, (w_out * w_out - 1.0) / c


def _density_integrand(phi, e, coupling, regime, which):
    # r/|dh/dr| on the level set reduces to 2w/sqrt(disc)
    c = _axis_coupling(phi, coupling, regime)
    w_in, w_out, disc = _radial_w(c, e)
    if disc <= 0.0:
        return 0.0
    return 2.0 * (w_in if which == 0 else w_out) / math.sqrt(disc)


def phase_space_volumes(coupling: float, regime: float, *, epsabs: float = 1e-8,
                        epsrel: float = 1e-8) -> tuple:
    """Inner and outer phase-space volumes (v-, v+) between e_sad and e_vac.

    v = int de int dphi r/|dh/dr| on the m=-1/2 branch, with the energy
    substituted as e = e_sad + (e_vac - e_sad) s^2 to tame the separatrix
    singularity.  The angular integral uses the fourfold symmetry of h.
    """
    cs = critical_set(coupling, regime)
    if cs.e_sad is None:
        raise PhaseError(f"volumes need lambda*|delta| > 1 (got {coupling * abs(regime)})")
    width = cs.e_vac - cs.e_sad

    def volume(which):
        def outer(s):
            if s == 0.0:
                return 0.0
            e = cs.e_sad + width * s * s
            with warnings.catch_warnings():
                # roundoff warnings near the separatrix; accuracy is checked on the outer level
                warnings.simplefilter("ignore", IntegrationWarning)
                inner, _ = quad(_density_integrand, 0.0, math.pi / 2,
                                args=(e, coupling, regime, which),
                                epsabs=epsabs, epsrel=epsrel, limit=200)
            return 4.0 * inner * 2.0 * width * s

        val, err = quad(outer, 0.0, 1.0, epsabs=epsabs, epsrel=epsrel, limit=200)
        if not math.isfinite(val):
            raise NumericError("volume quadrature did not converge", {"error": err})
        return val

    return volume(0), volume(1)


@dataclass(frozen=True)
class EmergentPrediction:
    n_emergent: float
    n_background: float
    ratio: float
    v_minus: float
    v_plus: float


def predict_emergent_counts(coupling: float, regime: float, system_size: float,
                            volumes: Optional[tuple] = None) -> EmergentPrediction:
    """Semiclassical numbers of emergent (N_e) and background (N_b) states."""
    vm, vp = phase_space_volumes(coupling, regime) if volumes is None else volumes
    return EmergentPrediction(vm * system_size / (2 * math.pi), vp * system_size / (2 * math.pi),
                              vm / vp, vm, vp)


def phase_map(couplings, regimes, *, volumes: bool = False):
    """Rows (lambda, delta, phase, e_min, e_sad, v_minus, v_plus) over a grid."""
    rows = []
    for lam in couplings:
        for dl in regimes:
            cs = critical_set(float(lam), float(dl))
            ph = classify_phase(float(lam), float(dl))
            vm = vp = None
            if volumes and cs.e_sad is not None:
                vm, vp = phase_space_volumes(float(lam), float(dl), epsabs=1e-6, epsrel=1e-6)
            rows.append({"lambda": float(lam), "delta": float(dl), "phase": ph.label.value,
                         "boundary": ph.boundary, "e_min": cs.e_min, "e_sad": cs.e_sad,
                         "v_minus": vm, "v_plus": vp})
    return rows
