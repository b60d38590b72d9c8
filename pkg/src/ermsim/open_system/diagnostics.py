"""Blue-sideband Rabi diagnostic and vacuum-population extraction.

After down-projection the ion is prepared in |down> (x) chi.  A resonant
blue-sideband drive couples |down, n> <-> |up, n+1> at frequency
eta*Omega_2*sqrt(n+1), so every Fock population contributes one cosine to
<Jz>(t) and the vacuum weight can be read off the signal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import least_squares, nnls

from ..core import HilbertSpace, QuantumState
from ..errors import FitDegeneracyError, ParameterError
from .mcwf import BlueSidebandProtocol, mcwf_evolve
from .noise import DissipatorSpec, scaled_dissipators


@dataclass(frozen=True)
class RabiSignal:
    t: np.ndarray             # seconds
    jz_mean: np.ndarray
    jz_mre: Optional[np.ndarray]
    jz_std: Optional[np.ndarray]
    populations: np.ndarray
    eta_omega2: float
    n_traj: int = 0

    def rows(self):
        for i in range(self.t.size):
            yield {"t_seconds": float(self.t[i]), "jz_mean": float(self.jz_mean[i]),
                   "jz_mre": None if self.jz_mre is None else float(self.jz_mre[i])}

    @property
    def standard_error(self) -> Optional[np.ndarray]:
        if self.jz_std is None or self.n_traj < 2:
            return None
        return self.jz_std / math.sqrt(self.n_traj)


def _populations(motional):
    m = np.asarray(motional, complex)
    if m.ndim == 1:
        p = np.abs(m) ** 2
    elif m.ndim == 2 and m.shape[0] == m.shape[1]:
        p = np.diagonal(m).real.copy()
    else:
        raise ParameterError("motional input must be a state vector or a square density matrix")
    total = p.sum()
    if abs(total - 1.0) > 1e-8:
        raise ParameterError(f"motional state is not normalized (trace {total:.12g})")
    return p


def unitary_rabi_signal(populations, eta_omega2: float, t) -> np.ndarray:
    """<Jz>(t) = -1/2 sum_n p_n cos(eta Omega_2 sqrt(n+1) t)."""
    p = np.asarray(populations, float)
    w = eta_omega2 * np.sqrt(np.arange(p.size) + 1.0)
    return -0.5 * np.cos(np.outer(np.asarray(t, float), w)) @ p


def blue_sideband_drive(motional, eta_omega2: float, t_grid, *, noise: Optional[DissipatorSpec] = None,
                        n_traj: int = 1000, seed: Optional[int] = None, dt: float = 0.05,
                        extra_levels: int = 10) -> RabiSignal:
    """<Jz>(t) under the blue-sideband drive in laboratory time (seconds).

    Without ``noise`` the closed form is used.  With ``noise`` (rates in 1/s)
    an MCWF ensemble is run in units of 1/(eta*Omega_2); this needs a pure
    motional state and a uniform time grid starting at zero.
    """
    if not eta_omega2 > 0:
        raise ParameterError("eta*Omega_2 must be positive")
    t = np.asarray(t_grid, float)
    p = _populations(motional)
    if noise is None or noise.is_zero:
        return RabiSignal(t, unitary_rabi_signal(p, eta_omega2, t), None, None, p, eta_omega2)
    chi = np.asarray(motional, complex)
    if chi.ndim != 1:
        raise ParameterError("the noisy diagnostic needs a pure motional state")
    if t.size < 2 or t[0] != 0 or np.ptp(np.diff(t)) > 1e-9 * t[-1]:
        raise ParameterError("the noisy diagnostic needs a uniform time grid starting at 0")
    space = HilbertSpace(chi.size + extra_levels)
    amp = np.zeros(space.dimension, complex)
    amp[0:2 * chi.size:2] = chi
    model = scaled_dissipators(noise, space, eta_omega2)
    ens = mcwf_evolve(QuantumState(space, amp), BlueSidebandProtocol(eta_omega2 * t[-1]), model,
                      n_traj, seed, dt=dt, samples=t.size, observables=("jz",))
    mean, std, mre = ens.series.column("jz")
    return RabiSignal(t, mean, mre, std, p, eta_omega2, n_traj)


def default_components(populations, coverage: float = 0.999) -> int:
    """Smallest number of Fock components holding ``coverage`` of the population."""
    c = np.cumsum(np.asarray(populations, float))
    return int(min(np.searchsorted(c, coverage * c[-1]) + 1, c.size))


@dataclass(frozen=True)
class VacuumFit:
    p0: float
    p0_error: float
    populations: np.ndarray
    errors: np.ndarray
    damping: Optional[np.ndarray]
    condition: float
    residual_rms: float

    def as_dict(self):
        return {"p0": self.p0, "p0_error": self.p0_error,
                "populations": self.populations.tolist(), "errors": self.errors.tolist(),
                "damping": None if self.damping is None else self.damping.tolist(),
                "condition": self.condition, "residual_rms": self.residual_rms}


def _constrained_amplitudes(a, y):
    """Least squares with p >= 0 and sum(p) <= 1."""
    p, _ = nnls(a, y, maxiter=50 * a.shape[1])
    if p.sum() > 1.0:
        big = 1e4 * max(1.0, float(np.abs(a).max()))
        p, _ = nnls(np.vstack([a, big * np.ones(a.shape[1])]), np.append(y, big), maxiter=50 * a.shape[1])
    return p


def extract_vacuum_population(t, signal, eta_omega2: float, n_components: int, *,
                              damping: bool = False, sigma=None, min_periods: float = 5.0,
                              max_condition: float = 1e8) -> VacuumFit:
    """Fit Fock populations onto the known sideband frequencies and return p0.

    The model is -1/2 sum_n p_n exp(-kappa_n t) cos(eta Omega_2 sqrt(n+1) t)
    with p_n >= 0 and sum p_n <= 1; ``damping`` frees the kappa_n.  Errors
    come from the linearized covariance, weighted by ``sigma`` if given.
    """
    t = np.asarray(t, float)
    y = np.asarray(signal, float)
    if n_components < 1:
        raise ParameterError("need at least one component")
    if t.shape != y.shape or t.ndim != 1:
        raise ParameterError("time and signal must be matching 1-d arrays")
    periods = (t.max() - t.min()) * eta_omega2 / (2 * math.pi)
    if periods < min_periods:
        raise FitDegeneracyError(f"signal covers {periods:.2f} vacuum periods, need {min_periods}",
                                 {"periods": periods})
    if sigma is None:
        wts = np.ones_like(y)
    else:
        sig = np.asarray(sigma, float)
        # samples with vanishing scatter (e.g. t = 0) must not dominate the fit
        floor = 0.1 * float(np.median(sig[sig > 0])) if np.any(sig > 0) else 1.0
        wts = 1.0 / np.maximum(sig, floor)
    omega = eta_omega2 * np.sqrt(np.arange(n_components) + 1.0)
    cos = -0.5 * np.cos(np.outer(t, omega))

    def design(kappa):
        return cos if kappa is None else cos * np.exp(-np.outer(t, kappa))

    sv = np.linalg.svd(design(None), compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if cond > max_condition:
        raise FitDegeneracyError(f"design matrix condition number {cond:.3g} exceeds {max_condition:.3g}",
                                 {"condition": cond})
    kappa = None
    if damping:
        scale = eta_omega2

        def resid(logk):
            a = design(scale * np.exp(logk)) * wts[:, None]
            return a @ _constrained_amplitudes(a, y * wts) - y * wts

        sol = least_squares(resid, np.full(n_components, math.log(1e-4)),
                            bounds=(math.log(1e-12), math.log(10.0)), ftol=1e-13, xtol=1e-13,
                            gtol=1e-13)
        kappa = scale * np.exp(sol.x)
    a = design(kappa) * wts[:, None]
    p = _constrained_amplitudes(a, y * wts)
    r = a @ p - y * wts
    dof = max(y.size - n_components - (n_components if damping else 0), 1)
    jac = a
    if damping:
        dk = -np.outer(t, np.ones(n_components)) * design(kappa) * p[None, :] * wts[:, None]
        jac = np.hstack([a, dk])
    s2 = float(r @ r) / dof
    if sigma is not None:
        s2 = max(s2, 1.0)
    try:
        cov = s2 * np.linalg.pinv(jac.T @ jac)
    except np.linalg.LinAlgError as exc:
        raise FitDegeneracyError(f"covariance unavailable: {exc}") from exc
    err = np.sqrt(np.clip(np.diagonal(cov)[:n_components], 0.0, None))
    rms = float(np.sqrt(np.mean((design(kappa) @ p - y) ** 2)))
    return VacuumFit(float(p[0]), float(err[0]), p, err, kappa, cond, rms)
