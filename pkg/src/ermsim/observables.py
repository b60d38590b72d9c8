"""Witness observables on ERM states and spectra."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .core import HilbertSpace, ModelParams, QuantumState, Spectrum, solve_spectrum
from .errors import CoverageError, DimensionError, NumericError, ParameterError, PhaseError
from .semiclassics import EmergentPrediction, critical_set, predict_emergent_counts

LN2 = math.log(2.0)


def _amplitudes(psi):
    if isinstance(psi, QuantumState):
        return psi.amplitudes
    amp = np.asarray(psi, complex)
    if amp.ndim != 1 or amp.size % 2:
        raise DimensionError("amplitude vector must have length 2*(N_max+1)")
    return amp


def amplitude_matrix(psi) -> np.ndarray:
    """Amplitudes as an (N_max+1, 2) matrix with columns (down, up)."""
    return _amplitudes(psi).reshape(-1, 2)


def reduced_motional(psi) -> np.ndarray:
    """Motional density matrix rho_m = Tr_q |psi><psi|."""
    m = amplitude_matrix(psi)
    return m @ m.conj().T


def reduced_qubit(psi) -> np.ndarray:
    m = amplitude_matrix(psi)
    return m.T @ m.conj()


def _entropy_from_probs(p):
    p = np.clip(p, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(-1)


def entanglement_entropy(psi) -> tuple:
    """Qubit-motion von Neumann entropy ``(S, S/ln 2)``."""
    s = np.linalg.svd(amplitude_matrix(psi), compute_uv=False)
    p = s * s
    ent = float(_entropy_from_probs(p / p.sum()))
    return ent, ent / LN2


def entanglement_entropies(vectors) -> np.ndarray:
    """Entropies of many states given as columns; uses the 2x2 qubit reduced matrix."""
    v = np.asarray(vectors)
    down, up = v[0::2], v[1::2]
    a = np.sum(np.abs(down) ** 2, 0)
    d = np.sum(np.abs(up) ** 2, 0)
    b = np.abs(np.sum(down.conj() * up, 0))
    tr = a + d
    disc = np.sqrt(np.maximum((a - d) ** 2 + 4 * b * b, 0.0))
    probs = np.stack([(tr + disc) / 2, (tr - disc) / 2], -1) / tr[:, None]
    return _entropy_from_probs(probs)


# --------------------------------------------------------------------------
# Peres lattice
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PeresLattice:
    energies: np.ndarray
    n_mean: np.ndarray
    jz_mean: np.ndarray
    parities: np.ndarray
    entropy: Optional[np.ndarray] = None
    emergent: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.energies)

    @property
    def points(self):
        return list(zip(self.energies, self.n_mean, self.jz_mean, self.parities))

    def rows(self):
        for i in range(len(self)):
            yield {
                "energy": float(self.energies[i]),
                "n_mean": float(self.n_mean[i]),
                "jz_mean": float(self.jz_mean[i]),
                "parity": int(self.parities[i]),
                "entropy": None if self.entropy is None else float(self.entropy[i] / LN2),
                "emergent_flag": None if self.emergent is None else bool(self.emergent[i]),
            }


def peres_lattice(spec: Spectrum, *, entropy: bool = True, emergent=None) -> PeresLattice:
    """One point (e, <n>, <Jz>, parity) per eigenstate.

    ``emergent`` is an optional index set to flag; the exported entropy is
    normalized by ln 2.
    """
    if spec.eigenvectors is None:
        raise ParameterError("Peres lattice needs eigenvectors")
    flags = None
    if emergent is not None:
        flags = np.zeros(len(spec), bool)
        flags[np.asarray(list(emergent), int)] = True
    return PeresLattice(
        energies=np.array(spec.eigenvalues),
        n_mean=spec.n_mean,
        jz_mean=spec.jz_mean,
        parities=np.array(spec.parities),
        entropy=entanglement_entropies(spec.eigenvectors) if entropy else None,
        emergent=flags,
    )


# --------------------------------------------------------------------------
# Wigner function
# --------------------------------------------------------------------------


def hermite_functions(n_max: int, x, system_size: float = 1.0) -> np.ndarray:
    """Oscillator eigenfunctions <x|n> for n = 0..n_max with hbar_eff = 1/system_size.

    Normalized three-term recurrence; rows are n.
    """
    q = np.sqrt(system_size) * np.asarray(x, float)
    out = np.empty((n_max + 1,) + q.shape)
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * q * q)
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * q * out[0]
    for n in range(1, n_max):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * q * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out * system_size ** 0.25


@dataclass(frozen=True)
class WignerGrid:
    x_grid: np.ndarray
    p_grid: np.ndarray
    values: np.ndarray      # shape (len(p_grid), len(x_grid))
    system_size: float
    tail_mass: float = 0.0

    def integral(self) -> float:
        return float(np.trapezoid(np.trapezoid(self.values, self.x_grid, axis=1), self.p_grid))

    def position_marginal(self) -> np.ndarray:
        return np.trapezoid(self.values, self.p_grid, axis=0)

    def rows(self):
        for j, p in enumerate(self.p_grid):
            for i, x in enumerate(self.x_grid):
                yield {"x": float(x), "p": float(p), "w": float(self.values[j, i])}


def default_wigner_grid(system_size: float, coupling: float = 0.0, regime: float = 0.0,
                        points: int = 201) -> np.ndarray:
    cs = critical_set(coupling, regime)
    extent = 1.5 * max(cs.x_c, cs.p_c or 0.0, 3.0 / math.sqrt(system_size))
    return np.linspace(-extent, extent, points)


def _quadrature_mass(rho, lo, hi, system_size, momentum=False, nodes=400):
    """Probability of the position (or momentum) marginal inside [lo, hi]."""
    t, w = np.polynomial.legendre.leggauss(nodes)
    pts = 0.5 * (hi - lo) * t + 0.5 * (hi + lo)
    w = 0.5 * (hi - lo) * w
    phi = hermite_functions(rho.shape[0] - 1, pts, system_size).astype(complex)
    if momentum:
        phi *= ((-1j) ** np.arange(rho.shape[0]))[:, None]
    dens = np.einsum("mi,mn,ni->i", phi, rho, phi.conj()).real
    return float(dens @ w)


def wigner(rho_m, system_size: float, x_grid=None, p_grid=None, *, coverage_tol: float = 1e-3,
           check_coverage: bool = True) -> WignerGrid:
    """Wigner function of a motional density matrix with hbar_eff = 1/Delta.

    Uses the Laguerre closed form for every Fock pair, organised by
    off-diagonal k = m - n with a normalized recurrence in n:

        W = (Delta/pi) sum_k (2 - delta_k0) Re[e^{-i k theta} sum_n (-1)^n rho_{n+k,n} l_n^k(z)]

    where z = 2 Delta (x^2 + p^2) and l_n^k = sqrt(n!/(n+k)!) z^{k/2} e^{-z/2} L_n^k(z).
    """
    rho = np.asarray(rho_m, complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionError("density matrix must be square")
    scale = max(1.0, float(np.abs(rho).max()))
    if np.abs(rho - rho.conj().T).max() > 1e-10 * scale:
        raise ParameterError("density matrix is not Hermitian")
    if x_grid is None:
        x_grid = default_wigner_grid(system_size)
    if p_grid is None:
        p_grid = np.asarray(x_grid)
    xg = np.asarray(x_grid, float)
    pg = np.asarray(p_grid, float)
    trace = float(np.trace(rho).real)
    tail = 0.0
    if check_coverage:
        tail = max(trace - _quadrature_mass(rho, xg.min(), xg.max(), system_size),
                   trace - _quadrature_mass(rho, pg.min(), pg.max(), system_size, momentum=True))
        if tail > coverage_tol:
            raise CoverageError(f"grid misses probability mass {tail:.3g} > {coverage_tol}",
                                {"tail_mass": tail})

    q, p = np.meshgrid(np.sqrt(system_size) * xg, np.sqrt(system_size) * pg)
    z_full = 2.0 * (q * q + p * p)
    z, inv = np.unique(z_full.ravel(), return_inverse=True)
    phase = np.exp(-1j * np.arctan2(p, q)).ravel()       # e^{-i theta}, q - ip = r e^{-i theta}
    dim = rho.shape[0]
    sign = (-1.0) ** np.arange(dim)
    with np.errstate(divide="ignore"):
        logz = np.log(z)
    total = np.zeros(z_full.size)
    rot = np.ones(z_full.size, complex)
    for k in range(dim):
        diag = np.diagonal(rho, -k) * sign[: dim - k]   # rho_{n+k, n}
        if k == 0:
            prev = np.exp(-0.5 * z)
        else:
            prev = np.exp(0.5 * k * logz - 0.5 * z - 0.5 * gammaln(k + 1.0))
            prev[z == 0] = 0.0
        acc = diag[0] * prev
        older = np.zeros_like(prev)
        for n in range(dim - k - 1):
            new = ((2 * n + k + 1 - z) * prev - math.sqrt(n * (n + k)) * older) \
                / math.sqrt((n + 1) * (n + k + 1))
            older, prev = prev, new
            acc = acc + diag[n + 1] * prev
        weight = 1.0 if k == 0 else 2.0
        total += weight * (rot * acc[inv]).real
        rot *= phase
    values = (system_size / math.pi) * total.reshape(z_full.shape)
    return WignerGrid(xg, pg, values, float(system_size), tail)


def wigner_quadrature(rho_m, system_size: float, x_grid, p_grid, *, y_points: int = 801,
                      y_extent: Optional[float] = None) -> np.ndarray:
    """Direct y-quadrature of the Wigner integral; a cross-check for small Fock support."""
    rho = np.asarray(rho_m, complex)
    dim = rho.shape[0]
    if y_extent is None:
        y_extent = (math.sqrt(2 * dim + 1) + 8.0) / math.sqrt(system_size)
    y = np.linspace(-y_extent, y_extent, y_points)
    dy = y[1] - y[0]
    out = np.empty((len(p_grid), len(x_grid)))
    kernel = np.exp(2j * system_size * np.outer(y, p_grid))          # (y, p)
    for i, x in enumerate(x_grid):
        left = hermite_functions(dim - 1, x - y, system_size)          # <x-y|m>
        right = hermite_functions(dim - 1, x + y, system_size)         # <n|x+y> (real)
        f = np.einsum("my,mn,ny->y", left, rho, right)
        out[:, i] = (system_size / math.pi) * (f @ kernel).real * dy
    return out


# --------------------------------------------------------------------------
# strength function
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StrengthFunction:
    energies: np.ndarray
    weights: np.ndarray
    broadening: Optional[float] = None

    def total(self) -> float:
        return float(self.weights.sum())

    def mean_energy(self) -> float:
        return float(self.weights @ self.energies)

    def broadened(self, grid, sigma: Optional[float] = None) -> np.ndarray:
        sigma = sigma or self.broadening
        if not sigma or sigma <= 0:
            raise ParameterError("broadening width must be positive")
        g = np.asarray(grid, float)
        z = (g[:, None] - self.energies[None, :]) / sigma
        return np.exp(-0.5 * z * z) @ self.weights / (sigma * math.sqrt(2 * math.pi))

    def rows(self):
        for e, w in zip(self.energies, self.weights):
            yield {"energy": float(e), "weight": float(w)}


def strength_function(psi, spec: Spectrum, *, broadening: Optional[float] = None,
                      sum_tol: float = 1e-8) -> StrengthFunction:
    """Weights |<psi_i|psi>|^2 over the eigenbasis of ``spec``.

    The sum rule is enforced when the spectrum is complete.
    """
    amp = _amplitudes(psi)
    if spec.eigenvectors is None:
        raise ParameterError("strength function needs eigenvectors")
    if amp.shape[0] != spec.eigenvectors.shape[0]:
        raise DimensionError(
            f"state dimension {amp.shape[0]} does not match spectrum {spec.eigenvectors.shape[0]}")
    w = np.abs(spec.eigenvectors.conj().T @ amp) ** 2
    if spec.is_complete:
        norm = float(np.vdot(amp, amp).real)
        if abs(w.sum() - norm) > sum_tol:
            raise NumericError("strength-function sum rule violated",
                               {"sum": float(w.sum()), "norm": norm})
    return StrengthFunction(np.array(spec.eigenvalues), w, broadening)


# --------------------------------------------------------------------------
# emergent states
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EmergentClassification:
    indices: np.ndarray
    window: tuple
    n_bound: float

    @property
    def count(self) -> int:
        return int(self.indices.size)


def emergent_window(coupling: float, regime: float, system_size: float,
                    padding: Optional[float] = None) -> tuple:
    """Energy window (e_sad, e_vac + padding]; the default padding is 1/Delta."""
    cs = critical_set(coupling, regime)
    if cs.e_sad is None:
        raise PhaseError(f"emergent states need lambda*|delta| > 1 (got {coupling * abs(regime)})")
    pad = 1.0 / system_size if padding is None else padding
    return cs.e_sad, cs.e_vac + pad


def classify_emergent(spec: Spectrum, coupling: float, regime: float, system_size: float,
                      *, padding: Optional[float] = None) -> EmergentClassification:
    """Indices of eigenstates in the S2/S2' window with <n>/Delta < p_c^2/2.

    The window's upper edge sits ``padding`` above e_vac so that the
    stabilized vacuum, shifted up by O(1/Delta), is included; ``padding=0``
    gives the open interval (e_sad, e_vac).
    """
    lo, hi = emergent_window(coupling, regime, system_size, padding)
    cs = critical_set(coupling, regime)
    bound = cs.p_c ** 2 / 2.0
    e = np.asarray(spec.eigenvalues)
    in_window = (e > lo) & ((e < hi) if padding == 0 else (e <= hi))
    idx = np.flatnonzero(in_window & (spec.n_mean / system_size < bound))
    return EmergentClassification(idx, (lo, hi), bound * system_size)


@dataclass(frozen=True)
class EmergentCount:
    system_size: float
    counted: int
    prediction: EmergentPrediction
    fock_cutoff: int

    @property
    def relative_error(self) -> float:
        return abs(self.counted - self.prediction.n_emergent) / self.prediction.n_emergent


def count_emergent_states(coupling: float, regime: float, system_size: float, *,
                          fock_cutoff: Optional[int] = None, padding: Optional[float] = None,
                          volumes: Optional[tuple] = None) -> EmergentCount:
    """Count emergent eigenstates and compare with the phase-space prediction.

    Only levels inside the emergent window are computed (parity-sector
    tridiagonal solve), so large Delta stays affordable.
    """
    lo, hi = emergent_window(coupling, regime, system_size, padding)
    if fock_cutoff is None:
        fock_cutoff = int(20 * system_size + 60)
    params = ModelParams(system_size, coupling, regime)
    spec = solve_spectrum(params, HilbertSpace(fock_cutoff), energy_window=(lo, hi))
    cls = classify_emergent(spec, coupling, regime, system_size, padding=padding)
    pred = predict_emergent_counts(coupling, regime, system_size, volumes)
    return EmergentCount(system_size, cls.count, pred, fock_cutoff)
