"""Extended Rabi model on a truncated qubit x Fock space.

Basis convention: index ``i = 2*n + s`` with ``s = 0`` for qubit-down and
``s = 1`` for qubit-up, ``n`` the phonon number.  All Hamiltonians are in
the dimensionless units of ``h = H / (eps * sqrt(Delta))``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.constants import hbar as HBAR

from .errors import ConventionError, DimensionError, NumericError, ParameterError, RegimeError

TWO_PI = 2.0 * math.pi


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelParams:
    """Dimensionless control parameters of the extended Rabi model.

    Parameters
    ----------
    system_size : float
        Effective system size Delta (inverse effective Planck constant).
    coupling : float
        Rescaled coupling lambda.
    regime : float
        Interpolation parameter delta in [-1, 1]; -1 anti-JC, 0 Rabi, 1 JC.
    energy_scale : float, optional
        eps in joules.  Only needed for conversions to laboratory time.
    """

    system_size: float
    coupling: float
    regime: float
    energy_scale: Optional[float] = None

    def __post_init__(self):
        if not (self.system_size > 0 and math.isfinite(self.system_size)):
            raise ParameterError(f"system size must be positive, got {self.system_size}")
        if not (self.coupling >= 0 and math.isfinite(self.coupling)):
            raise ParameterError(f"coupling must be non-negative, got {self.coupling}")
        if not (-1.0 <= self.regime <= 1.0):
            raise ParameterError(f"regime delta must lie in [-1, 1], got {self.regime}")
        if self.energy_scale is not None and not self.energy_scale > 0:
            raise ParameterError(f"energy scale must be positive, got {self.energy_scale}")

    def with_coupling(self, coupling: float) -> "ModelParams":
        return ModelParams(self.system_size, coupling, self.regime, self.energy_scale)

    @property
    def rate_scale(self) -> float:
        """eps*sqrt(Delta)/hbar in 1/s: one unit of dimensionless time per second."""
        if self.energy_scale is None:
            raise ParameterError("energy_scale is required for laboratory-time conversion")
        return self.energy_scale * math.sqrt(self.system_size) / HBAR


@dataclass(frozen=True)
class TrapParams:
    """Laboratory parameters of the bichromatic detuned-sideband drive.

    All frequencies are angular (rad/s).  ``rabi_red`` and ``rabi_blue`` are
    the bare carrier Rabi frequencies; the sideband couplings are
    ``lamb_dicke * rabi_*``.
    """

    secular_freq: float
    red_detuning: float
    blue_detuning: float
    lamb_dicke: float
    rabi_red: float
    rabi_blue: float
    qubit_freq: Optional[float] = None

    def __post_init__(self):
        if not self.lamb_dicke > 0:
            raise ParameterError(f"Lamb-Dicke parameter must be positive, got {self.lamb_dicke}")
        if self.rabi_red < 0 or self.rabi_blue < 0:
            raise ParameterError("Rabi frequencies must be non-negative")

    @classmethod
    def from_sideband_rabi(cls, secular_freq, red_detuning, blue_detuning, lamb_dicke,
                           eta_rabi_red, eta_rabi_blue, qubit_freq=None):
        """Build from the sideband Rabi frequencies eta*Omega_1, eta*Omega_2."""
        return cls(secular_freq, red_detuning, blue_detuning, lamb_dicke,
                   eta_rabi_red / lamb_dicke, eta_rabi_blue / lamb_dicke, qubit_freq)

    @property
    def convention_ok(self) -> bool:
        return (self.red_detuning + self.blue_detuning) < 0 and self.red_detuning > self.blue_detuning

    @property
    def sideband_coupling(self) -> float:
        """Lambda = eta*(Omega_1 + Omega_2)/2 in rad/s."""
        return self.lamb_dicke * (self.rabi_red + self.rabi_blue) / 2.0


def map_trap_to_model(trap: TrapParams) -> ModelParams:
    """Map laboratory drive parameters onto (Delta, lambda, delta, eps)."""
    dr, db = trap.red_detuning, trap.blue_detuning
    if not trap.convention_ok:
        raise ConventionError(
            f"detunings must satisfy d_r + d_b < 0 and d_r > d_b (got d_r={dr}, d_b={db})")
    gap2 = db * db - dr * dr
    if not gap2 > 0:
        raise ConventionError("d_b^2 - d_r^2 must be positive")
    omega_sum = trap.rabi_red + trap.rabi_blue
    if omega_sum == 0:
        raise RegimeError("regime delta is undefined for Omega_1 + Omega_2 = 0")
    root = math.sqrt(gap2)
    return ModelParams(
        system_size=(db + dr) / (db - dr),
        coupling=2.0 * trap.sideband_coupling / root,
        regime=(trap.rabi_red - trap.rabi_blue) / omega_sum,
        energy_scale=0.5 * HBAR * root,
    )


def map_model_to_trap(params: ModelParams, lamb_dicke: float, secular_freq: float) -> TrapParams:
    """Inverse of :func:`map_trap_to_model` at fixed eta and nu."""
    if params.energy_scale is None:
        raise ParameterError("energy_scale is required to recover detunings")
    prod = (2.0 * params.energy_scale / HBAR) ** 2      # (d_b + d_r)(d_b - d_r)
    diff = -math.sqrt(prod / params.system_size)         # d_b - d_r < 0
    total = params.system_size * diff                    # d_b + d_r < 0
    blue, red = (total + diff) / 2.0, (total - diff) / 2.0
    big_lambda = params.coupling * params.energy_scale / HBAR
    omega_sum = 2.0 * big_lambda / lamb_dicke
    return TrapParams(
        secular_freq=secular_freq,
        red_detuning=red,
        blue_detuning=blue,
        lamb_dicke=lamb_dicke,
        rabi_red=omega_sum * (1.0 + params.regime) / 2.0,
        rabi_blue=omega_sum * (1.0 - params.regime) / 2.0,
    )


def tau_from_lab_time(t, energy_scale, system_size):
    """Dimensionless time tau = eps * t * sqrt(Delta) / hbar."""
    if not energy_scale > 0 or not system_size > 0:
        raise ParameterError("energy scale and system size must be positive")
    return np.multiply(t, energy_scale * math.sqrt(system_size) / HBAR)


def lab_time_from_tau(tau, energy_scale, system_size):
    if not energy_scale > 0 or not system_size > 0:
        raise ParameterError("energy scale and system size must be positive")
    return np.divide(tau, energy_scale * math.sqrt(system_size) / HBAR)


# --------------------------------------------------------------------------
# feasibility
# --------------------------------------------------------------------------


@dataclass
class FeasibilityReport:
    red_ratio: float
    blue_ratio: float
    red_status: str
    blue_status: str
    convention_ok: bool
    lamb_dicke: float
    lamb_dicke_status: str
    energy_scale: Optional[float]
    model: Optional[ModelParams]
    ramp_duration: Optional[float]
    tau_f: Optional[float]
    messages: list = field(default_factory=list)

    @property
    def status(self) -> str:
        states = [self.red_status, self.blue_status, self.lamb_dicke_status]
        if not self.convention_ok or "fail" in states:
            return "fail"
        return "warn" if "warn" in states else "pass"

    def as_dict(self) -> dict:
        out = {
            "status": self.status,
            "red_ratio": self.red_ratio,
            "blue_ratio": self.blue_ratio,
            "red_status": self.red_status,
            "blue_status": self.blue_status,
            "convention_ok": self.convention_ok,
            "lamb_dicke": self.lamb_dicke,
            "lamb_dicke_status": self.lamb_dicke_status,
            "energy_scale_J": self.energy_scale,
            "energy_scale_over_hbar_2pi_hz": (None if self.energy_scale is None
                                              else self.energy_scale / HBAR / TWO_PI),
            "ramp_duration_s": self.ramp_duration,
            "tau_f": self.tau_f,
            "messages": list(self.messages),
        }
        if self.model is not None:
            out["model"] = {"system_size": self.model.system_size,
                            "coupling": self.model.coupling,
                            "regime": self.model.regime}
        return out


def _grade(value, pass_below, warn_below):
    if value <= pass_below:
        return "pass"
    return "warn" if value <= warn_below else "fail"


def check_feasibility(trap: TrapParams, ramp_duration: Optional[float] = None, *,
                      pass_ratio: float = 0.025, warn_ratio: float = 0.03,
                      lamb_dicke_pass: float = 0.1, lamb_dicke_warn: float = 0.3) -> FeasibilityReport:
    """Report-only check of the detuned-sideband validity conditions.

    ``|d_{r,b}|/nu`` must be small for the second rotating-wave
    approximation; thresholds are advisory.
    """
    if not trap.secular_freq > 0:
        raise ParameterError("secular frequency must be positive")
    rr = abs(trap.red_detuning) / trap.secular_freq
    br = abs(trap.blue_detuning) / trap.secular_freq
    msgs = []
    model = None
    tau_f = None
    eps = None
    if not trap.convention_ok:
        msgs.append("sign convention violated: need d_r + d_b < 0 and d_r > d_b")
    else:
        try:
            model = map_trap_to_model(trap)
            eps = model.energy_scale
        except (ConventionError, RegimeError) as exc:
            msgs.append(str(exc))
            gap2 = trap.blue_detuning ** 2 - trap.red_detuning ** 2
            if gap2 > 0:
                eps = 0.5 * HBAR * math.sqrt(gap2)
    if model is not None and ramp_duration is not None:
        tau_f = float(tau_from_lab_time(ramp_duration, model.energy_scale, model.system_size))
    ld = _grade(trap.lamb_dicke, lamb_dicke_pass, lamb_dicke_warn)
    if ld != "pass":
        msgs.append(f"Lamb-Dicke parameter {trap.lamb_dicke:.3g} is not << 1")
    return FeasibilityReport(
        red_ratio=rr, blue_ratio=br,
        red_status=_grade(rr, pass_ratio, warn_ratio),
        blue_status=_grade(br, pass_ratio, warn_ratio),
        convention_ok=trap.convention_ok,
        lamb_dicke=trap.lamb_dicke, lamb_dicke_status=ld,
        energy_scale=eps, model=model,
        ramp_duration=ramp_duration, tau_f=tau_f, messages=msgs,
    )


# --------------------------------------------------------------------------
# Hilbert space, states, operators
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HilbertSpace:
    fock_cutoff: int

    def __post_init__(self):
        if int(self.fock_cutoff) != self.fock_cutoff or self.fock_cutoff < 0:
            raise ParameterError(f"fock cutoff must be a non-negative integer, got {self.fock_cutoff}")

    @property
    def dimension(self) -> int:
        return 2 * (self.fock_cutoff + 1)

    @staticmethod
    def index(n, s):
        return 2 * np.asarray(n) + np.asarray(s)

    @property
    def phonon_numbers(self) -> np.ndarray:
        return np.arange(self.dimension) // 2

    @property
    def qubit_states(self) -> np.ndarray:
        return np.arange(self.dimension) % 2

    @property
    def jz_values(self) -> np.ndarray:
        return self.qubit_states - 0.5

    @property
    def parity_values(self) -> np.ndarray:
        """Eigenvalues of (-1)^(n + Jz + 1/2) = (-1)^(n + s) on the basis."""
        return 1 - 2 * ((self.phonon_numbers + self.qubit_states) % 2)

    def parity_block(self, parity: int) -> np.ndarray:
        """Basis indices of one parity sector; position k carries n = k."""
        n = np.arange(self.fock_cutoff + 1)
        s = n % 2 if parity > 0 else (n + 1) % 2
        return 2 * n + s


def default_cutoff(system_size: float, coupling: float) -> int:
    """Fock cutoff heuristic ceil(Delta * max(4 x_c^2, 8) + 40)."""
    xc2 = 0.5 * coupling ** 2 * (1.0 - coupling ** -4) if coupling > 1 else 0.0
    return int(math.ceil(system_size * max(4.0 * xc2, 8.0) + 40))


@dataclass
class QuantumState:
    """Amplitudes over the qubit x Fock basis of ``space``."""

    space: HilbertSpace
    amplitudes: np.ndarray
    norm_tolerance: float = 1e-10
    normalized: bool = True

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.space.dimension,):
            raise DimensionError(
                f"amplitudes have shape {self.amplitudes.shape}, expected ({self.space.dimension},)")
        if self.normalized and abs(self.norm() ** 2 - 1.0) > self.norm_tolerance:
            raise ParameterError(f"state is not normalized: |psi|^2 = {self.norm() ** 2!r}")

    @classmethod
    def fock(cls, space: HilbertSpace, n: int = 0, qubit: str = "down") -> "QuantumState":
        amp = np.zeros(space.dimension, complex)
        amp[HilbertSpace.index(n, {"down": 0, "up": 1}[qubit])] = 1.0
        return cls(space, amp)

    @classmethod
    def ground_noninteracting(cls, space: HilbertSpace) -> "QuantumState":
        return cls.fock(space, 0, "down")

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalize(self) -> "QuantumState":
        return QuantumState(self.space, self.amplitudes / self.norm(), self.norm_tolerance)

    def amplitude_matrix(self) -> np.ndarray:
        """Amplitudes reshaped to (n, s)."""
        return self.amplitudes.reshape(self.space.fock_cutoff + 1, 2)

    def tail_mass(self, fraction: float = 0.9) -> float:
        """Probability in Fock levels n > fraction * N_max."""
        n = self.space.phonon_numbers
        p = np.abs(self.amplitudes) ** 2
        return float(p[n > fraction * self.space.fock_cutoff].sum() / p.sum())

    def cutoff_health(self, threshold: float = 1e-8, fraction: float = 0.9):
        tail = self.tail_mass(fraction)
        return tail, tail <= threshold


def tail_mass(amplitudes, space: HilbertSpace, fraction: float = 0.9) -> float:
    p = np.abs(np.asarray(amplitudes)) ** 2
    n = space.phonon_numbers
    sel = n > fraction * space.fock_cutoff
    if p.ndim == 1:
        return float(p[sel].sum() / p.sum())
    return p[..., sel].sum(-1) / p.sum(-1)


class Operators(NamedTuple):
    a: sp.csr_matrix
    adag: sp.csr_matrix
    n: sp.csr_matrix
    jz: sp.csr_matrix
    jp: sp.csr_matrix
    jm: sp.csr_matrix
    identity: sp.csr_matrix


@lru_cache(maxsize=32)
def operators(space: HilbertSpace) -> Operators:
    nf = space.fock_cutoff + 1
    a_f = sp.diags(np.sqrt(np.arange(1, nf, dtype=float)), 1, shape=(nf, nf))
    eye_f = sp.identity(nf)
    eye_q = sp.identity(2)
    jp_q = sp.csr_matrix(np.array([[0.0, 0.0], [1.0, 0.0]]))
    a = sp.kron(a_f, eye_q, format="csr")
    jp = sp.kron(eye_f, jp_q, format="csr")
    ops = Operators(
        a=a,
        adag=a.T.tocsr(),
        n=sp.diags(space.phonon_numbers.astype(float), format="csr"),
        jz=sp.diags(space.jz_values, format="csr"),
        jp=jp,
        jm=jp.T.tocsr(),
        identity=sp.identity(space.dimension, format="csr"),
    )
    for m in ops:
        m.data.setflags(write=False)
    return ops


def hamiltonian_parts(space: HilbertSpace, system_size: float, regime: float):
    """Return ``(h0, v)`` with ``h = h0 + lambda * v``."""
    if not system_size > 0:
        raise ParameterError("system size must be positive")
    if not -1.0 <= regime <= 1.0:
        raise ParameterError("regime delta must lie in [-1, 1]")
    o = operators(space)
    h0 = (o.jz + o.n / system_size).tocsr()
    jc = o.jp @ o.a + o.jm @ o.adag
    ajc = o.jp @ o.adag + o.jm @ o.a
    v = ((1 + regime) / 2 * jc + (1 - regime) / 2 * ajc) / math.sqrt(system_size)
    return h0, v.tocsr()


def build_hamiltonian(params: ModelParams, space: HilbertSpace) -> sp.csr_matrix:
    """Sparse matrix of the dimensionless ERM Hamiltonian."""
    if space.fock_cutoff < 1:
        raise ParameterError("fock cutoff must be at least 1")
    h0, v = hamiltonian_parts(space, params.system_size, params.regime)
    return (h0 + params.coupling * v).tocsr()


def build_parity(space: HilbertSpace) -> sp.csr_matrix:
    return sp.diags(space.parity_values.astype(float), format="csr")


def block_tridiagonal(params: ModelParams, space: HilbertSpace, parity: int):
    """Diagonal and off-diagonal of h restricted to one parity sector.

    Within a sector ordered by phonon number the Hamiltonian is tridiagonal.
    """
    n = np.arange(space.fock_cutoff + 1)
    s = n % 2 if parity > 0 else (n + 1) % 2
    diag = (s - 0.5) + n / params.system_size
    # down,k -> up,k+1 is the counter-rotating term; up,k -> down,k+1 the rotating one
    weight = np.where(s[:-1] == 0, (1 - params.regime) / 2, (1 + params.regime) / 2)
    off = params.coupling / math.sqrt(params.system_size) * weight * np.sqrt(n[:-1] + 1.0)
    return diag, off


# --------------------------------------------------------------------------
# spectra
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Spectrum:
    params: Optional[ModelParams]
    space: HilbertSpace
    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray]
    parities: np.ndarray
    ambiguous: Optional[np.ndarray] = None

    def __post_init__(self):
        for arr in (self.eigenvalues, self.eigenvectors, self.parities, self.ambiguous):
            if arr is not None:
                arr.setflags(write=False)

    def __len__(self):
        return len(self.eigenvalues)

    @property
    def is_complete(self) -> bool:
        return len(self.eigenvalues) == self.space.dimension

    def expectation_diagonal(self, values) -> np.ndarray:
        if self.eigenvectors is None:
            raise ValueError("spectrum was computed without eigenvectors")
        return np.einsum("ij,i->j", np.abs(self.eigenvectors) ** 2, np.asarray(values, float))

    @property
    def n_mean(self) -> np.ndarray:
        return self.expectation_diagonal(self.space.phonon_numbers)

    @property
    def jz_mean(self) -> np.ndarray:
        return self.expectation_diagonal(self.space.jz_values)

    def state(self, i: int) -> QuantumState:
        return QuantumState(self.space, self.eigenvectors[:, i].copy(), norm_tolerance=1e-8)

    def rows(self):
        lam = None if self.params is None else self.params.coupling
        for i, (e, p) in enumerate(zip(self.eigenvalues, self.parities)):
            yield {"lambda": lam, "index": i, "energy": float(e), "parity": int(p)}

    def as_dict(self) -> dict:
        p = self.params
        return {
            "params": None if p is None else {"system_size": p.system_size, "coupling": p.coupling,
                                              "regime": p.regime},
            "fock_cutoff": self.space.fock_cutoff,
            "eigenvalues": [float(e) for e in self.eigenvalues],
            "parities": [int(x) for x in self.parities],
        }


def _assign_parities(values, vectors, pdiag, degeneracy_tol, parity_tol):
    """Parity labels, rotating numerically degenerate pairs onto parity eigenstates."""
    vectors = vectors.copy()
    m = len(values)
    span = float(values[-1] - values[0]) if m > 1 else 1.0
    gap_tol = degeneracy_tol * max(span, 1.0)
    start = 0
    while start < m:
        stop = start + 1
        while stop < m and values[stop] - values[stop - 1] < gap_tol:
            stop += 1
        if stop - start > 1:
            blk = vectors[:, start:stop]
            pr = blk.conj().T @ (pdiag[:, None] * blk)
            _, rot = np.linalg.eigh(pr)
            vectors[:, start:stop] = blk @ rot
        start = stop
    pexp = np.einsum("ij,i,ij->j", vectors.conj(), pdiag, vectors).real
    parities = np.where(pexp >= 0, 1, -1).astype(np.int8)
    ambiguous = np.abs(pexp) < 1.0 - parity_tol
    return vectors, parities, ambiguous


def diagonalize(hamiltonian, k: Optional[int] = None, *, params: Optional[ModelParams] = None,
                space: Optional[HilbertSpace] = None, residual_tol: float = 1e-9,
                parity_tol: float = 1e-8, degeneracy_tol: float = 1e-10) -> Spectrum:
    """Dense eigendecomposition of a Hermitian operator on the qubit x Fock space.

    Returns the full spectrum or the lowest ``k`` levels, ascending, with
    parity labels taken from the expectation of the parity operator.
    """
    h = hamiltonian.toarray() if sp.issparse(hamiltonian) else np.asarray(hamiltonian)
    dim = h.shape[0]
    if h.shape != (dim, dim):
        raise DimensionError("Hamiltonian must be square")
    if space is None:
        if dim % 2:
            raise DimensionError("dimension must be 2*(N_max+1)")
        space = HilbertSpace(dim // 2 - 1)
    elif space.dimension != dim:
        raise DimensionError(f"Hamiltonian dimension {dim} does not match space {space.dimension}")
    hnorm = float(np.abs(h).max()) or 1.0
    if np.abs(h - h.conj().T).max() > 1e-12 * hnorm:
        raise ParameterError("operator is not Hermitian")
    subset = None if k is None else (0, min(int(k), dim) - 1)
    try:
        values, vectors = sla.eigh(h, subset_by_index=subset)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    resid = np.linalg.norm(h @ vectors - vectors * values, axis=0)
    if resid.size and resid.max() > residual_tol * hnorm * math.sqrt(dim):
        raise NumericError("eigenpair residual too large",
                           {"max_residual": float(resid.max()), "norm": hnorm})
    vectors, parities, ambiguous = _assign_parities(values, vectors, space.parity_values.astype(float),
                                                    degeneracy_tol, parity_tol)
    return Spectrum(params, space, values, vectors, parities, ambiguous)


def solve_spectrum(params: ModelParams, space: Optional[HilbertSpace] = None, k: Optional[int] = None,
                   *, energy_window=None, eigenvectors: bool = True) -> Spectrum:
    """Spectrum from the two tridiagonal parity sectors.

    Exact parity labels come for free.  ``energy_window=(lo, hi)`` selects
    eigenvalues in the half-open interval (lo, hi]; ``k`` keeps the lowest k.
    """
    if space is None:
        space = HilbertSpace(default_cutoff(params.system_size, params.coupling))
    if space.fock_cutoff < 1:
        raise ParameterError("fock cutoff must be at least 1")
    vals, vecs, pars = [], [], []
    for parity in (1, -1):
        diag, off = block_tridiagonal(params, space, parity)
        kwargs = {}
        if energy_window is not None:
            kwargs = dict(select="v", select_range=tuple(energy_window))
        elif k is not None:
            kwargs = dict(select="i", select_range=(0, min(int(k), len(diag)) - 1))
        try:
            if eigenvectors:
                w, v = sla.eigh_tridiagonal(diag, off, **kwargs)
            else:
                w = sla.eigh_tridiagonal(diag, off, eigvals_only=True, **kwargs)
                v = None
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericError(f"tridiagonal eigensolver failed: {exc}") from exc
        vals.append(w)
        pars.append(np.full(len(w), parity, dtype=np.int8))
        if eigenvectors:
            full = np.zeros((space.dimension, len(w)))
            full[space.parity_block(parity)] = v
            vecs.append(full)
    values = np.concatenate(vals)
    order = np.argsort(values, kind="stable")
    if k is not None and energy_window is None:
        order = order[:k]
    vectors = np.concatenate(vecs, axis=1)[:, order] if eigenvectors else None
    return Spectrum(params, space, values[order], vectors, np.concatenate(pars)[order],
                    np.zeros(len(order), bool))


@dataclass(frozen=True)
class LevelDynamics:
    system_size: float
    regime: float
    couplings: np.ndarray
    energies: np.ndarray      # (len(couplings), k)
    parities: np.ndarray

    def rows(self):
        for lam, es, ps in zip(self.couplings, self.energies, self.parities):
            for i, (e, p) in enumerate(zip(es, ps)):
                yield {"lambda": float(lam), "index": i, "energy": float(e), "parity": int(p)}


def level_dynamics(system_size: float, regime: float, couplings: Sequence[float], k: int,
                   fock_cutoff: Optional[int] = None, workers: int = 1) -> LevelDynamics:
    """Lowest ``k`` levels with parities at every grid coupling (pointwise, no tracking)."""
    lams = np.asarray(couplings, float)
    if lams.ndim != 1 or lams.size == 0:
        raise ParameterError("coupling grid must be a non-empty 1-d sequence")
    if np.any(np.diff(lams) < 0):
        raise ParameterError("coupling grid must be ascending")
    if fock_cutoff is None:
        fock_cutoff = default_cutoff(system_size, float(lams.max()))
    space = HilbertSpace(fock_cutoff)

    def one(lam):
        spec = solve_spectrum(ModelParams(system_size, lam, regime), space, k, eigenvectors=False)
        return spec.eigenvalues, spec.parities

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, lams))
    else:
        results = [one(lam) for lam in lams]
    return LevelDynamics(system_size, regime, lams,
                         np.array([r[0] for r in results]), np.array([r[1] for r in results]))
