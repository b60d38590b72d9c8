"""Dense density-matrix integration of the Lindblad equation (small cutoffs only)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from ..core import hamiltonian_parts
from ..dynamics import RampProtocol
from ..errors import OracleScopeError, ParameterError, StiffnessError
from .noise import NoiseModel

DEFAULT_ORACLE_DIMENSION = 2 * (16 + 1)


@dataclass
class DensityTrajectory:
    taus: np.ndarray
    rhos: np.ndarray          # (samples, dim, dim)
    trace_drift: float
    min_eigenvalue: float

    @property
    def final(self) -> np.ndarray:
        return self.rhos[-1]

    def expectation(self, op) -> np.ndarray:
        op = op.toarray() if hasattr(op, "toarray") else np.asarray(op)
        if op.ndim == 1:
            return np.einsum("tii,i->t", self.rhos, op).real
        return np.einsum("tij,ji->t", self.rhos, op).real


def _hamiltonian(protocol, space):
    if isinstance(protocol, RampProtocol):
        h0, v = hamiltonian_parts(space, protocol.system_size, protocol.regime)
        return h0.toarray(), v.toarray(), protocol.coupling
    raise ParameterError("dense Lindblad oracle supports ramp protocols only")


def lindblad_dense_evolve(rho0, protocol: RampProtocol, noise: NoiseModel, *, samples: int = 101,
                          rtol: float = 1e-10, atol: float = 1e-12,
                          max_dimension: int = DEFAULT_ORACLE_DIMENSION) -> DensityTrajectory:
    """Integrate d rho/d tau = -i[h, rho] + sum_j (l rho l^dag - {l^dag l, rho}/2).

    ``rho0`` may be a state vector or a density matrix.  Raises
    :class:`OracleScopeError` above ``max_dimension``.
    """
    space = noise.space
    dim = space.dimension
    if dim > max_dimension:
        raise OracleScopeError(f"dimension {dim} exceeds the dense oracle bound {max_dimension}")
    r0 = np.asarray(rho0, complex)
    if r0.ndim == 1:
        r0 = np.outer(r0, r0.conj())
    if r0.shape != (dim, dim):
        raise ParameterError("initial state does not match the Hilbert space")
    if abs(np.trace(r0).real - 1.0) > 1e-10:
        raise ParameterError("initial density matrix must have unit trace")
    if np.linalg.eigvalsh(0.5 * (r0 + r0.conj().T)).min() < -1e-10:
        raise ParameterError("initial density matrix must be positive")
    h0, v, coupling = _hamiltonian(protocol, space)
    ls = [c.operator.toarray() for c in noise.channels]
    kmat = sum((l.conj().T @ l for l in ls), np.zeros((dim, dim), complex))

    def rhs(tau, y):
        rho = y.reshape(dim, dim)
        heff = h0 + float(coupling(tau)) * v - 0.5j * kmat
        out = -1j * (heff @ rho) + 1j * (rho @ heff.conj().T)
        for l in ls:
            out += l @ rho @ l.conj().T
        return out.ravel()

    tf = protocol.tau_f
    if tf == 0:
        rhos = r0[None].copy()
        taus = np.zeros(1)
    else:
        taus = np.linspace(0.0, tf, max(int(samples), 2))
        sol = solve_ivp(rhs, (0.0, tf), r0.ravel(), method="DOP853", t_eval=taus, rtol=rtol, atol=atol)
        if sol.status != 0:
            raise StiffnessError(f"density-matrix integration failed: {sol.message}")
        rhos = sol.y.T.reshape(-1, dim, dim)
    traces = np.einsum("tii->t", rhos).real
    herm = 0.5 * (rhos + rhos.conj().transpose(0, 2, 1))
    min_eig = float(min(np.linalg.eigvalsh(r).min() for r in herm))
    return DensityTrajectory(taus, rhos, float(np.abs(traces - 1.0).max()), min_eig)
