"""Dissipator specifications and dimensionless jump operators."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.constants import hbar

from ..core import HilbertSpace, operators
from ..errors import ParameterError


@dataclass(frozen=True)
class DissipatorSpec:
    """Lindblad rates in 1/s.

    Only the product gamma*n_th (``heating_rate``) is usually known; the
    damping rate gamma*(n_th + 1) then defaults to the same value (n_th >> 1).
    """

    motional_dephasing: float = 0.0     # Gamma_m
    qubit_dephasing: float = 0.0        # Gamma_q
    heating_rate: float = 0.0           # gamma * n_th
    damping_rate: Optional[float] = None  # gamma * (n_th + 1)

    def __post_init__(self):
        for name in ("motional_dephasing", "qubit_dephasing", "heating_rate"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ParameterError(f"{name} must be a non-negative finite rate, got {v}")
        if self.damping_rate is not None and not self.damping_rate >= 0:
            raise ParameterError(f"damping_rate must be non-negative, got {self.damping_rate}")

    @classmethod
    def from_bath(cls, motional_dephasing=0.0, qubit_dephasing=0.0, gamma=0.0, n_th=0.0):
        if gamma < 0 or n_th < 0:
            raise ParameterError("gamma and n_th must be non-negative")
        return cls(motional_dephasing, qubit_dephasing, gamma * n_th, gamma * (n_th + 1.0))

    @classmethod
    def reference(cls):
        """Rates of the reference experiment: 1/Gamma_m = 100 ms, 1/Gamma_q = 10 ms, gamma n_th = 3.3/s."""
        return cls(motional_dephasing=10.0, qubit_dephasing=100.0, heating_rate=3.3)

    @property
    def effective_damping(self) -> float:
        return self.heating_rate if self.damping_rate is None else self.damping_rate

    @property
    def is_zero(self) -> bool:
        return (self.motional_dephasing == 0 and self.qubit_dephasing == 0
                and self.heating_rate == 0 and self.effective_damping == 0)

    def as_dict(self):
        return {"motional_dephasing": self.motional_dephasing,
                "qubit_dephasing": self.qubit_dephasing,
                "heating_rate": self.heating_rate,
                "damping_rate": self.effective_damping}


# channel kinds understood by the trajectory engine
DEPHASE_MOTION, HEAT, DAMP, DEPHASE_QUBIT = "motional_dephasing", "heating", "damping", "qubit_dephasing"


@dataclass(frozen=True)
class Channel:
    name: str
    rate: float             # dimensionless prefactor squared: l = sqrt(rate) * op
    operator: sp.csr_matrix  # full-space matrix of l


@dataclass(frozen=True)
class NoiseModel:
    space: HilbertSpace
    channels: tuple
    time_scale: float       # rates were divided by this (1/s per engine time unit)

    @property
    def jump_operators(self):
        return [c.operator for c in self.channels]

    def decay_operator(self) -> sp.csr_matrix:
        """K = sum_j l_j^dag l_j."""
        k = sp.csr_matrix((self.space.dimension, self.space.dimension))
        for c in self.channels:
            k = k + (c.operator.conj().T @ c.operator)
        return k.tocsr()

    def decay_diagonal(self) -> np.ndarray:
        k = self.decay_operator()
        off = k - sp.diags(k.diagonal())
        if off.nnz and np.abs(off.data).max() > 0:
            raise ParameterError("decay operator is not diagonal in the Fock basis")
        return k.diagonal().real

    def effective_hamiltonian(self, h):
        """h - (i/2) sum_j l_j^dag l_j."""
        return (h - 0.5j * self.decay_operator()).tocsr() if sp.issparse(h) else \
            np.asarray(h) - 0.5j * self.decay_operator().toarray()


def scaled_dissipators(spec: DissipatorSpec, space: HilbertSpace, time_scale: float) -> NoiseModel:
    """Dimensionless jump operators l_j = time_scale^{-1/2} L_j.

    ``time_scale`` is the rate (1/s) corresponding to one unit of engine time;
    for the ERM frame it is eps*sqrt(Delta)/hbar.  Zero-rate channels are
    dropped.  Qubit relaxation is not modeled.
    """
    if not time_scale > 0:
        raise ParameterError("time scale must be positive")
    o = operators(space)
    p_up = sp.diags((space.qubit_states == 1).astype(float), format="csr")
    table = [
        (DEPHASE_MOTION, 2.0 * spec.motional_dephasing, o.n),
        (HEAT, spec.heating_rate, o.adag),
        (DAMP, spec.effective_damping, o.a),
        (DEPHASE_QUBIT, 2.0 * spec.qubit_dephasing, p_up),
    ]
    chans = []
    for name, rate, op in table:
        if rate > 0:
            r = rate / time_scale
            chans.append(Channel(name, r, (math.sqrt(r) * op).tocsr()))
    return NoiseModel(space, tuple(chans), float(time_scale))


def build_dissipators(spec: DissipatorSpec, energy_scale: float, system_size: float,
                      space: HilbertSpace) -> NoiseModel:
    """Jump operators in units of the ERM time tau (rescaled by (eps sqrt(Delta)/hbar)^{-1/2})."""
    if not energy_scale > 0 or not system_size > 0:
        raise ParameterError("energy scale and system size must be positive")
    return scaled_dissipators(spec, space, energy_scale * math.sqrt(system_size) / hbar)
