"""Unitary evolution under linear interaction ramps."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .core import HilbertSpace, ModelParams, QuantumState, block_tridiagonal, default_cutoff
from .errors import CutoffError, ParameterError, ProjectionError, StiffnessError


@dataclass(frozen=True)
class RampProtocol:
    """Linear ramp lambda(tau) = lambda_f * tau / tau_f; tau_f = 0 is a sudden quench."""

    system_size: float
    regime: float
    lambda_f: float
    tau_f: float

    def __post_init__(self):
        ModelParams(self.system_size, self.lambda_f, self.regime)
        if not (self.tau_f >= 0 and math.isfinite(self.tau_f)):
            raise ParameterError(f"ramp duration must be non-negative, got {self.tau_f}")

    def coupling(self, tau):
        if self.tau_f == 0:
            return np.full_like(np.asarray(tau, float), self.lambda_f)
        return self.lambda_f * np.clip(np.asarray(tau, float) / self.tau_f, 0.0, 1.0)

    def params_at(self, tau: float) -> ModelParams:
        return ModelParams(self.system_size, float(self.coupling(tau)), self.regime)

    def default_cutoff(self) -> int:
        return default_cutoff(self.system_size, self.lambda_f)


def _block_generators(space: HilbertSpace, system_size: float, regime: float):
    """Diagonals and unit-coupling off-diagonals of both parity sectors."""
    d, e = [], []
    for parity in (1, -1):
        dd, ee = block_tridiagonal(ModelParams(system_size, 1.0, regime), space, parity)
        d.append(dd)
        e.append(ee)
    return np.array(d), np.array(e)


def _split(amplitudes, space):
    return np.stack([amplitudes[space.parity_block(1)], amplitudes[space.parity_block(-1)]])


def _merge(blocks, space):
    out = np.empty(blocks.shape[:-2] + (space.dimension,), complex)
    out[..., space.parity_block(1)] = blocks[..., 0, :]
    out[..., space.parity_block(-1)] = blocks[..., 1, :]
    return out


@dataclass
class Trajectory:
    protocol: RampProtocol
    space: HilbertSpace
    taus: np.ndarray
    states: np.ndarray            # (samples, dimension)
    norm_drift: float
    tail_mass: float
    nfev: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def final(self) -> QuantumState:
        return QuantumState(self.space, self.states[-1], norm_tolerance=1e-6)


def _tail(states, space, fraction=0.9):
    p = np.abs(states) ** 2
    sel = space.phonon_numbers > fraction * space.fock_cutoff
    return float((p[:, sel].sum(1) / p.sum(1)).max())


def propagate_schrodinger(protocol: RampProtocol, psi0=None, space: Optional[HilbertSpace] = None,
                          *, rtol: float = 1e-10, atol: float = 1e-12, samples: int = 401,
                          tail_threshold: Optional[float] = 1e-6, method: str = "DOP853") -> Trajectory:
    """Integrate i d psi/d tau = h(lambda(tau)) psi over the ramp.

    The generator conserves parity, so the two parity sectors are evolved as
    tridiagonal systems side by side.  Norm is not renormalized; the drift is
    reported as the unitarity certificate.
    """
    if space is None:
        space = psi0.space if isinstance(psi0, QuantumState) else HilbertSpace(protocol.default_cutoff())
    if psi0 is None:
        psi0 = QuantumState.fock(space, 0, "down")
    amp0 = psi0.amplitudes if isinstance(psi0, QuantumState) else np.asarray(psi0, complex)
    if amp0.shape != (space.dimension,):
        raise ParameterError("initial state does not match the Hilbert space")
    if abs(np.vdot(amp0, amp0).real - 1.0) > 1e-10:
        raise ParameterError("initial state must be normalized")
    if protocol.tau_f == 0:
        states = amp0[None, :].copy()
        return Trajectory(protocol, space, np.zeros(1), states, 0.0, _tail(states, space))

    d, e = _block_generators(space, protocol.system_size, protocol.regime)
    active = [k for k in range(2) if np.any(_split(amp0, space)[k])]
    d, e = d[active], e[active]
    rate = protocol.lambda_f / protocol.tau_f
    shape = (len(active), space.fock_cutoff + 1)

    def rhs(tau, y):
        y = y.reshape(shape)
        out = d * y
        ey = (rate * tau) * e
        out[:, :-1] += ey * y[:, 1:]
        out[:, 1:] += ey * y[:, :-1]
        return (-1j * out).ravel()

    taus = np.linspace(0.0, protocol.tau_f, max(int(samples), 2))
    y0 = _split(amp0, space)[active].ravel()
    sol = solve_ivp(rhs, (0.0, protocol.tau_f), y0, method=method, t_eval=taus, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise StiffnessError(f"integrator failed: {sol.message}",
                             {"tau_reached": float(sol.t[-1]) if sol.t.size else 0.0,
                              "nfev": int(sol.nfev)})
    blocks = np.zeros((taus.size, 2, space.fock_cutoff + 1), complex)
    blocks[:, active, :] = sol.y.T.reshape((taus.size,) + shape)
    states = _merge(blocks, space)
    drift = float(np.abs(np.linalg.norm(states, axis=1) - 1.0).max())
    tail = _tail(states, space)
    if tail_threshold is not None and tail > tail_threshold:
        raise CutoffError(f"tail mass {tail:.3g} exceeds {tail_threshold:.3g}; raise the Fock cutoff",
                          {"tail_mass": tail, "fock_cutoff": space.fock_cutoff})
    return Trajectory(protocol, space, taus, states, drift, tail, int(sol.nfev))


def ramp_cutoff(protocol: RampProtocol, *, mass: float = 1e-10, margin: float = 1.2,
                minimum: int = 8) -> int:
    """Fock cutoff sized to the ramp's own final state.

    Propagates once at the ground-state heuristic cutoff and returns
    ``margin`` times the smallest n above which less than ``mass`` of the
    final population lies.  Open-system runs, which spread the Fock
    distribution somewhat further, still verify the result by a tail check.
    """
    if not 0 < mass < 1 or margin < 1:
        raise ParameterError("need 0 < mass < 1 and margin >= 1")
    traj = propagate_schrodinger(protocol, samples=2, tail_threshold=None)
    pops = (np.abs(traj.states[-1]) ** 2).reshape(-1, 2).sum(1)
    tail = np.cumsum(pops[::-1])[::-1]
    below = np.flatnonzero(tail < mass)
    n = int(below[0]) if below.size else pops.size
    return max(minimum, int(math.ceil(margin * n)))


@dataclass(frozen=True)
class WitnessSeries:
    tau: np.ndarray
    coupling: np.ndarray
    h_mean: np.ndarray
    n_mean: np.ndarray
    jz_mean: np.ndarray
    p0: np.ndarray

    def rows(self):
        for i in range(self.tau.size):
            yield {"tau": float(self.tau[i]), "lambda": float(self.coupling[i]),
                   "h_mean": float(self.h_mean[i]), "n_mean": float(self.n_mean[i]),
                   "jz_mean": float(self.jz_mean[i]), "p0": float(self.p0[i])}


def state_expectations(states, space: HilbertSpace, coupling, system_size: float, regime: float):
    """<h(lambda)>, <n>, <Jz>, P0 for a stack of states (rows)."""
    states = np.atleast_2d(states)
    prob = np.abs(states) ** 2
    norm = prob.sum(1)
    n_mean = prob @ space.phonon_numbers / norm
    jz_mean = prob @ space.jz_values / norm
    h0 = prob @ (space.jz_values + space.phonon_numbers / system_size) / norm
    m = states.reshape(states.shape[0], -1, 2)
    n = np.arange(m.shape[1])
    # <psi|V|psi> with V the unit-coupling interaction: pairs (down,n)<->(up,n+1) and (up,n)<->(down,n+1)
    root = np.sqrt(n[:-1] + 1.0)
    cr = np.sum(root * m[:, :-1, 0].conj() * m[:, 1:, 1], 1)     # (down,n)^* (up,n+1)
    rw = np.sum(root * m[:, :-1, 1].conj() * m[:, 1:, 0], 1)     # (up,n)^* (down,n+1)
    v = 2.0 * ((1 - regime) / 2 * cr.real + (1 + regime) / 2 * rw.real) / math.sqrt(system_size) / norm
    h_mean = h0 + np.asarray(coupling) * v
    p0 = prob[:, 0] / norm
    return h_mean, n_mean, jz_mean, p0


def witness_series(traj: Trajectory) -> WitnessSeries:
    if traj.taus.size == 0:
        raise ParameterError("empty trajectory")
    pr = traj.protocol
    lam = pr.coupling(traj.taus)
    if pr.tau_f == 0:
        lam = np.zeros(1)      # the sampled state precedes the quench
    h, n, jz, p0 = state_expectations(traj.states, traj.space, lam, pr.system_size, pr.regime)
    return WitnessSeries(traj.taus, lam, h, n, jz, p0)


@dataclass(frozen=True)
class DownProjection:
    motional: np.ndarray
    p_down: float

    @property
    def p0_tilde(self) -> float:
        return float(abs(self.motional[0]) ** 2)


def down_project(psi, *, min_probability: float = 1e-12) -> DownProjection:
    """Normalized qubit-down motional component and the qubit-down probability."""
    amp = psi.amplitudes if isinstance(psi, QuantumState) else np.asarray(psi, complex)
    down = amp[0::2]
    p_down = float(np.vdot(down, down).real / np.vdot(amp, amp).real)
    if p_down < min_probability:
        raise ProjectionError(f"qubit-down probability {p_down:.3g} too small to project",
                              {"p_down": p_down})
    return DownProjection(down / np.linalg.norm(down), p_down)


@dataclass(frozen=True)
class RampOutcome:
    """End-of-ramp summary (pre-projection <n>, <Jz>, P0 and projected P0~)."""

    p0: float
    p0_tilde: float
    p_down: float
    n_mean: float
    jz_mean: float
    h_mean: float
    norm_drift: float
    tail_mass: float

    def as_dict(self):
        return dict(self.__dict__)


def ramp_outcome(traj: Trajectory) -> RampOutcome:
    pr = traj.protocol
    h, n, jz, p0 = state_expectations(traj.states[-1], traj.space, pr.lambda_f, pr.system_size, pr.regime)
    proj = down_project(traj.states[-1])
    return RampOutcome(float(p0[0]), proj.p0_tilde, proj.p_down, float(n[0]), float(jz[0]),
                       float(h[0]), traj.norm_drift, traj.tail_mass)


@dataclass(frozen=True)
class ScanCurve:
    axis: str
    values: np.ndarray
    p0_tilde: np.ndarray
    p_down: np.ndarray
    n_mean: np.ndarray
    jz_mean: np.ndarray
    p0: np.ndarray
    metadata: dict

    def rows(self):
        for i in range(self.values.size):
            yield {"axis_value": float(self.values[i]), "p0_tilde": float(self.p0_tilde[i]),
                   "pdown": float(self.p_down[i]), "n_mean": float(self.n_mean[i]),
                   "jz_mean": float(self.jz_mean[i]), "p0": float(self.p0[i])}


_AXES = {"tau_f": "tau_f", "delta": "regime", "Delta": "system_size"}


def ramp_scan(axis: str, grid, *, system_size: float = 15.4, lambda_f: float = 4.0,
              regime: float = 0.5, tau_f: float = 10 * math.pi, fock_cutoff: Optional[int] = None,
              workers: int = 1, rtol: float = 1e-10, atol: float = 1e-12,
              tail_threshold: float = 1e-6) -> ScanCurve:
    """Down-projected vacuum population P0~ along one protocol axis.

    ``axis`` is one of ``"tau_f"``, ``"delta"`` or ``"Delta"``.  Every grid
    point is an independent propagation.
    """
    if axis not in _AXES:
        raise ParameterError(f"scan axis must be one of {sorted(_AXES)}, got {axis!r}")
    values = np.asarray(grid, float)
    if values.ndim != 1 or values.size == 0:
        raise ParameterError("scan grid must be a non-empty 1-d sequence")
    base = dict(system_size=system_size, regime=regime, lambda_f=lambda_f, tau_f=tau_f)

    def one(v):
        kw = dict(base)
        kw[_AXES[axis]] = float(v)
        pr = RampProtocol(**kw)
        space = HilbertSpace(fock_cutoff if fock_cutoff is not None else pr.default_cutoff())
        traj = propagate_schrodinger(pr, space=space, rtol=rtol, atol=atol, samples=2,
                                     tail_threshold=tail_threshold)
        return ramp_outcome(traj)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            res = list(pool.map(one, values))
    else:
        res = [one(v) for v in values]
    meta = dict(base, axis=axis, fock_cutoff=fock_cutoff, rtol=rtol, atol=atol)
    meta.pop(_AXES[axis])
    return ScanCurve(axis, values,
                     np.array([r.p0_tilde for r in res]), np.array([r.p_down for r in res]),
                     np.array([r.n_mean for r in res]), np.array([r.jz_mean for r in res]),
                     np.array([r.p0 for r in res]), meta)
