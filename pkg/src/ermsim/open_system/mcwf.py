"""Monte-Carlo wave-function unraveling of the Lindblad equation.

Each time step is split symmetrically, D(dt/2) U(dt) D(dt/2):

* ``U`` is the unitary step of the (time-dependent) Hamiltonian from a
  fourth-order commutator-free Magnus scheme, built per parity sector
  from tridiagonal eigendecompositions and shared by every trajectory.
* ``D(s)`` is the exact non-Hermitian decay exp(-K s / 2) with
  K = sum_j l_j^dag l_j diagonal in the Fock basis.  The squared norm
  S(s) = sum_n |phi_n|^2 exp(-K_n s) is monotone, so the time where it
  reaches the trajectory's threshold xi is found by Newton iteration from
  the left (which cannot overshoot for a convex decreasing S).

Trajectories that have not jumped yet all share one reference vector;
only their thresholds differ.  Random streams are derived per trajectory
from ``SeedSequence(seed, spawn_key=(i,))`` so results do not depend on
batching.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ..core import HilbertSpace, ModelParams, QuantumState, block_tridiagonal
from ..dynamics import RampProtocol, ramp_cutoff
from ..errors import CutoffError, NumericError, ParameterError
from .noise import DissipatorSpec, NoiseModel, build_dissipators

# fourth-order commutator-free Magnus coefficients
_A1 = (3.0 - 2.0 * math.sqrt(3.0)) / 12.0
_A2 = (3.0 + 2.0 * math.sqrt(3.0)) / 12.0
_C1 = 0.5 - math.sqrt(3.0) / 6.0
_C2 = 0.5 + math.sqrt(3.0) / 6.0


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BlueSidebandProtocol:
    """Resonant blue-sideband drive H = (eta Omega_2 / 2)(sigma_+ a^dag + sigma_- a).

    Engine time is t~ = eta*Omega_2*t, so the generator is parameter free.
    """

    duration: float

    def tridiagonal_parts(self, space: HilbertSpace, parity: int):
        _, off = block_tridiagonal(ModelParams(1.0, 0.5, -1.0), space, parity)
        return np.zeros(space.fock_cutoff + 1), off, np.zeros_like(off)

    def coupling(self, t):
        return 0.0

    @property
    def is_constant(self) -> bool:
        return True


def _protocol_parts(protocol, space: HilbertSpace, parity: int):
    if isinstance(protocol, RampProtocol):
        d, e = block_tridiagonal(ModelParams(protocol.system_size, 1.0, protocol.regime), space, parity)
        return d, np.zeros_like(e), e
    return protocol.tridiagonal_parts(space, parity)


def _duration(protocol) -> float:
    return protocol.tau_f if isinstance(protocol, RampProtocol) else protocol.duration


def _coupling_fn(protocol):
    if isinstance(protocol, RampProtocol):
        return lambda t: float(protocol.coupling(t))
    return protocol.coupling


def _is_constant(protocol) -> bool:
    if isinstance(protocol, RampProtocol):
        return protocol.lambda_f == 0
    return bool(protocol.is_constant)


class _SectorLayout:
    """Sectors of equal dimension; each is a union of tridiagonal sub-blocks."""

    def __init__(self, space: HilbertSpace, protocol, mixed: bool):
        self.space = space
        nb = space.fock_cutoff + 1
        blocks = {p: (space.parity_block(p), _protocol_parts(protocol, space, p)) for p in (1, -1)}
        if mixed:
            idx = np.concatenate([blocks[1][0], blocks[-1][0]])
            self.sectors = [idx]
            self.subblocks = [[(slice(0, nb), blocks[1][1]), (slice(nb, 2 * nb), blocks[-1][1])]]
        else:
            self.sectors = [blocks[1][0], blocks[-1][0]]
            self.subblocks = [[(slice(0, nb), blocks[1][1])], [(slice(0, nb), blocks[-1][1])]]
        self.dim = self.sectors[0].size
        pos = np.full(space.dimension, -1)
        sec = np.full(space.dimension, -1)
        for b, idx in enumerate(self.sectors):
            pos[idx] = np.arange(idx.size)
            sec[idx] = b
        self.position, self.sector_of = pos, sec

    def restrict(self, full_vector, b):
        return np.asarray(full_vector)[self.sectors[b]]

    def exponential(self, b, dt, mu):
        """exp(-i dt (H_0/2 + mu V)) on sector b; the CF4 exponent shape."""
        out = np.zeros((self.dim, self.dim), complex)
        for sl, (d, e0, e1) in self.subblocks[b]:
            w, v = sla.eigh_tridiagonal(0.5 * d, 0.5 * e0 + mu * e1)
            out[sl, sl] = (v * np.exp(-1j * dt * w)) @ v.T
        return out

    def exact_exponential(self, b, dt, lam):
        out = np.zeros((self.dim, self.dim), complex)
        for sl, (d, e0, e1) in self.subblocks[b]:
            w, v = sla.eigh_tridiagonal(d, e0 + lam * e1)
            out[sl, sl] = (v * np.exp(-1j * dt * w)) @ v.T
        return out


def _channel_maps(noise: NoiseModel, layout: _SectorLayout):
    """Per channel and source sector: (target sector, sparse map, diag of l^dag l)."""
    maps = []
    for ch in noise.channels:
        op = ch.operator.tocsc()
        per = []
        for b, idx in enumerate(layout.sectors):
            sub = op[:, idx].tocoo()
            targets = set(layout.sector_of[sub.row[sub.data != 0]].tolist())
            if len(targets) > 1:
                raise ParameterError(f"channel {ch.name} does not map sectors onto sectors")
            t = targets.pop() if targets else b
            m = op[layout.sectors[t]][:, idx].tocsr()
            ltl = (m.conj().T @ m).tocsr()
            off = ltl - sp.diags(ltl.diagonal())
            if off.nnz and np.abs(off.data).max() > 0:
                raise ParameterError(f"channel {ch.name}: l^dag l is not diagonal")
            per.append((t, m, ltl.diagonal().real))
        maps.append(per)
    return maps


# --------------------------------------------------------------------------
# observables
# --------------------------------------------------------------------------


def named_observable(name: str, space: HilbertSpace):
    """(numerator, denominator) diagonals of built-in observables; denominator None = norm."""
    down = (space.qubit_states == 0).astype(float)
    vac = np.zeros(space.dimension)
    vac[0] = 1.0
    table = {
        "identity": (np.ones(space.dimension), None),
        "n": (space.phonon_numbers.astype(float), None),
        "jz": (space.jz_values.astype(float), None),
        "p0": (vac, None),
        "p_down": (down, None),
        "p0_tilde": (vac, down),
    }
    if name not in table:
        raise ParameterError(f"unknown observable {name!r}; choose from {sorted(table)}")
    return table[name]


DEFAULT_OBSERVABLES = ("p0", "p0_tilde", "p_down", "n", "jz")


@dataclass
class _Stats:
    count: np.ndarray
    total: np.ndarray
    total_sq: np.ndarray

    @classmethod
    def empty(cls, n_obs, n_samples):
        z = np.zeros((n_obs, n_samples))
        return cls(np.zeros((n_obs, n_samples)), z.copy(), z.copy())


@dataclass
class SeriesSummary:
    """Per-sample ensemble statistics of recorded observables."""

    times: np.ndarray
    names: tuple
    mean: np.ndarray          # (observables, samples)
    std: np.ndarray
    count: np.ndarray

    def mre(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.std / (np.sqrt(self.count) * np.abs(self.mean))

    def column(self, name):
        i = self.names.index(name)
        return self.mean[i], self.std[i], self.mre()[i]


# --------------------------------------------------------------------------
# ensemble
# --------------------------------------------------------------------------


@dataclass
class TrajectoryEnsemble:
    n_traj: int
    seed: int
    space: HilbertSpace
    sectors: list
    ids: list                 # per sector: trajectory indices of jumped trajectories
    states: list              # per sector: unnormalized final states (rows)
    reference: Optional[np.ndarray]
    reference_sector: int
    reference_ids: np.ndarray
    jump_traj: np.ndarray
    jump_time: np.ndarray
    jump_channel: np.ndarray
    channel_names: tuple
    series: SeriesSummary
    incidents: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    @property
    def jump_counts(self) -> np.ndarray:
        return np.bincount(self.jump_traj, minlength=self.n_traj)

    def trajectory_seed(self, i: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.seed, spawn_key=(int(i),))

    def jumps_of(self, i: int):
        sel = self.jump_traj == i
        return self.jump_time[sel], self.jump_channel[sel]

    def _embed(self, rows, b):
        out = np.zeros((rows.shape[0], self.space.dimension), complex)
        out[:, self.sectors[b]] = rows
        return out

    def final_state(self, i: int) -> QuantumState:
        """Normalized final state of trajectory ``i``."""
        for b, ids in enumerate(self.ids):
            hit = np.flatnonzero(ids == i)
            if hit.size:
                row = self._embed(self.states[b][hit], b)[0]
                return QuantumState(self.space, row / np.linalg.norm(row), norm_tolerance=1e-8)
        if np.any(self.reference_ids == i):
            row = self._embed(self.reference[None, :], self.reference_sector)[0]
            return QuantumState(self.space, row / np.linalg.norm(row), norm_tolerance=1e-8)
        raise IndexError(i)

    def groups(self):
        """Yield (weights, full-space rows) covering every trajectory once."""
        for b, rows in enumerate(self.states):
            if rows.shape[0]:
                yield np.ones(rows.shape[0]), self._embed(rows, b)
        if self.reference_ids.size:
            yield np.array([float(self.reference_ids.size)]), \
                self._embed(self.reference[None, :], self.reference_sector)

    def per_trajectory(self, observable) -> np.ndarray:
        """Normalized expectation of ``observable`` for every trajectory, in index order."""
        out = np.empty(self.n_traj)
        num, den, mat = _resolve_observable(observable, self.space)
        for b, rows in enumerate(self.states):
            if rows.shape[0]:
                out[self.ids[b]] = _values(self._embed(rows, b), num, den, mat)
        if self.reference_ids.size:
            out[self.reference_ids] = _values(self._embed(self.reference[None, :], self.reference_sector),
                                              num, den, mat)[0]
        return out

    def jump_statistics(self) -> dict:
        counts = self.jump_counts
        per_channel = {name: int(np.sum(self.jump_channel == c)) for c, name in enumerate(self.channel_names)}
        return {"total": int(counts.sum()), "mean_per_trajectory": float(counts.mean()),
                "max_per_trajectory": int(counts.max()) if counts.size else 0,
                "never_jumped": int(np.sum(counts == 0)), "per_channel": per_channel}

    def tail_mass(self, fraction: float = 0.9) -> float:
        sel = self.space.phonon_numbers > fraction * self.space.fock_cutoff
        return float(np.mean(self.per_trajectory(sel.astype(float))))


def _resolve_observable(observable, space):
    if isinstance(observable, str):
        num, den = named_observable(observable, space)
        return num, den, None
    if isinstance(observable, tuple):
        return np.asarray(observable[0], float), np.asarray(observable[1], float), None
    if sp.issparse(observable) or np.ndim(observable) == 2:
        return None, None, observable
    return np.asarray(observable, float), None, None


def _values(rows, num, den, mat):
    prob = np.abs(rows) ** 2
    norm = prob.sum(1)
    if mat is not None:
        return np.real(np.einsum("ij,ij->i", rows.conj(), (mat @ rows.T).T)) / norm
    top = prob @ num
    bottom = norm if den is None else prob @ den
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(bottom > 0, top / np.where(bottom > 0, bottom, 1.0), 0.0)


@dataclass(frozen=True)
class McwfResult:
    name: str
    mean: float
    mre: float
    std: float
    n: int

    @property
    def standard_error(self) -> float:
        return self.std / math.sqrt(self.n)

    @property
    def mre_prefactor(self) -> float:
        """eta * sqrt(N), the quantity quoted as c/sqrt(N)."""
        return self.mre * math.sqrt(self.n)

    def as_dict(self):
        return {"mean": self.mean, "mre": self.mre, "mre_prefactor": self.mre_prefactor,
                "std": self.std, "standard_error": self.standard_error, "n": self.n}


def mcwf_expectation(ensemble: TrajectoryEnsemble, observable, name: Optional[str] = None) -> McwfResult:
    """Mean of per-trajectory normalized expectations and its MRE sigma/(sqrt(N)|mean|)."""
    vals = ensemble.per_trajectory(observable)
    n = vals.size
    if n == 0:
        raise ParameterError("empty ensemble")
    mean = float(vals.mean())
    std = float(vals.std(ddof=1)) if n > 1 else 0.0
    mre = std / (math.sqrt(n) * abs(mean)) if mean != 0 else math.inf
    return McwfResult(name or (observable if isinstance(observable, str) else "custom"), mean, mre, std, n)


# --------------------------------------------------------------------------
# engine
# --------------------------------------------------------------------------


def _first_passage(w, k, xi, rem, max_iter=100):
    """Smallest t in [0, rem] with sum_n w_n exp(-k_n t) = xi, row-wise.

    Returns (t, converged mask).
    """
    t = np.zeros(w.shape[0])
    conv = np.zeros(w.shape[0], bool)
    for _ in range(max_iter):
        e = np.exp(-k * t[:, None])
        f = (w * e).sum(1) - xi
        fp = (w * k * e).sum(1)
        conv = f <= 1e-14 * xi
        if conv.all():
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(conv | (fp <= 0), 0.0, f / fp)
        t_new = np.minimum(t + step, rem)
        stalled = (t_new - t) <= 1e-15 * np.maximum(t, 1.0)
        t = t_new
        conv = conv | stalled
        if conv.all():
            break
    return t, conv


def _bisect(w, k, xi, lo, hi, iters=200):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        f = (w * np.exp(-k * mid[:, None])).sum(1) - xi
        lo = np.where(f > 0, mid, lo)
        hi = np.where(f > 0, hi, mid)
    return 0.5 * (lo + hi)


class _Engine:
    def __init__(self, psi0, protocol, noise: NoiseModel, n_traj, seed, dt, samples, observables):
        space = noise.space
        amp = psi0.amplitudes if isinstance(psi0, QuantumState) else np.asarray(psi0, complex)
        if amp.shape != (space.dimension,):
            raise ParameterError("initial state does not match the noise model's Hilbert space")
        if abs(np.vdot(amp, amp).real - 1.0) > 1e-10:
            raise ParameterError("initial state must be normalized")
        if n_traj < 1:
            raise ParameterError("need at least one trajectory")
        parity = space.parity_values
        support = np.abs(amp) > 0
        mixed = len(set(parity[support].tolist())) > 1
        self.space, self.protocol, self.noise = space, protocol, noise
        self.layout = _SectorLayout(space, protocol, mixed)
        self.maps = _channel_maps(noise, self.layout)
        nsec = len(self.layout.sectors)
        self.kdiag = np.array([sum(per[b][2] for per in self.maps) if self.maps else
                               np.zeros(self.layout.dim) for b in range(nsec)])
        self.n_traj, self.seed = int(n_traj), int(seed)
        self.rngs = [np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(i,)))
                     for i in range(self.n_traj)]

        # time grid with samples on step boundaries
        t_final = float(_duration(protocol))
        samples = max(int(samples), 2) if t_final > 0 else 1
        if t_final > 0:
            per = max(1, math.ceil(t_final / ((samples - 1) * dt)))
            self.n_steps = per * (samples - 1)
            self.dt = t_final / self.n_steps
            self.sample_steps = set(range(0, self.n_steps + 1, per))
        else:
            self.n_steps, self.dt, self.sample_steps = 0, 0.0, {0}
        self.sample_times = np.array(sorted(self.sample_steps), float) * self.dt
        self.t_final = t_final

        names = tuple(observables)
        self.obs_names = names
        self.obs = []
        for name in names:
            num, den = named_observable(name, space) if isinstance(name, str) else name
            self.obs.append(([self.layout.restrict(num, b) for b in range(nsec)],
                             None if den is None else [self.layout.restrict(den, b) for b in range(nsec)]))
        self.stats = _Stats.empty(len(names), len(self.sample_times))

        ref_sec = int(self.layout.sector_of[np.flatnonzero(support)[0]])
        self.ref_sec = ref_sec
        self.ref = self.layout.restrict(amp, ref_sec).astype(complex)
        self.ref_ids = np.arange(self.n_traj)
        self.ref_xi = np.array([1.0 - r.random() for r in self.rngs])
        self.phi = [np.zeros((0, self.layout.dim), complex) for _ in range(nsec)]
        self.ids = [np.zeros(0, int) for _ in range(nsec)]
        self.xi = [np.zeros(0) for _ in range(nsec)]
        self.log_traj, self.log_time, self.log_chan = [], [], []
        self.incidents = []
        self.constant = _is_constant(protocol)
        self.coupling = _coupling_fn(protocol)
        self._const_u = None

    # unitary part ------------------------------------------------------
    def step_unitaries(self, t0):
        nsec = len(self.layout.sectors)
        if self.constant:
            if self._const_u is None:
                lam = self.coupling(0.0)
                self._const_u = [self.layout.exact_exponential(b, self.dt, lam) for b in range(nsec)]
            return self._const_u
        l1 = self.coupling(t0 + _C1 * self.dt)
        l2 = self.coupling(t0 + _C2 * self.dt)
        out = []
        for b in range(nsec):
            e1 = self.layout.exponential(b, self.dt, _A2 * l1 + _A1 * l2)
            e2 = self.layout.exponential(b, self.dt, _A1 * l1 + _A2 * l2)
            out.append(e2 @ e1)
        return out

    def apply_unitaries(self, us):
        if self.ref_ids.size:
            self.ref = us[self.ref_sec] @ self.ref
        for b, u in enumerate(us):
            if self.phi[b].shape[0]:
                self.phi[b] = self.phi[b] @ u.T

    # dissipative part --------------------------------------------------
    def dissipate(self, s, t0):
        if s <= 0 or not self.maps:
            return
        new_rows, new_sec, new_ids, new_xi, new_rem, new_t = [], [], [], [], [], []
        if self.ref_ids.size:
            k = self.kdiag[self.ref_sec]
            w = np.abs(self.ref) ** 2
            s_end = float(w @ np.exp(-k * s))
            hit = self.ref_xi > s_end
            if hit.any():
                xi = self.ref_xi[hit]
                wb = np.broadcast_to(w, (xi.size, w.size))
                t, conv = _first_passage(wb, k, xi, np.full(xi.size, s))
                self._check(conv, wb, np.broadcast_to(k, wb.shape), xi, t, s)
                rows = self.ref[None, :] * np.exp(-0.5 * k[None, :] * t[:, None])
                new_rows.append(rows)
                new_sec.append(np.full(xi.size, self.ref_sec))
                new_ids.append(self.ref_ids[hit])
                new_xi.append(xi)
                new_rem.append(s - t)
                new_t.append(t0 + t)
                self.ref_ids, self.ref_xi = self.ref_ids[~hit], self.ref_xi[~hit]
            self.ref = self.ref * np.exp(-0.5 * k * s)
        for b in range(len(self.phi)):
            if not self.phi[b].shape[0]:
                continue
            k = self.kdiag[b]
            phi = self.phi[b]
            w = phi.real ** 2 + phi.imag ** 2
            s_end = w @ np.exp(-k * s)
            hit = self.xi[b] > s_end
            if hit.any():
                xi = self.xi[b][hit]
                t, conv = _first_passage(w[hit], k, xi, np.full(xi.size, s))
                self._check(conv, w[hit], np.broadcast_to(k, (xi.size, k.size)), xi, t, s)
                new_rows.append(phi[hit] * np.exp(-0.5 * k[None, :] * t[:, None]))
                new_sec.append(np.full(xi.size, b))
                new_ids.append(self.ids[b][hit])
                new_xi.append(xi)
                new_rem.append(s - t)
                new_t.append(t0 + t)
                keep = ~hit
                self.phi[b], self.ids[b], self.xi[b] = phi[keep], self.ids[b][keep], self.xi[b][keep]
            self.phi[b] = self.phi[b] * np.exp(-0.5 * k * s)
        if new_rows:
            self._jump_cascade(np.concatenate(new_rows), np.concatenate(new_sec), np.concatenate(new_ids),
                               np.concatenate(new_rem), np.concatenate(new_t))

    def _check(self, conv, w, k, xi, t, s):
        if not conv.all():
            bad = ~conv
            t[bad] = _bisect(w[bad], k[bad], xi[bad], np.zeros(bad.sum()), np.full(bad.sum(), s))
            self.incidents.append({"kind": "newton_fallback", "count": int(bad.sum())})

    def _jump_cascade(self, rows, sec, ids, rem, tnow):
        """Apply a jump to every row (all sit exactly at their jump time), then continue."""
        while ids.size:
            rows, sec = self._apply_jumps(rows, sec, ids, tnow)
            xi = np.array([1.0 - self.rngs[i].random() for i in ids])
            k = self.kdiag[sec]
            w = rows.real ** 2 + rows.imag ** 2
            s_end = (w * np.exp(-k * rem[:, None])).sum(1)
            hit = xi > s_end
            done = ~hit
            if done.any():
                fin = rows[done] * np.exp(-0.5 * k[done] * rem[done, None])
                for b in np.unique(sec[done]):
                    m = sec[done] == b
                    self.phi[b] = np.concatenate([self.phi[b], fin[m]])
                    self.ids[b] = np.concatenate([self.ids[b], ids[done][m]])
                    self.xi[b] = np.concatenate([self.xi[b], xi[done][m]])
            if not hit.any():
                return
            rows, sec, ids, rem, tnow, xi = rows[hit], sec[hit], ids[hit], rem[hit], tnow[hit], xi[hit]
            k, w = k[hit], w[hit]
            t, conv = _first_passage(w, k, xi, rem)
            self._check(conv, w, k, xi, t, rem)
            rows = rows * np.exp(-0.5 * k * t[:, None])
            rem = rem - t
            tnow = tnow + t

    def _apply_jumps(self, rows, sec, ids, tnow):
        w = rows.real ** 2 + rows.imag ** 2
        gam = np.stack([(w * np.array([per[b][2] for b in range(len(per))])[sec]).sum(1)
                        for per in self.maps], 1)
        tot = gam.sum(1)
        if np.any(tot <= 1e-300):
            raise NumericError("jump requested but all channel rates vanish",
                               {"trajectories": ids[tot <= 1e-300].tolist()})
        cdf = np.cumsum(gam, 1) / tot[:, None]
        u = np.array([self.rngs[i].random() for i in ids])
        chan = np.minimum((u[:, None] >= cdf).sum(1), len(self.maps) - 1)
        out = np.empty_like(rows)
        new_sec = sec.copy()
        for c, per in enumerate(self.maps):
            for b, (target, m, _) in enumerate(per):
                sel = np.flatnonzero((chan == c) & (sec == b))
                if sel.size:
                    out[sel] = (m @ rows[sel].T).T
                    new_sec[sel] = target
        out /= np.linalg.norm(out, axis=1)[:, None]
        self.log_traj.append(ids.copy())
        self.log_time.append(tnow.copy())
        self.log_chan.append(chan)
        return out, new_sec

    # sampling ----------------------------------------------------------
    def record(self, j):
        for o, (num, den) in enumerate(self.obs):
            for b in range(len(self.phi)):
                if self.phi[b].shape[0]:
                    v = _values(self.phi[b], num[b], None if den is None else den[b], None)
                    self._acc(o, j, v, 1.0)
            if self.ref_ids.size:
                v = _values(self.ref[None, :], num[self.ref_sec],
                            None if den is None else den[self.ref_sec], None)
                self._acc(o, j, v, float(self.ref_ids.size))

    def _acc(self, o, j, v, weight):
        self.stats.count[o, j] += weight * v.size
        self.stats.total[o, j] += weight * v.sum()
        self.stats.total_sq[o, j] += weight * (v * v).sum()

    def run(self):
        j = 0
        if 0 in self.sample_steps:
            self.record(j)
            j += 1
        pending, t_pending = 0.0, 0.0
        for step in range(self.n_steps):
            t0 = step * self.dt
            pending += 0.5 * self.dt
            self.dissipate(pending, t_pending)
            self.apply_unitaries(self.step_unitaries(t0))
            pending, t_pending = 0.5 * self.dt, t0 + 0.5 * self.dt
            if step + 1 in self.sample_steps:
                self.dissipate(pending, t_pending)
                pending, t_pending = 0.0, t0 + self.dt
                self.record(j)
                j += 1
        self.dissipate(pending, t_pending)

    def summary(self) -> SeriesSummary:
        c = np.maximum(self.stats.count, 1)
        mean = self.stats.total / c
        var = np.maximum(self.stats.total_sq / c - mean ** 2, 0.0) * c / np.maximum(c - 1, 1)
        return SeriesSummary(self.sample_times, self.obs_names, mean, np.sqrt(var), self.stats.count)

    def ensemble(self, settings) -> TrajectoryEnsemble:
        cat = (lambda parts, dt: np.concatenate(parts) if parts else np.zeros(0, dt))
        traj = cat(self.log_traj, int)
        time = cat(self.log_time, float)
        chan = cat(self.log_chan, int)
        order = np.lexsort((time, traj))
        return TrajectoryEnsemble(
            n_traj=self.n_traj, seed=self.seed, space=self.space, sectors=self.layout.sectors,
            ids=self.ids, states=self.phi, reference=self.ref, reference_sector=self.ref_sec,
            reference_ids=self.ref_ids, jump_traj=traj[order], jump_time=time[order],
            jump_channel=chan[order], channel_names=tuple(c.name for c in self.noise.channels),
            series=self.summary(), incidents=self.incidents, settings=settings)


def mcwf_evolve(psi0, protocol, noise: NoiseModel, n_traj: int, seed: int, *, dt: float = 0.1,
                samples: int = 2, observables=DEFAULT_OBSERVABLES, chunk_size: Optional[int] = None,
                tail_threshold: Optional[float] = 1e-6, workers: int = 1) -> TrajectoryEnsemble:
    """Evolve ``n_traj`` quantum trajectories from ``psi0`` under ``protocol`` and ``noise``.

    ``protocol`` is a :class:`~ermsim.dynamics.RampProtocol` (engine time tau)
    or a :class:`BlueSidebandProtocol`.  ``samples`` uniformly spaced times,
    including both ends, are aligned with step boundaries; ensemble means and
    standard deviations of ``observables`` are recorded there.  ``chunk_size``
    bounds memory by running consecutive index ranges separately; with
    ``workers > 1`` the ranges run on a thread pool.  Trajectory seeds depend
    only on ``(seed, index)``.
    """
    if seed is None:
        raise ParameterError("a seed is mandatory for trajectory runs")
    if not dt > 0:
        raise ParameterError("time step must be positive")
    settings = {"dt": dt, "samples": samples, "n_traj": int(n_traj), "seed": int(seed)}
    chunk = int(chunk_size or n_traj)
    if workers > 1 and chunk >= n_traj:
        chunk = max(1, math.ceil(n_traj / workers))
    if chunk >= n_traj:
        eng = _Engine(psi0, protocol, noise, n_traj, seed, dt, samples, observables)
        eng.run()
        ens = eng.ensemble(settings)
    else:
        ens = _run_chunks(psi0, protocol, noise, n_traj, seed, dt, samples, observables, chunk, settings,
                          workers)
    if tail_threshold is not None and ens.n_traj:
        tail = ens.tail_mass()
        if tail > tail_threshold:
            raise CutoffError(f"ensemble tail mass {tail:.3g} exceeds {tail_threshold:.3g}",
                              {"tail_mass": tail, "fock_cutoff": noise.space.fock_cutoff})
    return ens


def mcwf_ramp(protocol: RampProtocol, spec: DissipatorSpec, energy_scale: float, n_traj: int, seed: int, *,
              fock_cutoff: Optional[int] = None, growth: float = 1.25, max_cutoff: int = 2000,
              **kwargs) -> TrajectoryEnsemble:
    """Trajectory run of a ramp from |down, 0>, growing the Fock cutoff until the tail check passes.

    The starting cutoff defaults to :func:`~ermsim.dynamics.ramp_cutoff`,
    which is sized on the unitary evolution; heating can push population
    further, in which case the cutoff is multiplied by ``growth`` and the run
    repeated with the same seed.  ``energy_scale`` is epsilon in joules.
    """
    if growth <= 1:
        raise ParameterError("cutoff growth factor must exceed 1")
    n = int(fock_cutoff or ramp_cutoff(protocol))
    while True:
        space = HilbertSpace(n)
        noise = build_dissipators(spec, energy_scale, protocol.system_size, space)
        try:
            return mcwf_evolve(QuantumState.fock(space, 0, "down"), protocol, noise, n_traj, seed, **kwargs)
        except CutoffError:
            if n >= max_cutoff:
                raise
            n = min(max_cutoff, int(math.ceil(growth * n)))


class _OffsetEngine(_Engine):
    """Engine over trajectory indices offset..offset+n-1."""

    def __init__(self, offset, *args):
        super().__init__(*args)
        self.rngs = [np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(offset + i,)))
                     for i in range(self.n_traj)]
        self.ref_xi = np.array([1.0 - r.random() for r in self.rngs])
        self.offset = offset


def _run_chunks(psi0, protocol, noise, n_traj, seed, dt, samples, observables, chunk, settings,
                workers=1):
    def one(start):
        eng = _OffsetEngine(start, psi0, protocol, noise, min(chunk, n_traj - start), seed, dt, samples,
                            observables)
        eng.run()
        return start, eng

    starts = range(0, n_traj, chunk)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(one, starts))
    else:
        parts = [one(s) for s in starts]
    first = parts[0][1]
    stats = _Stats.empty(*first.stats.total.shape)
    for _, eng in parts:
        stats.count += eng.stats.count
        stats.total += eng.stats.total
        stats.total_sq += eng.stats.total_sq
    first.stats = stats
    nsec = len(first.phi)
    ids = [np.concatenate([eng.ids[b] + off for off, eng in parts]) for b in range(nsec)]
    phi = [np.concatenate([eng.phi[b] for _, eng in parts]) for b in range(nsec)]
    # all chunks share the same reference evolution
    ref_ids = np.concatenate([eng.ref_ids + off for off, eng in parts])
    log_traj = [t + off for off, eng in parts for t in eng.log_traj]
    log_time = [t for _, eng in parts for t in eng.log_time]
    log_chan = [c for _, eng in parts for c in eng.log_chan]
    first.ids, first.phi, first.ref_ids = ids, phi, ref_ids
    first.log_traj, first.log_time, first.log_chan = log_traj, log_time, log_chan
    first.incidents = [i for _, eng in parts for i in eng.incidents]
    first.n_traj = n_traj
    first.ref = next((eng.ref for _, eng in parts if eng.ref_ids.size), first.ref)
    return first.ensemble(settings)
