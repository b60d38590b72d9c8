import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.constants import hbar

from ermsim.core import (HilbertSpace, ModelParams, QuantumState, TrapParams, build_hamiltonian, build_parity,
                         check_feasibility, default_cutoff, diagonalize, lab_time_from_tau, level_dynamics,
                         map_model_to_trap, map_trap_to_model, solve_spectrum, tau_from_lab_time)
from ermsim.errors import ConventionError, ParameterError, RegimeError

TWO_PI = 2 * math.pi


def fig8_trap(nu=1.0e6):
    return TrapParams.from_sideband_rabi(TWO_PI * nu, -TWO_PI * 3.6e3, -TWO_PI * 4.1e3, 0.05,
                                         TWO_PI * 5.87e3, TWO_PI * 1.96e3)


# -- parameters ---------------------------------------------------------------


@pytest.mark.parametrize("kw", [dict(system_size=0, coupling=1, regime=0),
                                dict(system_size=15, coupling=-1, regime=0),
                                dict(system_size=15, coupling=1, regime=1.5),
                                dict(system_size=15, coupling=1, regime=0, energy_scale=-1.0)])
def test_model_params_rejects_out_of_range(kw):
    with pytest.raises(ParameterError):
        ModelParams(**kw)


def test_fig8_mapping():
    m = map_trap_to_model(fig8_trap())
    assert m.system_size == pytest.approx(15.4, abs=1e-9)
    assert m.coupling == pytest.approx(4.0, abs=0.01)
    assert m.regime == pytest.approx(0.5, abs=1e-3)
    assert m.energy_scale / hbar / TWO_PI == pytest.approx(980, rel=2e-3)


def test_equal_rabi_gives_rabi_regime():
    t = TrapParams.from_sideband_rabi(TWO_PI * 1e6, -TWO_PI * 3.6e3, -TWO_PI * 4.1e3, 0.05,
                                      TWO_PI * 2e3, TWO_PI * 2e3)
    assert map_trap_to_model(t).regime == 0.0


def test_mapping_rejects_conventions():
    with pytest.raises(ConventionError):
        map_trap_to_model(TrapParams(1e6, -3.6e3, 3.6e3, 0.05, 1e3, 1e3))   # Delta = 0
    with pytest.raises(ConventionError):
        map_trap_to_model(TrapParams(1e6, -4.1e3, -3.6e3, 0.05, 1e3, 1e3))  # d_r < d_b
    with pytest.raises(RegimeError):
        map_trap_to_model(TrapParams(1e6, -3.6e3, -4.1e3, 0.05, 0.0, 0.0))


@pytest.mark.property
def test_mapping_round_trip():
    t = fig8_trap()
    back = map_model_to_trap(map_trap_to_model(t), t.lamb_dicke, t.secular_freq)
    for name in ("red_detuning", "blue_detuning", "rabi_red", "rabi_blue"):
        assert getattr(back, name) == pytest.approx(getattr(t, name), rel=1e-10)


def test_lab_time_conversion():
    eps = hbar * TWO_PI * 980
    assert tau_from_lab_time(1.3e-3, eps, 15.4) / TWO_PI == pytest.approx(5.0, rel=2e-3)
    assert tau_from_lab_time(5e-3, hbar * TWO_PI * 1e4, 25) == pytest.approx(500 * math.pi, rel=1e-12)
    assert tau_from_lab_time(0.0, eps, 15.4) == 0.0
    t = np.array([1e-4, 2.5e-3])
    assert np.allclose(lab_time_from_tau(tau_from_lab_time(t, eps, 15.4), eps, 15.4), t, rtol=1e-12, atol=0)


@pytest.mark.xfail(strict=True, reason="quoted 200 pi is inconsistent with tau = eps t sqrt(Delta)/hbar, "
                                       "which the 1.3 ms -> 5 x 2 pi example confirms; see the ledger")
def test_quoted_appendix_conversion():
    assert tau_from_lab_time(5e-3, hbar * TWO_PI * 1e4, 25) == pytest.approx(200 * math.pi, rel=0.05)


def test_feasibility_reference_and_band():
    rep = check_feasibility(fig8_trap(), 1.3e-3)
    assert rep.status == "pass"
    assert rep.red_ratio == pytest.approx(0.0036) and rep.blue_ratio == pytest.approx(0.0041)
    assert rep.tau_f / TWO_PI == pytest.approx(5.0, rel=2e-3)
    # the reference-experiment band 0.008..0.022 passes
    for ratio in (0.008, 0.022):
        nu = 4.1e3 / ratio
        assert check_feasibility(fig8_trap(nu)).status == "pass"
    assert check_feasibility(fig8_trap(4.1e3 / 0.028)).status == "warn"
    assert check_feasibility(fig8_trap(4.1e3 / 0.05)).status == "fail"


def test_feasibility_flags_convention():
    t = TrapParams(TWO_PI * 1e6, -TWO_PI * 4e3, -TWO_PI * 4e3, 0.05, 1e3, 1e3)
    rep = check_feasibility(t)
    assert not rep.convention_ok and rep.status == "fail"
    assert rep.as_dict()["messages"]


def test_feasibility_lamb_dicke():
    t = TrapParams.from_sideband_rabi(TWO_PI * 1e6, -TWO_PI * 3.6e3, -TWO_PI * 4.1e3, 0.5,
                                      TWO_PI * 5.87e3, TWO_PI * 1.96e3)
    assert check_feasibility(t).lamb_dicke_status == "fail"


# -- Hilbert space and states -------------------------------------------------------


def test_basis_order():
    s = HilbertSpace(3)
    assert s.dimension == 8
    assert [s.index(n, q) for n in range(4) for q in (0, 1)] == list(range(8))
    assert np.array_equal(s.phonon_numbers, [0, 0, 1, 1, 2, 2, 3, 3])
    assert np.array_equal(s.jz_values, [-0.5, 0.5] * 4)


def test_quantum_state_norm_and_tail():
    s = HilbertSpace(10)
    with pytest.raises(ParameterError):
        QuantumState(s, np.ones(s.dimension))
    amp = np.zeros(s.dimension, complex)
    amp[s.index(10, 0)] = 1.0
    st = QuantumState(s, amp)
    assert st.tail_mass() == 1.0
    tail, healthy = st.cutoff_health(1e-8)
    assert tail == 1.0 and not healthy


# -- Hamiltonian --------------------------------------------------------------


def test_zero_coupling_is_diagonal():
    s = HilbertSpace(3)
    h = build_hamiltonian(ModelParams(15, 0, 0.5), s).toarray()
    expect = s.jz_values + s.phonon_numbers / 15
    assert np.allclose(h, np.diag(expect), atol=0)


def test_matrix_element_by_hand():
    s = HilbertSpace(5)
    h = build_hamiltonian(ModelParams(15, 4, 0.5), s)
    assert h[s.index(0, 1), s.index(1, 0)] == pytest.approx(4 * 0.75 / math.sqrt(15), rel=1e-14)
    assert h[s.index(0, 0), s.index(1, 1)] == pytest.approx(4 * 0.25 / math.sqrt(15), rel=1e-14)


def test_jc_limit_structure():
    s = HilbertSpace(30)
    h = build_hamiltonian(ModelParams(15, 4, 1.0), s).toarray()
    i0 = s.index(0, 0)
    assert np.count_nonzero(h[i0]) == 1   # |down,0> decoupled
    for n in range(30):
        row = h[s.index(n, 1)]
        assert set(np.flatnonzero(row)) <= {s.index(n, 1), s.index(n + 1, 0)}


@pytest.mark.property
@pytest.mark.parametrize("regime", [-1.0, -0.3, 0.0, 0.5, 1.0])
def test_hermitian_and_parity_commutation(regime):
    s = HilbertSpace(200)
    h = build_hamiltonian(ModelParams(15, 4, regime), s)
    p = build_parity(s)
    assert abs(h - h.getH()).max() == 0
    assert abs(h @ p - p @ h).max() <= 1e-12 * abs(h).max()
    assert np.array_equal((p @ p).toarray(), np.eye(s.dimension))


def test_parity_values():
    s = HilbertSpace(2)
    p = build_parity(s).diagonal()
    assert p[s.index(0, 0)] == 1 and p[s.index(0, 1)] == -1 and p[s.index(1, 0)] == -1


def test_hamiltonian_is_band_sparse():
    s = HilbertSpace(50)
    h = build_hamiltonian(ModelParams(15, 2, 0.3), s).tocoo()
    assert np.all(np.abs(s.phonon_numbers[h.row] - s.phonon_numbers[h.col]) <= 1)


# -- spectra ------------------------------------------------------------------


def test_ground_state_at_zero_coupling():
    spec = solve_spectrum(ModelParams(15, 0, 0.3), HilbertSpace(20))
    assert spec.eigenvalues[0] == pytest.approx(-0.5)
    assert abs(spec.eigenvectors[0, 0]) == pytest.approx(1.0)


@pytest.mark.property
def test_diagonalize_matches_tridiagonal_solver():
    p = ModelParams(15, 2.5, 0.4)
    s = HilbertSpace(120)
    a = diagonalize(build_hamiltonian(p, s), params=p, space=s)
    b = solve_spectrum(p, s)
    assert np.allclose(a.eigenvalues, b.eigenvalues, atol=1e-10)
    h = build_hamiltonian(p, s)
    res = np.linalg.norm(h @ a.eigenvectors - a.eigenvectors * a.eigenvalues, axis=0)
    assert res.max() <= 1e-9 * abs(h).max()
    pe = np.einsum("ij,i,ij->j", a.eigenvectors, build_parity(s).diagonal(), a.eigenvectors)
    assert np.all(np.abs(pe) >= 1 - 1e-8)


def test_diagonalize_partial_and_degenerate_pairs():
    # deep in S1 the lowest pair is numerically degenerate with opposite parities
    p = ModelParams(15, 3.0, 0.0)
    s = HilbertSpace(200)
    spec = diagonalize(build_hamiltonian(p, s), 6, params=p, space=s)
    assert len(spec) == 6
    assert set(spec.parities[:2].tolist()) == {1, -1}
    assert not spec.ambiguous.any()


@pytest.mark.property
def test_eigenvalues_ascending_and_converged():
    p = ModelParams(15, 4, 0.5)
    n = default_cutoff(15, 4)
    a = solve_spectrum(p, HilbertSpace(n), 40, eigenvectors=False).eigenvalues
    b = solve_spectrum(p, HilbertSpace(int(1.25 * n)), 40, eigenvectors=False).eigenvalues
    assert np.all(np.diff(a) >= 0)
    assert np.abs(a - b).max() < 1e-8


def test_plus_minus_delta_differ_at_finite_size():
    a = solve_spectrum(ModelParams(15, 4, 0.5), HilbertSpace(400), 30, eigenvectors=False).eigenvalues
    b = solve_spectrum(ModelParams(15, 4, -0.5), HilbertSpace(400), 30, eigenvectors=False).eigenvalues
    assert np.abs(a - b).max() > 1e-6


def test_spectrum_energy_window_is_half_open():
    p = ModelParams(15, 0, 0.5)
    spec = solve_spectrum(p, HilbertSpace(10), energy_window=(-0.5, 0.5))
    # levels -1/2 + n/15 and 1/2 + n/15: -0.5 excluded, 0.5 included
    assert spec.eigenvalues.min() > -0.5 and spec.eigenvalues.max() == pytest.approx(0.5)


def test_level_dynamics_zero_coupling_and_order():
    lev = level_dynamics(15, 0.0, [0.0], 6, fock_cutoff=20)
    expect = np.sort(np.concatenate([-0.5 + np.arange(21) / 15, 0.5 + np.arange(21) / 15]))[:6]
    assert np.allclose(lev.energies[0], expect)
    with pytest.raises(ParameterError):
        level_dynamics(15, 0.0, [1.0, 0.5], 4, fock_cutoff=20)


def test_level_dynamics_rabi_mergers_near_evac():
    # opposite-parity pairs merge near e_vac for lambda > 1 (delta = 0)
    lev = level_dynamics(15, 0.0, [2.0], 80, fock_cutoff=300)
    e, par = lev.energies[0], lev.parities[0]
    below = np.flatnonzero(e < -0.6)
    gaps = np.diff(e[below])[::2]
    assert np.all(par[below][::2] != par[below][1::2])
    assert np.all(np.diff(gaps) > 0)       # splitting opens up toward e_vac
    assert gaps[0] < 1e-10


def test_level_dynamics_workers_match():
    a = level_dynamics(15, 0.5, np.linspace(0, 4, 9), 10, fock_cutoff=150)
    b = level_dynamics(15, 0.5, np.linspace(0, 4, 9), 10, fock_cutoff=150, workers=3)
    assert np.array_equal(a.energies, b.energies)


def test_spectrum_rows_sparse_input():
    p = ModelParams(15, 1, 0.2)
    s = HilbertSpace(60)
    spec = solve_spectrum(p, s, 5)
    rows = list(spec.rows())
    assert rows[0].keys() == {"lambda", "index", "energy", "parity"}
    assert rows[0]["lambda"] == 1
    assert sp.issparse(build_hamiltonian(p, s))
