import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ermsim.core import HilbertSpace, ModelParams, solve_spectrum
from ermsim.errors import ParameterError, PhaseError
from ermsim.semiclassics import (E_VAC, PhaseLabel, PhasePoint, classical_energy, classify_phase, critical_set,
                                 jc_spectrum_analytic, phase_map, phase_space_volumes, predict_emergent_counts,
                                 radial_roots, smoothed_dos)


def _grad(lam, delta, x, p, m=-0.5, h=1e-6):
    gx = (classical_energy((x + h, p, m), lam, delta) - classical_energy((x - h, p, m), lam, delta)) / (2 * h)
    gp = (classical_energy((x, p + h, m), lam, delta) - classical_energy((x, p - h, m), lam, delta)) / (2 * h)
    return math.hypot(gx, gp)


def test_classical_energy_examples():
    for lam, d in [(0.0, 0.0), (2.0, 0.3), (4.0, -0.7)]:
        assert classical_energy(PhasePoint(0.0, 0.0, -0.5), lam, d) == -0.5
    cs = critical_set(4.0, 0.5)
    assert classical_energy((cs.x_c, 0.0, -0.5), 4.0, 0.5) == pytest.approx(-4.015625, abs=1e-12)
    assert classical_energy((0.0, cs.p_c, -0.5), 4.0, 0.5) == pytest.approx(-1.0625, abs=1e-12)


def test_phase_point_rejects_bad_branch():
    with pytest.raises(ParameterError):
        PhasePoint(0.0, 0.0, 0.3)


def test_critical_set_examples():
    cs = critical_set(1.0, 0.5)
    assert cs.x_c == 0 and cs.e_min == E_VAC and cs.e_sad is None
    cs = critical_set(4.0, 0.5)
    assert cs.p_c ** 2 / 2 == pytest.approx(0.9375)
    assert 15 * cs.p_c ** 2 / 2 == pytest.approx(14.06, abs=0.01)
    assert cs.lambda_0 == 2.0
    cs = critical_set(4.0, 1.0)
    assert cs.e_sad == pytest.approx(cs.e_min)
    assert critical_set(3.0, 0.0).lambda_0 == math.inf


@pytest.mark.property
@pytest.mark.parametrize("lam,delta", [(1.5, 0.3), (4.0, 0.5), (4.0, -0.5), (3.0, 1.0)])
def test_gradient_vanishes_at_stationary_points(lam, delta):
    cs = critical_set(lam, delta)
    assert _grad(lam, delta, 0, 0) < 1e-6
    assert _grad(lam, delta, cs.x_c, 0) < 1e-6
    assert _grad(lam, delta, -cs.x_c, 0) < 1e-6
    if cs.p_c is not None:
        assert _grad(lam, delta, 0, cs.p_c) < 1e-6


@pytest.mark.parametrize("lam", [1.5, 2.0, 4.0])
def test_emin_is_grid_minimum(lam):
    cs = critical_set(lam, 0.4)
    x = np.linspace(-1.5 * cs.x_c, 1.5 * cs.x_c, 801)
    p = np.linspace(-1.5 * cs.x_c, 1.5 * cs.x_c, 801)
    xx, pp = np.meshgrid(x, p)
    grid_min = classical_energy((xx, pp, -0.5), lam, 0.4).min()
    assert grid_min >= cs.e_min - 1e-12
    # refine around the grid minimum
    assert classical_energy((cs.x_c, 0.0, -0.5), lam, 0.4) == pytest.approx(cs.e_min, abs=1e-12)
    assert grid_min - cs.e_min < 1e-4


def test_upper_branch_has_no_criticality():
    x = np.linspace(-4, 4, 201)
    xx, pp = np.meshgrid(x, x)
    for lam in (0.0, 2.0, 6.0):
        for d in (-1.0, 0.0, 0.5, 1.0):
            e = classical_energy((xx, pp, 0.5), lam, d)
            i = np.unravel_index(np.argmin(e), e.shape)
            assert xx[i] == 0 and pp[i] == 0


@pytest.mark.parametrize("lam,delta,label", [(0.5, 0.3, PhaseLabel.N), (2.0, 0.3, PhaseLabel.S1),
                                             (4.0, 0.5, PhaseLabel.S2), (4.0, -0.5, PhaseLabel.S2P)])
def test_classify_phase(lam, delta, label):
    ph = classify_phase(lam, delta)
    assert ph.label == label and not ph.boundary


def test_classify_phase_boundaries():
    assert classify_phase(1.0, 0.5) == classify_phase(1.0, 0.5)
    ph = classify_phase(1.0, 0.5)
    assert ph.label == PhaseLabel.N and ph.boundary
    ph = classify_phase(2.0, 0.5)
    assert ph.label == PhaseLabel.S1 and ph.boundary


@given(lam=st.floats(0, 8), delta=st.floats(-1, 1))
@settings(max_examples=200, deadline=None)
def test_phase_invariants(lam, delta):
    ph = classify_phase(lam, delta).label
    k = lam * abs(delta)
    if lam < 1:
        assert ph == PhaseLabel.N
    elif k > 1:
        assert ph == (PhaseLabel.S2 if delta > 0 else PhaseLabel.S2P)
    elif lam > 1:
        assert ph == PhaseLabel.S1
    cs = critical_set(lam, delta)
    if cs.e_sad is not None:
        assert cs.e_min <= cs.e_sad <= cs.e_vac


def test_phase_map_rows():
    rows = phase_map([0.5, 4.0], [0.5], volumes=True)
    assert [r["phase"] for r in rows] == ["N", "S2"]
    assert rows[0]["v_minus"] is None
    assert rows[1]["v_minus"] / (2 * math.pi) == pytest.approx(0.210, abs=1e-3)


# -- density of states ------------------------------------------------------------


def test_dos_single_level():
    dos = smoothed_dos([0.3], sigma=0.05)
    i = np.argmax(dos.density)
    assert dos.energies[i] == pytest.approx(0.3, abs=0.05 / 8)
    assert dos.density.max() == pytest.approx(1 / (0.05 * math.sqrt(2 * math.pi)), rel=2.5e-3)
    assert dos.integral() == pytest.approx(1.0, abs=1e-6)


@pytest.mark.property
def test_dos_normalization():
    spec = solve_spectrum(ModelParams(15, 4, 0.5), HilbertSpace(200), eigenvectors=False)
    dos = smoothed_dos(spec, sigma=0.02)
    assert dos.integral() == pytest.approx(len(spec), abs=1e-6)


def test_dos_errors_and_default_width():
    with pytest.raises(ParameterError):
        smoothed_dos([])
    with pytest.raises(ParameterError):
        smoothed_dos([0.0, 1.0], sigma=-1)
    dos = smoothed_dos(np.arange(11.0))
    assert dos.sigma == pytest.approx(3.0)


def test_dos_esqpt_features():
    # log peak near e_sad grows with Delta
    peaks = []
    for d in (15, 40):
        spec = solve_spectrum(ModelParams(d, 4, 0.5), HilbertSpace(int(40 * d)), eigenvectors=False,
                              energy_window=(-4.5, 0.5))
        dos = smoothed_dos(spec, sigma=0.04)
        sel = (dos.energies > -1.3) & (dos.energies < -0.8)
        peaks.append(dos.energies[sel][np.argmax(dos.density[sel])])
        rho = dos.density / d
        # density per unit Delta has a maximum near e_sad
        assert abs(peaks[-1] - (-1.0625)) < 0.15
        assert rho[sel].max() > rho[(dos.energies > -2.5) & (dos.energies < -2.0)].mean()
    assert abs(peaks[1] + 1.0625) <= abs(peaks[0] + 1.0625) + 0.02


# -- analytic (a)JC spectrum ---------------------------------------------------------


def test_jc_zero_coupling():
    ev = jc_spectrum_analytic(15, 0.0, 1, 20)
    expect = np.sort(np.concatenate([[-0.5], -0.5 + np.arange(1, 22) / 15, 0.5 + np.arange(21) / 15]))
    assert np.allclose(ev, expect, atol=1e-13)


@pytest.mark.parametrize("sign", [1, -1])
def test_jc_contains_decoupled_vacuum(sign):
    for lam in (0.5, 2.0, 4.0):
        assert np.any(np.abs(jc_spectrum_analytic(15, lam, sign, 30) + sign / 2) < 1e-15)


@pytest.mark.property
@pytest.mark.parametrize("sign", [1, -1])
def test_jc_matches_numerics(sign):
    spec = solve_spectrum(ModelParams(15, 4, float(sign)), HilbertSpace(400), 50, eigenvectors=False)
    exact = jc_spectrum_analytic(15, 4, sign, 400)[:50]
    assert np.abs(spec.eigenvalues - exact).max() <= 1e-9


def test_jc_rejects_bad_sign():
    with pytest.raises(ParameterError):
        jc_spectrum_analytic(15, 1, 0, 3)


# -- phase-space volumes ------------------------------------------------------------


def test_radial_roots_solve_level_equation():
    c, e = 2 * 16 * 0.6, -0.8
    ui, uo = radial_roots(c, e)
    h = lambda u: 0.5 * u - 0.5 * math.sqrt(c * u + 1)
    assert h(ui) == pytest.approx(e, abs=1e-12) and h(uo) == pytest.approx(e, abs=1e-12)
    assert ui < uo


def test_volumes_reference_values():
    vm, vp = phase_space_volumes(4.0, 0.5)
    assert vm / (2 * math.pi) == pytest.approx(0.210, abs=1e-3)
    assert vp / (2 * math.pi) == pytest.approx(1.335, abs=1e-3)
    assert vm < vp


def test_volumes_require_s2():
    with pytest.raises(PhaseError):
        phase_space_volumes(4.0, 0.2)


@pytest.mark.slow
def test_volume_trends_toward_boundary():
    # both volumes collapse and v-/v+ grows as lambda*delta -> 1+; the approach is slow
    vols = [phase_space_volumes(lam, 0.5) for lam in (2.05, 2.2, 4.0)]
    ratios = [vm / vp for vm, vp in vols]
    assert ratios[0] > ratios[1] > ratios[2]
    assert vols[0][1] < vols[1][1] < vols[2][1]
    assert vols[0][1] < 0.01 * vols[2][1]


@pytest.mark.parametrize("lam", [2.4, 6.0])
def test_inner_volume_below_outer(lam):
    vm, vp = phase_space_volumes(lam, 0.5)
    assert vm < vp


def test_predict_counts():
    pred = predict_emergent_counts(4.0, 0.5, 20.0)
    assert pred.n_emergent / 20 == pytest.approx(0.210, abs=1e-3)
    assert pred.ratio == pytest.approx(pred.v_minus / pred.v_plus)
    assert not float(pred.n_emergent).is_integer()
