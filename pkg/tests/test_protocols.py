import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from darkarray.couplings import LatticeSpec, pinned_couplings
from darkarray.errors import ConfigError
from darkarray.hilbert import DriveSpec, coefficient_matrix, drive_vector
from darkarray.protocols import (
    IDEAL_SQRT_ISWAP,
    DrivenSystem,
    OmegaScan,
    average_gate_fidelity,
    build_four_level_model,
    build_lanczos_chain,
    build_three_level_model,
    dark_mode_target,
    full_return_amplitude,
    inter_array_coupling,
    iswap_gate,
    prepare_dark_state,
    selective_prepare,
    single_excitation_spectrum,
    three_level_prepare,
)
from darkarray.spectral import transition_amplitude


# --- gate fidelity ------------------------------------------------------------

def test_fidelity_identity_and_leakage():
    assert average_gate_fidelity(np.eye(4)) == 1.0
    # full leakage: the trace formula gives zero
    assert average_gate_fidelity(np.zeros((4, 4))) == 0.0
    assert average_gate_fidelity(IDEAL_SQRT_ISWAP.conj().T @ IDEAL_SQRT_ISWAP) == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.0, 1.0))
def test_fidelity_bounds(seed, shrink):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    q, _ = np.linalg.qr(z)
    f_unitary = average_gate_fidelity(q)
    assert 0.0 <= f_unitary <= 1.0 + 1e-12
    # a contraction (lossy evolution) never beats the same unitary
    assert average_gate_fidelity(shrink * q) <= f_unitary + 1e-12


def test_gate_exchange_symmetry_and_structure():
    rep = iswap_gate(LatticeSpec(8, 2, 0.2, 0.8))
    u = rep.meta["U_computational"]
    assert abs(abs(u[1, 2]) - abs(u[2, 1])) < 1e-10
    assert 0.0 <= rep.fidelity_F <= 1.0
    assert rep.error_total == pytest.approx(1 - rep.fidelity_F)
    assert rep.gate_time_Tg == pytest.approx(math.pi / (4 * abs(rep.g_qa)))
    assert rep.meta["prediction_3GT5"] == pytest.approx(0.6 * rep.meta["gamma_q"] * rep.gate_time_Tg)
    assert rep.truth_table.shape == (4, 4)


def test_gate_guards():
    with pytest.raises(ConfigError):
        iswap_gate(LatticeSpec(8, spacing_a=0.2))
    with pytest.raises(ConfigError):
        iswap_gate(LatticeSpec(4, 2, 0.2, 0.2, detuning_b=0.1))
    with pytest.raises(ConfigError):
        iswap_gate(LatticeSpec(4, 2, 0.2, 0.2), n_max=1)


def test_inter_array_coupling_matches_four_level_model():
    lat = LatticeSpec(8, 2, 0.2, 0.2)
    g, gamma, *_ = inter_array_coupling(coefficient_matrix(pinned_couplings(lat)), 8, 0.2)
    fm = build_four_level_model(lat)
    assert fm.matrix.shape == (4, 4)
    assert fm.matrix[1, 2] == pytest.approx(fm.matrix[2, 1], abs=1e-14)
    assert fm.matrix[1, 2].real == pytest.approx(g, rel=1e-3)
    assert fm.meta["g_qa"] == g and fm.meta["gamma_qa"] == gamma


# --- Lanczos chain --------------------------------------------------------------

@pytest.mark.parametrize("length", [10, 15, 20, 30])
def test_lanczos_matches_full_propagation(length):
    lat = LatticeSpec(8, 2, 0.2, 0.2)
    ch = build_lanczos_chain(lat, length)
    assert ch.meta["gram_residual"] < 1e-10
    m = ch.matrix()
    assert np.allclose(m, m.T) and np.allclose(np.triu(m, 2), 0)
    t = np.linspace(0, math.pi / (4 * abs(ch.meta["g_qa"])), 21)
    assert np.abs(ch.return_amplitude(t) - full_return_amplitude(ch, t)).max() < 1e-6


def test_lanczos_first_site_is_s2():
    ch = build_lanczos_chain(LatticeSpec(8, 2, 0.2, 0.2), 4)
    assert ch.meta["s2_overlap"] > 0.99


def test_lanczos_hopping_vanishes_for_distant_arrays():
    t1 = [abs(build_lanczos_chain(LatticeSpec(8, 2, 0.2, 0.2 * l), 2).hoppings[0]) for l in (1, 4, 16, 64, 256)]
    assert all(x > y for x, y in zip(t1, t1[1:]))
    assert t1[-1] < 1e-4 * t1[0]


def test_lanczos_guards():
    with pytest.raises(ConfigError):
        build_lanczos_chain(LatticeSpec(4, spacing_a=0.2))
    with pytest.raises(ConfigError):
        build_lanczos_chain(LatticeSpec(4, 2, 0.2, 0.2), 0)


# --- single-excitation targets and preparation -------------------------------------

def test_dark_mode_target_is_most_subradiant():
    lat = LatticeSpec(30, spacing_a=0.2)
    spec = single_excitation_spectrum(lat)
    tgt = dark_mode_target(spec, spacing_a=0.2)
    assert tgt.decay_rate == pytest.approx(spec.decay_rates.min())
    assert tgt.overlap_error < 0.05
    assert np.vdot(tgt.ansatz, tgt.state).real > 0
    alt = dark_mode_target(spec, spacing_a=0.2, selection="ansatz_overlap")
    assert alt.overlap_error <= tgt.overlap_error + 1e-15


def test_omega_scan_grid():
    g = OmegaScan().grid(10)
    assert len(g) == 40 and g[0] == pytest.approx(1e-3 * 10 ** -2.5) and g[-1] == pytest.approx(10 * 10 ** -2.5)
    assert list(OmegaScan(values=(0.1, 0.2)).grid(5)) == [0.1, 0.2]
    with pytest.raises(ConfigError):
        OmegaScan(values=()).grid(5)
    with pytest.raises(ConfigError):
        OmegaScan(values=(0.1, -1.0)).grid(5)


def test_dense_and_krylov_preparation_agree():
    lat = LatticeSpec(12, spacing_a=0.2)
    c0 = coefficient_matrix(pinned_couplings(lat))
    tgt = dark_mode_target(single_excitation_spectrum(c0), spacing_a=0.2)
    c = c0 - tgt.energy.real * np.eye(12)
    s = drive_vector(DriveSpec.for_lattice(lat, 1.0), 12)
    dense = DrivenSystem(c, s, 2, method="dense")
    kry = DrivenSystem(c, s, 2, krylov_m=30, method="krylov")
    assert dense.dimension == kry.dimension == 79
    om = 0.01
    t = np.linspace(0, 300, 50)
    target = dense.embed_single(tgt.state)
    a_d = transition_amplitude(dense.spectrum(om), dense.ground, target, t)
    a_k = transition_amplitude(kry.spectrum(om), kry.ground, target, t)
    assert np.abs(a_d - a_k).max() < 1e-6


def test_driven_system_guards():
    with pytest.raises(ConfigError):
        DrivenSystem(np.zeros((3, 3)), np.ones(3), 0)
    with pytest.raises(ConfigError):
        DrivenSystem(np.zeros((3, 3)), np.ones(3), 2, dense_cap=3, method="dense")
    with pytest.raises(ConfigError):
        DrivenSystem(np.zeros((3, 3)), np.ones(3), 2, method="magic")


def test_dimer_error_decreases_with_spacing():
    eps = [prepare_dark_state(LatticeSpec(2, spacing_a=a)).error_epsilon for a in (0.05, 0.1, 0.15, 0.2, 0.25, 0.3)]
    assert all(x < y for x, y in zip(eps, eps[1:]))


@pytest.mark.parametrize("n", [10, 20])
def test_preparation_time_is_half_collective_rabi_period(n):
    res = prepare_dark_state(LatticeSpec(n, spacing_a=0.25))
    expect = math.pi / (2 * res.optimal_omega0 * math.sqrt((n + 1) / 2))
    assert res.t_star == pytest.approx(expect, rel=0.2)
    p = res.populations
    assert p["P0"] + p["target"] + p["other_singles"] + p["P2"] == pytest.approx(p["norm"], abs=1e-10)
    assert 0.0 <= res.error_epsilon <= 1.0
    assert res.error_epsilon == pytest.approx(1 - p["target"], abs=1e-9)


def test_three_level_model_tracks_full_preparation():
    lat = LatticeSpec(10, spacing_a=0.2)
    full = prepare_dark_state(lat)
    model = build_three_level_model(lat, DriveSpec.for_lattice(lat, full.optimal_omega0))
    red = three_level_prepare(model)
    assert red.error_epsilon == pytest.approx(full.error_epsilon, rel=0.05)
    assert red.optimal_omega0 == pytest.approx(full.optimal_omega0, rel=0.05)
    assert np.allclose(model.at_omega(full.optimal_omega0), model.matrix)


def test_selective_preparation_leak_and_large_detuning_limit():
    leaks, eps = [], []
    for delta in (0.5, 5.0, 100.0):
        res = selective_prepare(LatticeSpec(8, 2, 0.2, 0.2, detuning_b=delta))
        leaks.append(res.populations["leak_01"])
        eps.append(res.error_epsilon)
    # leak grows as g/δ becomes O(1); g ≈ 0.5 here
    assert leaks[0] > 0.1 > leaks[1] > leaks[2]
    single = prepare_dark_state(LatticeSpec(8, spacing_a=0.2)).error_epsilon
    assert eps[2] == pytest.approx(single, rel=0.05)


def test_selective_preparation_guards():
    with pytest.warns(UserWarning):
        selective_prepare(LatticeSpec(4, 2, 0.2, 0.2), OmegaScan(n_points=3, refine=False))
    with pytest.raises(ConfigError):
        selective_prepare(LatticeSpec(4, spacing_a=0.2))
