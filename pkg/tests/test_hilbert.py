import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from darkarray.couplings import LatticeSpec, pinned_couplings
from darkarray.errors import ConfigError, RegimeError
from darkarray.hilbert import (
    DriveSpec,
    adiabatic_eliminate_motion,
    assemble_drive,
    assemble_hamiltonian,
    assemble_lamb_dicke_system,
    band_edge_momentum,
    basis_dimension,
    build_basis,
    dark_mode_ansatz,
    gauge_phases,
    phonon_number_operator,
    vacuum_block,
)


@pytest.mark.parametrize("n,m,dim", [(2, 2, 4), (40, 2, 821), (6, 3, 42), (300, 2, 45151)])
def test_basis_dimension(n, m, dim):
    assert basis_dimension(n, m) == dim
    if dim < 1000:
        b = build_basis(n, m)
        assert b.dimension == dim
        assert b.states[0] == () and b.index_of[b.states[-1]] == dim - 1


def test_basis_order_and_errors():
    b = build_basis(3, 2)
    assert b.states == ((), (0,), (1,), (2,), (0, 1), (0, 2), (1, 2))
    assert list(b.excitation_numbers) == [0, 1, 1, 1, 2, 2, 2]
    assert b.manifold_slice(2) == slice(4, 7)
    with pytest.raises(ConfigError):
        build_basis(3, 4)
    with pytest.raises(ConfigError):
        build_basis(0, 1)


def test_two_atom_single_manifold_eigenvalues():
    lat = LatticeSpec(2, spacing_a=0.2)
    cm = pinned_couplings(lat)
    c12 = cm.complex()[0, 1]
    h = assemble_hamiltonian(cm, build_basis(2, 2))
    ev = np.sort_complex(np.linalg.eigvals(h.block(1, 1)))
    expect = np.sort_complex(np.array([-0.5j + c12, -0.5j - c12]))
    assert np.allclose(ev, expect, atol=1e-13)
    # doubly excited state decays at 2Γ₀ in this convention: diagonal −i
    assert h.block(2, 2)[0, 0] == pytest.approx(-1j)
    assert h.block(0, 0)[0, 0] == 0


def test_two_arrays_one_atom_each_with_detuning():
    delta = 0.37
    lat = LatticeSpec(1, 2, 0.25, 0.3, detuning_b=delta)
    cm = pinned_couplings(lat)
    c = cm.complex()[0, 1]
    h = assemble_hamiltonian(cm, build_basis(2, 1)).block(1, 1)
    oracle = np.array([[-0.5j, c], [c, delta - 0.5j]])
    assert np.allclose(h, oracle, atol=1e-14)
    tr, det = np.trace(oracle), np.linalg.det(oracle)
    disc = np.sqrt(tr * tr - 4 * det)
    expect = np.sort_complex(np.array([(tr + disc) / 2, (tr - disc) / 2]))
    assert np.allclose(np.sort_complex(np.linalg.eigvals(h)), expect, atol=1e-12)


def test_frame_energy_shift():
    cm = pinned_couplings(LatticeSpec(4, spacing_a=0.2))
    b = build_basis(4, 2)
    h0 = assemble_hamiltonian(cm, b).dense()
    h1 = assemble_hamiltonian(cm, b, frame_energy=0.3).dense()
    assert np.allclose(np.diag(h1 - h0), -0.3 * b.excitation_numbers)


@pytest.mark.parametrize("n", [5, 12, 31])
def test_drive_overlap_with_dark_mode(n):
    a = 0.2
    lat = LatticeSpec(n, spacing_a=a)
    om = 0.013
    b = build_basis(n, 2)
    v = assemble_drive(DriveSpec.for_lattice(lat, om), b).dense()
    psi = b.single(dark_mode_ansatz(n, band_edge_momentum(n, a), a))
    assert np.vdot(psi, v @ b.ground()) == pytest.approx(om * math.sqrt((n + 1) / 2), rel=1e-12)


def test_dark_mode_ansatz_normalized():
    for n in (3, 10, 50):
        assert np.linalg.norm(dark_mode_ansatz(n, spacing_a=0.3)) == pytest.approx(1.0, rel=1e-13)


def test_drive_gauges():
    lat = LatticeSpec(4, spacing_a=0.25)
    b = build_basis(4, 3)
    d = DriveSpec.for_lattice(lat, 0.07)
    real = assemble_drive(d, b).dense()
    bare = assemble_drive(d, b, gauge="bare").dense()
    assert np.allclose(real, real.conj().T) and np.allclose(bare, bare.conj().T)
    assert np.allclose(real, real.T)
    h = assemble_hamiltonian(pinned_couplings(lat), b).dense()
    p = np.diag(gauge_phases(b))
    assert np.allclose(p @ (h + bare) @ np.linalg.inv(p), h + real, atol=1e-14)
    with pytest.raises(ConfigError):
        assemble_drive(d, b, gauge="other")


def test_block_structure():
    lat = LatticeSpec(4, 2, 0.2, 0.25)
    b = build_basis(8, 3)
    h = assemble_hamiltonian(pinned_couplings(lat), b)
    v = assemble_drive(DriveSpec.for_lattice(lat, 0.1), b)
    for m in range(4):
        for k in range(4):
            if m != k:
                assert np.abs(h.block(m, k)).max(initial=0) < 1e-14
            if abs(m - k) != 1:
                assert np.abs(v.block(m, k)).max(initial=0) < 1e-14


def test_drive_arrays_selection():
    lat = LatticeSpec(3, 2, 0.2, 0.25)
    b = build_basis(6, 1)
    d = DriveSpec.for_lattice(lat, 1.0)
    va = assemble_drive(d, b, "A").dense()[1:, 0]
    vb = assemble_drive(d, b, "B").dense()[1:, 0]
    assert np.all(va[3:] == 0) and np.all(vb[:3] == 0)
    assert np.allclose(va[:3], vb[3:])


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 7), st.sampled_from([1, 2]), st.floats(0.05, 0.45), st.floats(1e-3, 1.0),
       st.sampled_from(["x", "y", "z"]), st.integers(1, 3))
def test_hamiltonian_complex_symmetric(n, arrays, a, om, pol, n_max):
    lat = LatticeSpec(n, arrays, a, 0.3 if arrays == 2 else None, pol)
    b = build_basis(lat.n_sites, min(n_max, lat.n_sites))
    h = assemble_hamiltonian(pinned_couplings(lat), b, sparse=True)
    total = h + assemble_drive(DriveSpec.for_lattice(lat, om), b, sparse=True)
    assert total.is_complex_symmetric(1e-13)
    # decay is non-negative: −Im part of H is positive semidefinite
    ah = h.antihermitian_part
    ah = ah.toarray() if sp.issparse(ah) else ah
    assert np.linalg.eigvalsh(1j * ah).min() >= -1e-10


def test_detuning_needs_two_arrays():
    cm = pinned_couplings(LatticeSpec(3, spacing_a=0.2))
    with pytest.raises(ConfigError):
        assemble_hamiltonian(cm, build_basis(3, 1), detuning_b=0.1)


# --- Lamb-Dicke -----------------------------------------------------------------

def test_lamb_dicke_zero_eta_is_pinned_times_ladder():
    lat = LatticeSpec(1, 2, 0.25, 0.25)
    om_t = 25.0
    drive = DriveSpec.for_lattice(lat, 0.05)
    op = assemble_lamb_dicke_system(lat, drive, 0.0, om_t, phonon_dim=3)
    b = op.basis
    h_int = assemble_hamiltonian(pinned_couplings(lat), b).dense() + assemble_drive(drive, b).dense()
    n_modes = len(op.meta["modes"])
    nph = phonon_number_operator(n_modes, 3).toarray()
    expect = np.kron(h_int, np.eye(3 ** n_modes)) + om_t * np.kron(np.eye(b.dimension), nph)
    assert np.allclose(op.dense(), expect, atol=1e-13)
    ntot = np.kron(np.eye(b.dimension), nph)
    comm = op.dense() @ ntot - ntot @ op.dense()
    assert np.abs(comm).max() < 1e-12
    assert np.allclose(vacuum_block(op), h_int, atol=1e-13)


def test_lamb_dicke_motion_breaks_phonon_conservation():
    lat = LatticeSpec(1, 2, 0.25, 0.25)
    op = assemble_lamb_dicke_system(lat, None, 0.01, 25.0, phonon_dim=2)
    nph = np.kron(np.eye(op.basis.dimension), phonon_number_operator(len(op.meta["modes"]), 2).toarray())
    assert np.abs(op.dense() @ nph - nph @ op.dense()).max() > 1e-6


def test_adiabatic_elimination_limits():
    lat = LatticeSpec(2, 2, 0.25, 0.25)
    b = build_basis(4, 2)
    h = assemble_hamiltonian(pinned_couplings(lat), b).dense()
    heff = adiabatic_eliminate_motion(lat, None, 0.0, 50.0).dense()
    assert np.allclose(heff, h, atol=1e-13)
    with pytest.raises(RegimeError):
        adiabatic_eliminate_motion(lat, None, 0.01, 5.0)


def test_lamb_dicke_guards():
    with pytest.raises(RegimeError):
        assemble_lamb_dicke_system(LatticeSpec(3, 2, 0.25, 0.25), None, 0.01, 25.0)
    with pytest.raises(RegimeError):
        assemble_lamb_dicke_system(LatticeSpec(1, 2, 0.25, 0.25), None, 0.01, 25.0, phonon_dim=5)
