import math

import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from darkarray.couplings import LatticeSpec, pinned_couplings
from darkarray.errors import ConfigError
from darkarray.hilbert import DriveSpec, assemble_drive, assemble_hamiltonian, build_basis, raising_operator
from darkarray.spectral import (
    dense_decompose,
    evolve_state,
    golden_section_max,
    krylov_decompose,
    maximize_over_time,
    transition_amplitude,
)


def _driven(n=5, n_max=2, om=0.05, a=0.2):
    lat = LatticeSpec(n, spacing_a=a)
    b = build_basis(n, n_max)
    h = assemble_hamiltonian(pinned_couplings(lat), b) + assemble_drive(DriveSpec.for_lattice(lat, om), b)
    return h, b


def test_dense_completeness_and_reconstruction():
    h, _ = _driven()
    spec = dense_decompose(h)
    assert spec.biorthogonality_residual() < 1e-10
    assert spec.completeness_residual() < 1e-10
    assert np.allclose(spec.reconstruct(), h.dense(), atol=1e-12)
    assert spec.meta["complex_symmetric"]


def test_dense_blockwise_labels():
    lat = LatticeSpec(4, spacing_a=0.2)
    b = build_basis(4, 2)
    spec = dense_decompose(assemble_hamiltonian(pinned_couplings(lat), b))
    assert sorted(spec.manifold.tolist()) == sorted(b.excitation_numbers.tolist())
    single = spec.indices(1)
    rates = spec.decay_rates[single]
    assert np.all(np.diff(rates) >= -1e-15)
    assert spec.most_subradiant(1) == single[0]


def test_dense_nonsymmetric_matrix():
    rng = np.random.default_rng(2)
    m = rng.normal(size=(7, 7)) + 1j * rng.normal(size=(7, 7))
    spec = dense_decompose(m)
    assert not spec.meta["complex_symmetric"]
    assert np.allclose(spec.reconstruct(), m, atol=1e-11)


def test_dense_cap():
    h, _ = _driven()
    with pytest.raises(ConfigError):
        dense_decompose(h, dense_cap=5)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10 ** 6))
def test_complex_symmetric_left_vectors(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    m = a + a.T
    spec = dense_decompose(m)
    assert np.allclose(spec.left_vectors, spec.right_vectors.conj() / np.einsum(
        "ij,ij->j", spec.right_vectors, spec.right_vectors).conj(), atol=1e-8)
    assert spec.biorthogonality_residual() < 1e-8


def _match(a, b):
    return max(abs(x - a[np.argmin(np.abs(a - x))]) for x in b)


def test_krylov_full_subspace_matches_dense():
    h, _ = _driven(4, 2)
    n = h.dimension
    dense = dense_decompose(h)
    kry = krylov_decompose(h, m=n, target="near_energy 0")
    assert len(kry.eigenvalues) == n
    assert _match(dense.eigenvalues, kry.eigenvalues) < 1e-10
    assert kry.biorthogonality_residual() < 1e-8
    assert np.all(kry.residual_estimates < 1e-10)


def test_krylov_targets_nearest_energies():
    h, _ = _driven(8, 2)
    dense = dense_decompose(h)
    kry = krylov_decompose(sp.csr_matrix(h.matrix), m=6, target=("near_energy", 0.0))
    near = dense.eigenvalues[np.argsort(np.abs(dense.eigenvalues))[:6]]
    assert _match(near, kry.eigenvalues) < 1e-10


def test_krylov_most_subradiant():
    lat = LatticeSpec(12, spacing_a=0.2)
    b = build_basis(12, 1)
    h = assemble_hamiltonian(pinned_couplings(lat), b).block(1, 1)
    kry = krylov_decompose(h, m=3, target="most_subradiant")
    ev = np.linalg.eigvals(h)
    best = ev[np.argsort(-ev.imag)[:3]]
    assert _match(best, kry.eigenvalues) < 1e-9


def test_krylov_nonsymmetric_left_vectors():
    rng = np.random.default_rng(5)
    m = np.diag(np.arange(1, 21, dtype=float)) + 0.1 * (rng.normal(size=(20, 20)) + 1j * rng.normal(size=(20, 20)))
    kry = krylov_decompose(m, m=5, target=("near_energy", 0.5))
    assert kry.biorthogonality_residual() < 1e-8
    for i, e in enumerate(kry.eigenvalues):
        lv = kry.left_vectors[:, i]
        assert np.linalg.norm(lv.conj() @ m - e * lv.conj()) < 1e-8 * np.linalg.norm(lv)


def test_krylov_argument_errors():
    h, _ = _driven(4, 2)
    with pytest.raises(ConfigError):
        krylov_decompose(h, m=1)
    with pytest.raises(ConfigError):
        krylov_decompose(h, m=h.dimension + 1)
    with pytest.raises(ConfigError):
        krylov_decompose(h, m=3, target="loudest")


def test_zero_time_amplitude_and_propagator():
    h, b = _driven(5, 2)
    spec = dense_decompose(h)
    rng = np.random.default_rng(0)
    psi = rng.normal(size=b.dimension) + 1j * rng.normal(size=b.dimension)
    tgt = rng.normal(size=b.dimension) + 0j
    assert transition_amplitude(spec, psi, tgt, 0.0) == pytest.approx(np.vdot(tgt, psi), rel=1e-10)
    t = 3.7
    exact = la.expm(-1j * h.dense() * t) @ psi
    assert np.allclose(evolve_state(spec, psi, [t])[0], exact, atol=1e-10)
    with pytest.raises(ConfigError):
        transition_amplitude(spec, psi, tgt, -1.0)


def test_norm_is_monotone():
    h, b = _driven(6, 2, om=0.3)
    spec = dense_decompose(h)
    t = np.linspace(0, 40, 400)
    norms = np.linalg.norm(evolve_state(spec, b.ground(), t), axis=1)
    assert norms[0] == pytest.approx(1.0)
    assert np.all(np.diff(norms) <= 1e-12)


@pytest.mark.parametrize("n_max,oracle", [
    (1, lambda om, t: np.cos(math.sqrt(2) * om * t) ** 2),
    (2, lambda om, t: np.cos(om * t) ** 4),
])
def test_collective_rabi_frequency(n_max, oracle):
    # two lossless atoms, uniform drive: the ground state couples to the
    # symmetric state with Ω√2, and the truncation-free pair is two
    # independent spins
    om = 0.4
    b = build_basis(2, n_max)
    up = raising_operator(b, np.ones(2))
    h = (om * (up + up.T)).toarray()
    spec = dense_decompose(h)
    t = np.linspace(0, 10, 50)
    p0 = np.abs(transition_amplitude(spec, b.ground(), b.ground(), t)) ** 2
    assert np.allclose(p0, oracle(om, t), atol=1e-12)


def test_time_and_golden_maximizers():
    t, v = maximize_over_time(lambda t: np.sin(t) * np.exp(-0.1 * t), 10.0, n_grid=101)
    assert t == pytest.approx(math.atan(10.0), abs=1e-4)
    x, fx = golden_section_max(lambda x: -(x - 0.3) ** 2, 0.0, 1.0, tol=1e-8)
    assert x == pytest.approx(0.3, abs=1e-7) and fx <= 0
    with pytest.raises(ConfigError):
        maximize_over_time(np.sin, 0.0)
