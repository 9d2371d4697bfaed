import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from darkarray.couplings import K_E, LatticeSpec
from darkarray.errors import ConfigError, LightConeError
from darkarray.kspace import (
    KBlock,
    analytic_gk,
    feasibility_map,
    k_grid,
    kblock_diagonalize,
    lattice_sum_gk,
    solve_drive_geometry,
)


@settings(max_examples=80, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.02, 1.0), st.sampled_from(["x", "y", "z"]))
def test_gamma_vanishes_outside_light_cone(kr, l, pol):
    if abs(kr - 1.0) < 1e-3:
        return
    g, gamma = analytic_gk(kr * K_E, l, pol)
    assert math.isfinite(g) and math.isfinite(gamma)
    if kr > 1.0:
        assert gamma == 0.0
    elif kr < 0.99:
        assert gamma != 0.0


def test_light_cone_error_and_arguments():
    with pytest.raises(LightConeError):
        analytic_gk(K_E, 0.25)
    with pytest.raises(LightConeError):
        analytic_gk(K_E * (1 + 1e-8), 0.25)
    with pytest.raises(ConfigError):
        analytic_gk(1.0, -0.1)
    with pytest.raises(ConfigError):
        analytic_gk(1.0, 0.1, "w")


def test_gk_even_in_k():
    for pol in "xyz":
        assert analytic_gk(-9.0, 0.3, pol) == analytic_gk(9.0, 0.3, pol)


@pytest.mark.parametrize("pol", ["x", "y"])
def test_band_edge_matches_mode_sum(pol):
    a, l = 0.25, 0.375
    lat = LatticeSpec(100, 2, a, l, pol)
    g_an, _ = analytic_gk(math.pi / a, l, pol, a)
    g_sum, gamma_sum = lattice_sum_gk(k_grid(100, a)[-1], lat)
    assert g_sum == pytest.approx(g_an, rel=0.02)
    assert abs(gamma_sum) < 1e-3 * abs(g_an)


def test_lattice_sum_guards():
    with pytest.raises(ConfigError):
        lattice_sum_gk(1.0, LatticeSpec(10, spacing_a=0.2))
    with pytest.raises(ConfigError):
        lattice_sum_gk(1.0, LatticeSpec(10, 2, 0.2, 0.2), variant="other")


def test_k_grid():
    g = k_grid(9, 0.5)
    assert len(g) == 9 and g[-1] == pytest.approx(math.pi * 9 / (0.5 * 10))


def test_kblock_exact_eigenpairs():
    blk = KBlock(k=10.0, omega_k=0.3, g_k=0.05, gamma_k=0.01, delta=0.02, decay_k=0.001)
    spec = kblock_diagonalize(blk)
    m = blk.matrix
    for i in range(2):
        v = spec.exact_states[:, i]
        assert np.allclose(m @ v, spec.exact_energies[i] * v, atol=1e-14)
    assert spec.exact_energies[0].real > spec.exact_energies[1].real


def test_kblock_lossless_limit():
    blk = KBlock(k=10.0, omega_k=0.0, g_k=0.05, gamma_k=0.0, delta=0.02)
    spec = kblock_diagonalize(blk)
    assert np.allclose(spec.exact_energies, spec.dressed_frequencies, atol=1e-15)
    assert np.allclose(spec.perturbative_energies, spec.dressed_frequencies, atol=1e-15)
    assert spec.dressed_frequencies[0] - spec.dressed_frequencies[1] == pytest.approx(math.hypot(0.02, 0.1))


def test_kblock_perturbative_error_is_second_order():
    errs = []
    for gamma in (1e-2, 5e-3, 2.5e-3):
        spec = kblock_diagonalize(KBlock(k=10.0, omega_k=0.0, g_k=0.05, gamma_k=gamma, delta=0.03))
        errs.append(np.abs(spec.exact_energies - spec.perturbative_energies).max())
    r1, r2 = errs[0] / errs[1], errs[1] / errs[2]
    assert r1 == pytest.approx(4.0, rel=0.1) and r2 == pytest.approx(4.0, rel=0.1)


def test_drive_geometry_reference_point():
    geo = solve_drive_geometry(0.5, 0.0, 2.0)
    assert geo is not None
    assert geo.K_z == pytest.approx(math.pi / 0.5, rel=1e-12)
    assert geo.k_a == pytest.approx(2 * K_E) and geo.k_b == pytest.approx(1.9 * K_E)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 0.5), st.floats(0.0, math.pi / 2), st.floats(1.0, 4.0))
def test_drive_geometry_Kz_exact(a, alpha, p):
    geo = solve_drive_geometry(a, alpha, p)
    if geo is not None:
        assert abs(geo.K_z - math.pi / a) <= 1e-12 * math.pi / a
        assert 0.0 <= geo.beta <= math.pi


def test_drive_geometry_infeasible_and_map():
    assert solve_drive_geometry(0.05, 0.0, 2.0) is None
    alphas = np.radians([0.0, 45.0, 90.0])
    spacings = np.array([0.05, 0.3, 0.5])
    fm = feasibility_map(2.0, alphas, spacings)
    assert fm.shape == (3, 3) and fm.dtype == bool
    assert not fm[0, 0] and fm[0, 2]
    with pytest.raises(ConfigError):
        solve_drive_geometry(0.3, 4.0)


def test_finite_array_gamma_decays_with_n():
    gam = []
    for n in (10, 20, 40, 80):
        lat = LatticeSpec(n, 2, 0.25, 0.25)
        gam.append(abs(lattice_sum_gk(k_grid(n, 0.25)[-1], lat)[1]))
    assert all(x > y for x, y in zip(gam, gam[1:]))
