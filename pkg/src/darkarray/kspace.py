"""Momentum-space couplings between two parallel arrays and the drive geometry.

Geometry: arrays along z, separated by l along y. Polarization "x" is
perpendicular to the plane of the two arrays, "y" lies in the plane and is
perpendicular to the arrays, "z" is along the arrays.

Only the Q = 0 reciprocal-lattice term is kept in the closed forms. At the
zone edge k = π/a the channels k and k − 2π/a are degenerate. The
outside-light-cone prefactor −3Γ₀/(k_e a) counts both, so it reproduces
lattice sums at the band edge, where the dark modes live.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import special

from .couplings import K_E, GAMMA0, LatticeSpec, pair_coupling, unit_vector
from .errors import ConfigError, LightConeError
from .hilbert import dark_mode_ansatz

LIGHT_CONE_TOL = 1e-6


def analytic_gk(k: float, l: float, polarization: str = "z", spacing_a: float = 0.25) -> Tuple[float, float]:
    """(g_k, γ_k) between two infinite arrays at quasi-momentum k."""
    if not l > 0:
        raise ConfigError("separation l must be positive")
    if not spacing_a > 0:
        raise ConfigError("spacing must be positive")
    k = abs(float(k))
    ke = K_E
    if abs(k - ke) < LIGHT_CONE_TOL * ke:
        raise LightConeError(f"k = {k} within {LIGHT_CONE_TOL}·k_e of the light cone")
    pol = polarization.lower()
    if pol not in ("x", "y", "z"):
        raise ConfigError(f"unknown polarization {polarization!r}")
    kl2 = (ke * l) ** 2
    if k > ke:
        rho = l * math.sqrt(k * k - ke * ke)
        k0, k1, k2 = special.kv(0, rho), special.kv(1, rho), special.kv(2, rho)
        if pol == "z":
            br = (1 - k * k / (ke * ke)) * k0
        elif pol == "x":
            br = k0 - rho * k1 / kl2
        else:
            br = k0 - rho * k1 / kl2 + rho * rho * k2 / kl2
        return float(-3 * GAMMA0 * br / (ke * spacing_a)), 0.0
    rho = l * math.sqrt(ke * ke - k * k)
    if pol == "z":
        fy = (1 - k * k / (ke * ke)) * special.y0(rho)
        fj = (1 - k * k / (ke * ke)) * special.j0(rho)
    elif pol == "x":
        fy = special.y0(rho) - rho * special.y1(rho) / kl2
        fj = special.j0(rho) - rho * special.j1(rho) / kl2
    else:
        fy = special.y0(rho) - rho * special.y1(rho) / kl2 + rho * rho * special.yn(2, rho) / kl2
        fj = special.j0(rho) - rho * special.j1(rho) / kl2 + rho * rho * special.jv(2, rho) / kl2
    g = 3 * math.pi * GAMMA0 * fy / (4 * ke * spacing_a)
    gamma = 3 * math.pi * GAMMA0 * fj / (2 * ke * spacing_a)
    return float(g), float(gamma)


def lattice_sum_gk(k: float, lattice: LatticeSpec, n_atoms: Optional[int] = None,
                   variant: str = "mode") -> Tuple[float, float]:
    """Brute-force (g_k, γ_k) over a finite array.

    ``centered``: Σ_j cos(k Z_j) C(A₀, B_j) over a symmetric window of
    2⌊N/2⌋+1 sites of B around the A reference atom. ``mode``: the
    inter-array matrix element ψ_kᵀ C_AB ψ_k of the open-chain sine modes.
    """
    if lattice.n_arrays != 2:
        raise ConfigError("lattice sums need a two-array lattice")
    n = lattice.n_atoms_per_array if n_atoms is None else int(n_atoms)
    if n < 2:
        raise ConfigError("N must be >= 2")
    a, l = lattice.spacing_a, lattice.separation_l
    d = lattice.dipole
    if variant == "centered":
        m = n // 2
        j = np.arange(-m, m + 1)
        r = np.zeros((len(j), 3))
        r[:, 1] = l
        r[:, 2] = a * j
        c = pair_coupling(r, d)
        s = np.sum(np.cos(k * a * j) * c)
    elif variant == "mode":
        z = a * np.arange(1, n + 1)
        r = np.zeros((n, n, 3))
        r[..., 1] = l
        r[..., 2] = z[None, :] - z[:, None]
        c = pair_coupling(r, d)
        psi = dark_mode_ansatz(n, k, a)
        s = psi @ c @ psi
    else:
        raise ConfigError("variant must be centered or mode")
    return float(s.real), float(-2 * s.imag)


def k_grid(n_atoms: int, spacing_a: float) -> np.ndarray:
    """Open-chain quasi-momenta πm/[a(N+1)], m = 1..N."""
    return math.pi * np.arange(1, n_atoms + 1) / (spacing_a * (n_atoms + 1))


@dataclass(frozen=True)
class KBlock:
    """2×2 block on {|k0⟩, |0k⟩}; ``decay_k`` adds −iΓ_k/2 to both diagonals."""

    k: float
    omega_k: float
    g_k: float
    gamma_k: float
    delta: float = 0.0
    decay_k: float = 0.0

    @property
    def matrix(self) -> np.ndarray:
        c = self.g_k - 0.5j * self.gamma_k
        d = self.omega_k - 0.5j * self.decay_k
        return np.array([[d, c], [c, d + self.delta]], dtype=complex)


@dataclass
class KBlockSpectrum:
    exact_energies: np.ndarray
    exact_states: np.ndarray
    dressed_frequencies: np.ndarray
    perturbative_energies: np.ndarray


def kblock_diagonalize(block: KBlock) -> KBlockSpectrum:
    """Exact eigenpairs plus the dressed-state forms (E₊ first).

    ω_± = ω_k + δ/2 ± Ω_k/2 with Ω_k = √(δ² + 4g_k²), and to first order
    in γ_k, E_± = ω_± − iΓ_k/2 ∓ iγ_k g_k/Ω_k.
    """
    m = block.matrix
    half = np.sqrt(block.delta ** 2 / 4 + (block.g_k - 0.5j * block.gamma_k) ** 2 + 0j)
    centre = m[0, 0] + block.delta / 2
    e = np.array([centre + half, centre - half])
    if abs(half) > 0:
        c = m[0, 1]
        vecs = np.array([[c, c], [e[0] - m[0, 0], e[1] - m[0, 0]]], dtype=complex)
        nrm = np.linalg.norm(vecs, axis=0)
        if np.any(nrm < 1e-300):
            vecs = np.eye(2, dtype=complex)
        else:
            vecs = vecs / nrm
    else:
        vecs = np.eye(2, dtype=complex)
    big = math.sqrt(block.delta ** 2 + 4 * block.g_k ** 2)
    w = np.array([block.omega_k + block.delta / 2 + big / 2, block.omega_k + block.delta / 2 - big / 2])
    corr = block.gamma_k * block.g_k / big if big > 0 else 0.0
    pert = w - 0.5j * block.decay_k + np.array([-1j * corr, 1j * corr])
    return KBlockSpectrum(e, vecs, w, pert)


# ---------------------------------------------------------------------------
# Raman drive geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DriveGeometry:
    """Laser angles (rad, from the array axis) and wavenumbers (1/λ_e)."""

    alpha: float
    beta: float
    k_a: float
    k_b: float
    K_z: float
    K_x: float
    p_ratio: float


def solve_drive_geometry(a: float, alpha: float, p_ratio: float = 2.0, target_Kz: Optional[float] = None,
                         omega_g: float = 0.1) -> Optional[DriveGeometry]:
    """Angle β of the second laser that imprints K_z = target (default π/a).

    Laser a has frequency p·ω_e, laser b is lower by ω_g (in units of ω_e),
    so k_a = p k_e and k_b = k_a − ω_g k_e. Returns None if no β exists.
    """
    if not 0.0 <= alpha <= math.pi:
        raise ConfigError("alpha must lie in [0, π]")
    if not a > 0:
        raise ConfigError("spacing must be positive")
    kz = math.pi / a if target_Kz is None else float(target_Kz)
    ka = p_ratio * K_E
    kb = ka - omega_g * K_E
    if not kb > 0:
        raise ConfigError("p_ratio must exceed omega_g")
    cb = (ka * math.cos(alpha) - kz) / kb
    if abs(cb) > 1.0:
        return None
    beta = math.acos(cb)
    kz_out = ka * math.cos(alpha) - kb * cb
    kx = ka * math.sin(alpha) - kb * math.sin(beta)
    return DriveGeometry(alpha, beta, ka, kb, kz_out, kx, p_ratio)


def feasibility_map(p_ratio: float, alphas: np.ndarray, spacings: np.ndarray, omega_g: float = 0.1) -> np.ndarray:
    """Boolean [len(alphas), len(spacings)] grid of solvable drive geometries."""
    out = np.zeros((len(alphas), len(spacings)), dtype=bool)
    for i, al in enumerate(alphas):
        for j, a in enumerate(spacings):
            out[i, j] = solve_drive_geometry(a, al, p_ratio, None, omega_g) is not None
    return out
