"""Free-space Green's tensor and pairwise dipole couplings.

Units: Γ₀ = 1, λ_e = 1, k_e = 2π. The complex coupling between atoms i ≠ j is

    J_ij − iΓ_ij/2 = −(3π/k_e) d̂·G⁰(R_i − R_j)·d̂,

which gives Γ_ii = 1 for the self term. Couplings are stored as a coefficient
matrix C with H = Σ_ij C_ji σ⁺_j σ⁻_i, so the single-excitation block of H is C.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError, RegimeError

K_E = 2.0 * math.pi
GAMMA0 = 1.0
# −(μ₀ω²|d|²/ħ) in units where the single-atom decay rate is 1
COUPLING_PREFACTOR = -3.0 * math.pi / K_E

_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class PhysicalScales:
    """Fixed unit system. Present for bookkeeping; nothing here is tunable."""

    gamma0: float = GAMMA0
    k_e: float = K_E
    epsilon_sq: float = 1.0

    def __post_init__(self):
        if self.gamma0 != GAMMA0 or self.k_e != K_E:
            raise ConfigError("unit system is fixed: gamma0 = 1, k_e = 2*pi")


def axis_index(label) -> int:
    if isinstance(label, (int, np.integer)):
        if not 0 <= int(label) <= 2:
            raise ConfigError(f"axis index out of range: {label}")
        return int(label)
    try:
        return _AXES[str(label).lower()]
    except KeyError:
        raise ConfigError(f"unknown axis {label!r}; expected x, y or z") from None


def unit_vector(label) -> np.ndarray:
    v = np.zeros(3)
    v[axis_index(label)] = 1.0
    return v


@dataclass(frozen=True)
class LatticeSpec:
    """One or two parallel 1D arrays along z.

    Array A sits at (0, 0, j a) and array B at (0, l, j a), j = 1..N. Site
    ordering everywhere is A_1..A_N followed by B_1..B_N.
    """

    n_atoms_per_array: int
    n_arrays: int = 1
    spacing_a: float = 0.25
    separation_l: Optional[float] = None
    polarization: str = "z"
    detuning_b: float = 0.0

    def __post_init__(self):
        if int(self.n_atoms_per_array) != self.n_atoms_per_array or self.n_atoms_per_array < 1:
            raise ConfigError("n_atoms_per_array must be a positive integer")
        if self.n_arrays not in (1, 2):
            raise ConfigError("n_arrays must be 1 or 2")
        if not self.spacing_a > 0:
            raise ConfigError("spacing_a must be positive")
        if self.n_arrays == 2:
            if self.separation_l is None or not self.separation_l > 0:
                raise ConfigError("two arrays need a positive separation_l")
        elif self.separation_l is not None:
            raise ConfigError("separation_l is only meaningful for two arrays")
        if self.n_arrays == 1 and self.detuning_b != 0.0:
            raise ConfigError("detuning_b requires a second array")
        axis_index(self.polarization)
        if not self.subwavelength:
            warnings.warn(
                f"spacing a = {self.spacing_a} is not subwavelength (a >= 1/2)",
                stacklevel=3,
            )

    @property
    def subwavelength(self) -> bool:
        return self.spacing_a < 0.5

    @property
    def n_sites(self) -> int:
        return self.n_arrays * self.n_atoms_per_array

    @property
    def dipole(self) -> np.ndarray:
        return unit_vector(self.polarization)

    @property
    def array_index(self) -> np.ndarray:
        """0 for sites of array A, 1 for array B."""
        return np.repeat(np.arange(self.n_arrays), self.n_atoms_per_array)

    @property
    def site_numbers(self) -> np.ndarray:
        """j = 1..N within each array."""
        return np.tile(np.arange(1, self.n_atoms_per_array + 1), self.n_arrays)

    def positions(self) -> np.ndarray:
        n = self.n_atoms_per_array
        z = self.spacing_a * np.arange(1, n + 1)
        pos = np.zeros((self.n_sites, 3))
        pos[:, 2] = np.tile(z, self.n_arrays)
        if self.n_arrays == 2:
            pos[n:, 1] = self.separation_l
        return pos

    def with_n(self, n_atoms: int) -> "LatticeSpec":
        return LatticeSpec(n_atoms, self.n_arrays, self.spacing_a, self.separation_l,
                           self.polarization, self.detuning_b)


@dataclass
class CouplingMatrix:
    """Coherent part J and dissipative part Γ, both in units of Γ₀.

    For pinned and averaged atoms both are real symmetric. Individual sampled
    configurations carry the Raman phase and are Hermitian instead.
    """

    j_part: np.ndarray
    gamma_part: np.ndarray
    lattice: Optional[LatticeSpec] = None
    stderr_j: Optional[np.ndarray] = field(default=None, repr=False)
    stderr_gamma: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_sites(self) -> int:
        return self.j_part.shape[0]

    def complex(self) -> np.ndarray:
        """Coefficient matrix C = J − iΓ/2."""
        return self.j_part - 0.5j * self.gamma_part

    @classmethod
    def from_complex(cls, c: np.ndarray, lattice=None, **kw) -> "CouplingMatrix":
        c = np.asarray(c, dtype=complex)
        j = 0.5 * (c + c.conj().T)
        g = 1j * (c - c.conj().T)
        if np.allclose(c, c.T, rtol=0, atol=1e-14 * max(1.0, np.abs(c).max())):
            j, g = j.real, g.real
        return cls(j, g, lattice, **kw)


# ---------------------------------------------------------------------------
# Green's tensor
# ---------------------------------------------------------------------------
# G⁰_ab(r) = f(r) δ_ab + h(r) r_a r_b, with f and h of the form e^{ikr} Σ c_n r^{-n}.
# Radial derivatives are taken exactly on the coefficient lists.

def _laurent(k):
    inv4pi = 1.0 / (4.0 * math.pi)
    f = {1: inv4pi, 2: 1j * inv4pi / k, 3: -inv4pi / k**2}
    h = {3: -inv4pi, 4: -3j * inv4pi / k, 5: 3.0 * inv4pi / k**2}
    return f, h


def _d_laurent(c, k):
    out = {}
    for n, v in c.items():
        out[n] = out.get(n, 0) + 1j * k * v
        out[n + 1] = out.get(n + 1, 0) - n * v
    return out


def _eval_laurent(c, r, phase):
    s = 0.0
    for n, v in c.items():
        s = s + v * r ** (-n)
    return phase * s


def _radial(r, k, order):
    f, h = _laurent(k)
    phase = np.exp(1j * k * r)
    out = [(_eval_laurent(f, r, phase), _eval_laurent(h, r, phase))]
    for _ in range(order):
        f, h = _d_laurent(f, k), _d_laurent(h, k)
        out.append((_eval_laurent(f, r, phase), _eval_laurent(h, r, phase)))
    return out


def _norms(r):
    r = np.asarray(r, dtype=float)
    d = np.sqrt(np.sum(r * r, axis=-1))
    if np.any(d == 0):
        raise DomainError("Green's tensor is singular at zero displacement")
    return r, d


def green_dyadic(r, k: float = K_E) -> np.ndarray:
    """Full 3×3 tensor G⁰(r); ``r`` may carry leading batch dimensions."""
    r, d = _norms(r)
    ((f, h),) = _radial(d, k, 0)
    eye = np.eye(3)
    return f[..., None, None] * eye + h[..., None, None] * r[..., :, None] * r[..., None, :]


def green_tensor(r, component=None, k: float = K_E):
    """G⁰_αβ(r) for ``component = (α, β)`` (labels or indices); full tensor if None."""
    g = green_dyadic(r, k)
    if component is None:
        return g
    a, b = (axis_index(c) for c in component)
    return g[..., a, b]


def dipole_green(r, d, k: float = K_E):
    """Scalar d̂·G⁰(r)·d̂, vectorized over leading dims of ``r``."""
    r, dist = _norms(r)
    d = np.asarray(d, dtype=float)
    ((f, h),) = _radial(dist, k, 0)
    u = r @ d
    return f + h * u * u


def dipole_green_derivatives(r, d, k: float = K_E):
    """Value, gradient (..., 3) and Hessian (..., 3, 3) of d̂·G⁰(r)·d̂ in r."""
    r, dist = _norms(r)
    d = np.asarray(d, dtype=float)
    (f, h), (f1, h1), (f2, h2) = _radial(dist, k, 2)
    u = r @ d
    n = r / dist[..., None]
    value = f + h * u * u
    radial1 = f1 + h1 * u * u
    grad = radial1[..., None] * n + (2.0 * h * u)[..., None] * d
    eye = np.eye(3)
    nn = n[..., :, None] * n[..., None, :]
    radial2 = f2 + h2 * u * u
    hess = (radial2[..., None, None] * nn
            + (radial1 / dist)[..., None, None] * (eye - nn)
            + (2.0 * h1 * u)[..., None, None] * (n[..., :, None] * d + d[:, None] * n[..., None, :])
            + (2.0 * h)[..., None, None] * np.outer(d, d))
    return value, grad, hess


def pair_coupling(r, d, k: float = K_E):
    """Complex coupling J − iΓ/2 between two atoms separated by ``r``."""
    return COUPLING_PREFACTOR * dipole_green(r, d, k)


# ---------------------------------------------------------------------------
# Coupling matrices
# ---------------------------------------------------------------------------

def pinned_coefficients(lattice: LatticeSpec) -> np.ndarray:
    pos = lattice.positions()
    n = len(pos)
    c = np.full((n, n), -0.5j * GAMMA0, dtype=complex)
    iu, ju = np.triu_indices(n, 1)
    vals = pair_coupling(pos[iu] - pos[ju], lattice.dipole)
    c[iu, ju] = vals
    c[ju, iu] = vals
    np.fill_diagonal(c, -0.5j * GAMMA0)
    return c


def pinned_couplings(lattice: LatticeSpec) -> CouplingMatrix:
    c = pinned_coefficients(lattice)
    cm = CouplingMatrix(c.real.copy(), -2.0 * c.imag, lattice)
    np.fill_diagonal(cm.j_part, 0.0)
    np.fill_diagonal(cm.gamma_part, GAMMA0)
    return cm


def sampled_coefficients(lattice: LatticeSpec, displacements, raman_direction=(1.0, 0.0, 0.0)):
    """C_ji = g(R_j + r_j − R_i − r_i) e^{i k_L·(r_j − r_i)}; batch dims allowed."""
    disp = np.asarray(displacements, dtype=float)
    pos = lattice.positions() + disp
    kl = K_E * _normalized(raman_direction)
    n = lattice.n_sites
    sep = pos[..., :, None, :] - pos[..., None, :, :]
    dist = np.sqrt(np.sum(sep * sep, axis=-1))
    iu = np.triu_indices(n, 1)
    close = dist[..., iu[0], iu[1]] == 0
    if np.any(close):
        idx = np.argwhere(close)[0][-1]
        raise DomainError(f"displaced atoms {iu[0][idx]} and {iu[1][idx]} coincide")
    eye = np.eye(n, dtype=bool)
    sep = np.where(eye[..., None], 1.0, sep)
    g = pair_coupling(sep, lattice.dipole)
    phase = np.exp(1j * (disp @ kl))
    c = phase[..., :, None] * g * phase[..., None, :].conj()
    c[..., eye] = -0.5j * GAMMA0
    return c


def sampled_couplings(lattice: LatticeSpec, displacements, raman_direction=(1.0, 0.0, 0.0)) -> CouplingMatrix:
    """Couplings of one displaced configuration."""
    disp = np.asarray(displacements, dtype=float)
    if disp.shape != (lattice.n_sites, 3):
        raise ConfigError(f"displacements must have shape ({lattice.n_sites}, 3)")
    return CouplingMatrix.from_complex(sampled_coefficients(lattice, disp, raman_direction), lattice)


def _normalized(v):
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ConfigError("raman_direction must be non-zero")
    return v / nv


def realization_rng(seed: int, index: int) -> np.random.Generator:
    """Independent deterministic substream for one Monte-Carlo realization."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),)))


def motion_averaged_couplings(
    lattice: LatticeSpec,
    sigma: float,
    n_samples: int = 100,
    seed: int = 0,
    raman_direction: Sequence[float] = (1.0, 0.0, 0.0),
    antithetic: bool = True,
    chunk: int = 256,
) -> CouplingMatrix:
    """Monte-Carlo average of sampled couplings over Gaussian displacements.

    Each realization i draws all displacements from ``realization_rng(seed, i)``,
    so the result does not depend on chunking. With ``antithetic`` (default)
    every draw is paired with its mirror image along k_L. That keeps the
    estimator unbiased and makes the averaged J and Γ exactly real. The
    mirror pairing is only used when k_L is perpendicular to the array plane,
    where it is a symmetry of the couplings.

    Standard errors of the mean are returned in ``stderr_j``/``stderr_gamma``.
    """
    if sigma < 0:
        raise ConfigError("sigma must be non-negative")
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    n = lattice.n_sites
    if sigma == 0:
        cm = pinned_couplings(lattice)
        cm.stderr_j = np.zeros((n, n))
        cm.stderr_gamma = np.zeros((n, n))
        return cm
    kl_dir = _normalized(raman_direction)
    mirror = antithetic and abs(kl_dir[0]) == 1.0
    sum_j = np.zeros((n, n), dtype=complex)
    sum_g = np.zeros((n, n), dtype=complex)
    sq_j = np.zeros((n, n))
    sq_g = np.zeros((n, n))
    for start in range(0, n_samples, chunk):
        idx = range(start, min(start + chunk, n_samples))
        disp = np.stack([realization_rng(seed, i).normal(0.0, sigma, size=(n, 3)) for i in idx])
        c = sampled_coefficients(lattice, disp, raman_direction)
        if mirror:
            flipped = disp.copy()
            flipped[..., 0] *= -1.0
            c = 0.5 * (c + sampled_coefficients(lattice, flipped, raman_direction))
        ch = np.swapaxes(c.conj(), -1, -2)
        jj = 0.5 * (c + ch)
        gg = 1j * (c - ch)
        sum_j += jj.sum(axis=0)
        sum_g += gg.sum(axis=0)
        sq_j += (np.abs(jj) ** 2).sum(axis=0)
        sq_g += (np.abs(gg) ** 2).sum(axis=0)
    mean_j = sum_j / n_samples
    mean_g = sum_g / n_samples
    if n_samples > 1:
        var_j = np.maximum(sq_j / n_samples - np.abs(mean_j) ** 2, 0.0) * n_samples / (n_samples - 1)
        var_g = np.maximum(sq_g / n_samples - np.abs(mean_g) ** 2, 0.0) * n_samples / (n_samples - 1)
        se_j, se_g = np.sqrt(var_j / n_samples), np.sqrt(var_g / n_samples)
    else:
        se_j = np.full((n, n), np.inf)
        se_g = np.full((n, n), np.inf)
    if mirror:
        mean_j, mean_g = mean_j.real, mean_g.real
    np.fill_diagonal(mean_j, 0.0)
    np.fill_diagonal(mean_g, GAMMA0)
    np.fill_diagonal(se_j, 0.0)
    np.fill_diagonal(se_g, 0.0)
    return CouplingMatrix(mean_j, mean_g, lattice, se_j, se_g)


MAX_ETA_ANALYTIC = 0.3


def analytic_averaged_couplings(lattice: LatticeSpec, sigma: float, noise_factor: float = 2.0) -> CouplingMatrix:
    """Lamb-Dicke limit of the position average: off-diagonals × (1 − c σ²k_e²).

    ``noise_factor`` is c (2 by default); it is exposed only for sensitivity checks.
    """
    if sigma < 0:
        raise ConfigError("sigma must be non-negative")
    eta = sigma * K_E
    if eta >= MAX_ETA_ANALYTIC:
        raise RegimeError(f"sigma*k_e = {eta:.3g} >= {MAX_ETA_ANALYTIC}: outside the Lamb-Dicke regime")
    cm = pinned_couplings(lattice)
    scale = 1.0 - noise_factor * eta * eta
    off = ~np.eye(cm.n_sites, dtype=bool)
    cm.j_part[off] *= scale
    cm.gamma_part[off] *= scale
    return cm
