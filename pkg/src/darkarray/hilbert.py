"""Truncated excitation bases and operator assembly.

States are sets of excited sites. The basis is ordered ground state first,
then singles ascending, pairs lexicographic, and so on up to ``n_max``.

Drives are written in the *real gauge* by default. There the basis states
of the n-excitation manifold carry an extra phase i^n relative to the bare
spin basis, which turns iΩ Σ_j s_j (σ⁺_j − σ⁻_j) into Ω Σ_j s_j (σ⁺_j + σ⁻_j).
Both forms describe the same physics. The real gauge keeps H + V complex
symmetric, so left eigenvectors come for free. ``gauge="bare"`` returns the
literal form.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .couplings import (
    COUPLING_PREFACTOR,
    GAMMA0,
    K_E,
    CouplingMatrix,
    LatticeSpec,
    axis_index,
    dipole_green_derivatives,
    pinned_couplings,
)
from .errors import ConfigError, RegimeError


@dataclass(frozen=True)
class ExcitationBasis:
    n_sites: int
    n_max: int
    states: Tuple[Tuple[int, ...], ...]
    index_of: Dict[Tuple[int, ...], int] = field(repr=False, compare=False)

    @property
    def dimension(self) -> int:
        return len(self.states)

    @property
    def excitation_numbers(self) -> np.ndarray:
        return np.array([len(s) for s in self.states])

    def manifold_slice(self, m: int) -> slice:
        start = sum(math.comb(self.n_sites, k) for k in range(m))
        return slice(start, start + math.comb(self.n_sites, m))

    def state_vector(self, amplitudes: Dict[Tuple[int, ...], complex]) -> np.ndarray:
        v = np.zeros(self.dimension, dtype=complex)
        for s, a in amplitudes.items():
            v[self.index_of[tuple(sorted(s))]] += a
        return v

    def single(self, amplitudes) -> np.ndarray:
        """Embed single-excitation amplitudes (length n_sites)."""
        v = np.zeros(self.dimension, dtype=complex)
        v[self.manifold_slice(1)] = amplitudes
        return v

    def ground(self) -> np.ndarray:
        v = np.zeros(self.dimension, dtype=complex)
        v[0] = 1.0
        return v


def basis_dimension(n_sites: int, n_max: int) -> int:
    return sum(math.comb(n_sites, m) for m in range(n_max + 1))


def build_basis(n_sites: int, n_max: int = 2) -> ExcitationBasis:
    if n_sites < 1:
        raise ConfigError("n_sites must be >= 1")
    if not 1 <= n_max <= n_sites:
        raise ConfigError(f"need 1 <= n_max <= n_sites, got n_max={n_max}, n_sites={n_sites}")
    states = [()]
    for m in range(1, n_max + 1):
        states.extend(itertools.combinations(range(n_sites), m))
    states = tuple(states)
    return ExcitationBasis(n_sites, n_max, states, {s: i for i, s in enumerate(states)})


@dataclass
class NonHermitianOperator:
    """Operator on an excitation basis (optionally tensored with phonons).

    ``matrix`` is a dense ndarray or a scipy sparse matrix.
    """

    basis: ExcitationBasis
    matrix: object
    meta: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    @property
    def hermitian_part(self):
        m = self.matrix
        return 0.5 * (m + m.conj().T)

    @property
    def antihermitian_part(self):
        m = self.matrix
        return 0.5 * (m - m.conj().T)

    def block(self, m: int, n: int) -> np.ndarray:
        """Excitation-manifold block (m ← n); internal-only operators."""
        rs, cs = self.basis.manifold_slice(m), self.basis.manifold_slice(n)
        blk = self.matrix[rs, cs]
        return blk.toarray() if sp.issparse(blk) else np.asarray(blk)

    def symmetry_defect(self) -> float:
        d = self.matrix - self.matrix.T
        return float(abs(d).max()) if d.shape[0] else 0.0

    def is_complex_symmetric(self, tol: float = 1e-12) -> bool:
        scale = max(1.0, float(abs(self.matrix).max()))
        return self.symmetry_defect() <= tol * scale

    def __add__(self, other: "NonHermitianOperator") -> "NonHermitianOperator":
        if other.dimension != self.dimension:
            raise ConfigError("operator dimensions differ")
        return NonHermitianOperator(self.basis, self.matrix + other.matrix, {**self.meta, **other.meta})


# ---------------------------------------------------------------------------
# Hamiltonians
# ---------------------------------------------------------------------------

def _hop_triplets(basis: ExcitationBasis, c: np.ndarray, diag_extra: np.ndarray, frame: float):
    """COO data for Σ C_ji σ⁺_j σ⁻_i + per-site energies − frame·N_e."""
    n = basis.n_sites
    rows, cols, vals = [], [], []
    idx = basis.index_of
    cdiag = np.diag(c) + diag_extra
    for col, s in enumerate(basis.states):
        m = len(s)
        if m == 0:
            continue
        occ = set(s)
        rows.append(col)
        cols.append(col)
        vals.append(sum(cdiag[i] for i in s) - frame * m)
        for p, i in enumerate(s):
            rest = s[:p] + s[p + 1:]
            for j in range(n):
                if j in occ:
                    continue
                cji = c[j, i]
                if cji == 0:
                    continue
                new = tuple(sorted(rest + (j,)))
                rows.append(idx[new])
                cols.append(col)
                vals.append(cji)
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(vals, dtype=complex)


def site_energies(couplings: CouplingMatrix, detuning_b: Optional[float]) -> np.ndarray:
    n = couplings.n_sites
    lat = couplings.lattice
    if detuning_b is None:
        detuning_b = lat.detuning_b if lat is not None else 0.0
    extra = np.zeros(n)
    if detuning_b:
        if lat is None or lat.n_arrays != 2:
            raise ConfigError("detuning_b needs a two-array lattice")
        extra[lat.array_index == 1] = detuning_b
    return extra


def coefficient_matrix(couplings: CouplingMatrix, detuning_b: Optional[float] = None,
                       frame_energy: float = 0.0) -> np.ndarray:
    """Single-excitation block: C + diag(detuning on B) − frame."""
    c = couplings.complex().astype(complex)
    c[np.diag_indices_from(c)] += site_energies(couplings, detuning_b) - frame_energy
    return c


def assemble_hamiltonian(
    couplings: CouplingMatrix,
    basis: ExcitationBasis,
    detuning_b: Optional[float] = None,
    frame_energy: float = 0.0,
    sparse: bool = False,
) -> NonHermitianOperator:
    """H = Σ_ij C_ji σ⁺_j σ⁻_i + δ N_B − ω_frame N_e on the truncated basis.

    ``detuning_b`` defaults to the lattice value. ``frame_energy`` is the
    rotating-frame reference per excitation, so the n-excitation diagonal
    shifts by −n·frame_energy.
    """
    if couplings.n_sites != basis.n_sites:
        raise ConfigError(f"couplings have {couplings.n_sites} sites, basis has {basis.n_sites}")
    c = couplings.complex()
    extra = site_energies(couplings, detuning_b)
    r, cidx, v = _hop_triplets(basis, c, extra, frame_energy)
    mat = sp.csr_matrix((v, (r, cidx)), shape=(basis.dimension,) * 2)
    meta = {"frame_energy": frame_energy, "two_excitation_frame": 2 * frame_energy}
    return NonHermitianOperator(basis, mat if sparse else mat.toarray(), meta)


# ---------------------------------------------------------------------------
# Drive
# ---------------------------------------------------------------------------

def band_edge_momentum(n_atoms: int, spacing_a: float) -> float:
    """Largest quasi-momentum of the open-chain grid k_m = π m / (a (N+1)).

    The band edge π/a itself gives sin(π j) = 0 on every site of a finite
    chain, so the finite-N dark mode and its drive use this value instead.
    """
    return math.pi * n_atoms / (spacing_a * (n_atoms + 1))


def dark_mode_ansatz(n_atoms: int, k: Optional[float] = None, spacing_a: float = 1.0) -> np.ndarray:
    """√(2/(N+1)) sin(k z_j) with z_j = a j; k defaults to the band-edge grid value."""
    if k is None:
        k = band_edge_momentum(n_atoms, spacing_a)
    j = np.arange(1, n_atoms + 1)
    return math.sqrt(2.0 / (n_atoms + 1)) * np.sin(k * spacing_a * j)


@dataclass(frozen=True)
class DriveSpec:
    """Raman drive Ω₀ Σ_j sin(K_z z_j) on the driven arrays.

    ``phase_profile`` holds sin(K_z a j) for j = 1..N; build it with
    ``DriveSpec.for_lattice``. ``k_x`` is the transverse momentum and only
    matters for moving atoms.
    """

    rabi_omega0: float
    k_z: float
    detuning_d: float = 0.0
    k_x: float = 0.0
    phase_profile: Tuple[float, ...] = ()
    spacing_a: Optional[float] = None

    @classmethod
    def for_lattice(cls, lattice: LatticeSpec, rabi_omega0: float, k_z: Optional[float] = None,
                    detuning_d: float = 0.0, k_x: float = 0.0) -> "DriveSpec":
        if k_z is None:
            k_z = band_edge_momentum(lattice.n_atoms_per_array, lattice.spacing_a)
        j = np.arange(1, lattice.n_atoms_per_array + 1)
        prof = tuple(float(v) for v in np.sin(k_z * lattice.spacing_a * j))
        return cls(float(rabi_omega0), float(k_z), float(detuning_d), float(k_x), prof, lattice.spacing_a)

    def with_omega(self, rabi_omega0: float) -> "DriveSpec":
        return DriveSpec(float(rabi_omega0), self.k_z, self.detuning_d, self.k_x, self.phase_profile, self.spacing_a)


def drive_vector(drive: DriveSpec, n_sites: int, arrays_driven: str = "both") -> np.ndarray:
    """Per-site amplitudes s_j over all sites (zeros on undriven arrays)."""
    prof = np.asarray(drive.phase_profile, dtype=float)
    n = len(prof)
    if n == 0:
        raise ConfigError("DriveSpec has no phase_profile; use DriveSpec.for_lattice")
    if n_sites == n:
        return prof.copy()
    if n_sites != 2 * n:
        raise ConfigError(f"phase profile of length {n} does not fit {n_sites} sites")
    s = np.zeros(n_sites)
    if arrays_driven in ("A", "both"):
        s[:n] = prof
    if arrays_driven in ("B", "both"):
        s[n:] = prof
    if arrays_driven not in ("A", "B", "both"):
        raise ConfigError("arrays_driven must be A, B or both")
    return s


def _raise_triplets(basis: ExcitationBasis, s: np.ndarray):
    """COO data of Σ_j s_j σ⁺_j (from each state to states with one more excitation)."""
    rows, cols, vals = [], [], []
    idx = basis.index_of
    for col, st in enumerate(basis.states):
        if len(st) >= basis.n_max:
            continue
        occ = set(st)
        for j in np.flatnonzero(s):
            if j in occ:
                continue
            rows.append(idx[tuple(sorted(st + (int(j),)))])
            cols.append(col)
            vals.append(s[j])
    return rows, cols, vals


def raising_operator(basis: ExcitationBasis, s: np.ndarray):
    r, c, v = _raise_triplets(basis, np.asarray(s, dtype=float))
    return sp.csr_matrix((np.array(v, dtype=complex), (r, c)), shape=(basis.dimension,) * 2)


def assemble_drive(drive: DriveSpec, basis: ExcitationBasis, arrays_driven: str = "both",
                   gauge: str = "real", sparse: bool = False) -> NonHermitianOperator:
    """Drive operator on the basis; see module docstring for the gauge choice."""
    s = drive_vector(drive, basis.n_sites, arrays_driven)
    up = raising_operator(basis, s)
    if gauge == "real":
        mat = drive.rabi_omega0 * (up + up.T)
    elif gauge == "bare":
        mat = 1j * drive.rabi_omega0 * (up - up.T)
    else:
        raise ConfigError("gauge must be 'real' or 'bare'")
    mat = sp.csr_matrix(mat)
    return NonHermitianOperator(basis, mat if sparse else mat.toarray(), {"gauge": gauge})


def gauge_phases(basis: ExcitationBasis) -> np.ndarray:
    """Amplitude conversion factors: a_real = a_bare · gauge_phases."""
    return (-1j) ** basis.excitation_numbers


# ---------------------------------------------------------------------------
# Lamb-Dicke (phonon-coupled) model
# ---------------------------------------------------------------------------

MAX_LD_SITES = 4
MAX_PHONON_DIM = 3
MAX_LD_DIMENSION = 60000


def _mode_ops(d: int):
    b = np.diag(np.sqrt(np.arange(1, d + 1)), 1)  # (d+1)×(d+1) annihilator
    x_big = b + b.T
    x = x_big[:d, :d]
    x2 = (x_big @ x_big)[:d, :d]  # exact ⟨m|(b+b†)²|n⟩, not the square of the truncation
    num = np.diag(np.arange(d, dtype=float))
    return {"x": x, "x2": x2, "n": num}


@dataclass
class LambDickeTerms:
    """Internal operators attached to phonon factors.

    ``terms`` maps a key, a sorted tuple of (mode, op) with op in {"x", "x2"},
    to an internal sparse matrix. The empty key is the motion-free part.
    ``modes`` lists (site, axis) pairs.
    """

    basis: ExcitationBasis
    modes: list
    terms: dict
    r0: float


def _add(terms, key, op):
    key = tuple(sorted(key))
    terms[key] = terms[key] + op if key in terms else op


def _hop_ops(basis: ExcitationBasis):
    n = basis.n_sites
    ops = {}
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            c = np.zeros((n, n))
            c[j, i] = 1.0
            r, cc, v = _hop_triplets(basis, c, np.zeros(n), 0.0)
            keep = r != cc
            ops[(j, i)] = sp.csr_matrix((v[keep], (r[keep], cc[keep])), shape=(basis.dimension,) * 2)
    return ops


def lamb_dicke_terms(
    lattice: LatticeSpec,
    drive: Optional[DriveSpec],
    r0: float,
    basis: ExcitationBasis,
    directions: Sequence[str] = ("x", "z"),
    arrays_driven: str = "both",
    raman_direction: Sequence[float] = (1.0, 0.0, 0.0),
    frame_energy: float = 0.0,
) -> LambDickeTerms:
    """Second-order expansion of couplings and drive in the displacements r̂ = r0 (b + b†)."""
    axes = [axis_index(a) for a in directions]
    if len(set(axes)) != len(axes):
        raise ConfigError("duplicate motional direction")
    n = lattice.n_sites
    modes = [(site, ax) for site in range(n) for ax in axes]
    mode_id = {m: k for k, m in enumerate(modes)}
    kl = K_E * np.asarray(raman_direction, float) / np.linalg.norm(raman_direction)
    pos = lattice.positions()

    terms: dict = {}
    base = assemble_hamiltonian(pinned_couplings(lattice), basis, None, frame_energy, sparse=True).matrix
    _add(terms, (), base)
    hops = _hop_ops(basis)
    for (j, i), h in hops.items():
        g, grad, hess = dipole_green_derivatives(pos[j] - pos[i], lattice.dipole)
        g, grad, hess = COUPLING_PREFACTOR * g, COUPLING_PREFACTOR * grad, COUPLING_PREFACTOR * hess
        d1 = grad + 1j * kl * g
        d2 = hess + 1j * (np.outer(kl, grad) + np.outer(grad, kl)) - np.outer(kl, kl) * g
        for a in axes:
            if d1[a] != 0:
                _add(terms, ((mode_id[(j, a)], "x"),), r0 * d1[a] * h)
                _add(terms, ((mode_id[(i, a)], "x"),), -r0 * d1[a] * h)
        for a in axes:
            for b in axes:
                coef = 0.5 * r0 * r0 * d2[a, b]
                if coef == 0:
                    continue
                for s1, p in ((1, j), (-1, i)):
                    for s2, q in ((1, j), (-1, i)):
                        ma, mb = mode_id[(p, a)], mode_id[(q, b)]
                        key = ((ma, "x2"),) if ma == mb else ((ma, "x"), (mb, "x"))
                        _add(terms, key, s1 * s2 * coef * h)

    if drive is not None and drive.rabi_omega0 != 0:
        s = drive_vector(drive, n, arrays_driven)
        kvec = np.array([drive.k_x, 0.0, drive.k_z])
        phi = drive.k_z * lattice.spacing_a * lattice.site_numbers
        om = drive.rabi_omega0
        for site in np.flatnonzero(s):
            sx = np.zeros(n)
            sx[site] = 1.0
            up = raising_operator(basis, sx)
            dj = up + up.T
            _add(terms, (), om * math.sin(phi[site]) * dj)
            for a in axes:
                if kvec[a] != 0:
                    _add(terms, ((mode_id[(site, a)], "x"),), om * math.cos(phi[site]) * kvec[a] * r0 * dj)
            for a in axes:
                for b in axes:
                    coef = -0.5 * om * math.sin(phi[site]) * kvec[a] * kvec[b] * r0 * r0
                    if coef == 0:
                        continue
                    ma, mb = mode_id[(site, a)], mode_id[(site, b)]
                    key = ((ma, "x2"),) if ma == mb else ((ma, "x"), (mb, "x"))
                    _add(terms, key, coef * dj)
    return LambDickeTerms(basis, modes, terms, r0)


def _phonon_factor(key, n_modes: int, d: int):
    ops = _mode_ops(d)
    factors = [sp.identity(d, format="csr")] * n_modes
    for m, name in key:
        factors = list(factors)
        factors[m] = sp.csr_matrix(ops[name])
    out = factors[0]
    for f in factors[1:]:
        out = sp.kron(out, f, format="csr")
    return out


def phonon_number_operator(n_modes: int, d: int):
    num = sp.csr_matrix(_mode_ops(d)["n"])
    eye = sp.identity(d, format="csr")
    total = sp.csr_matrix((d ** n_modes, d ** n_modes))
    for m in range(n_modes):
        f = [eye] * n_modes
        f[m] = num
        out = f[0]
        for g in f[1:]:
            out = sp.kron(out, g, format="csr")
        total = total + out
    return total


def assemble_lamb_dicke_system(
    lattice: LatticeSpec,
    drive: Optional[DriveSpec],
    r0: float,
    omega_T: float,
    phonon_dim: int = 2,
    n_max: int = 2,
    directions: Sequence[str] = ("x", "z"),
    arrays_driven: str = "both",
    frame_energy: float = 0.0,
) -> NonHermitianOperator:
    """Internal ⊗ phonon operator to second order in η, sparse.

    Index layout: internal_index * phonon_dim**n_modes + phonon_index, with
    phonon_index the mixed-radix Fock label (first mode most significant).
    """
    n = lattice.n_sites
    if n > MAX_LD_SITES:
        raise RegimeError(f"Lamb-Dicke model limited to {MAX_LD_SITES} atoms, got {n}")
    if not 1 <= phonon_dim <= MAX_PHONON_DIM:
        raise RegimeError(f"phonon_dim must be in 1..{MAX_PHONON_DIM}")
    basis = build_basis(n, min(n_max, n))
    lt = lamb_dicke_terms(lattice, drive, r0, basis, directions, arrays_driven, frame_energy=frame_energy)
    n_modes = len(lt.modes)
    n_ph = phonon_dim ** n_modes
    if basis.dimension * n_ph > MAX_LD_DIMENSION:
        raise RegimeError(f"Lamb-Dicke dimension {basis.dimension * n_ph} exceeds {MAX_LD_DIMENSION}")
    mat = omega_T * sp.kron(sp.identity(basis.dimension, format="csr"),
                            phonon_number_operator(n_modes, phonon_dim), format="csr")
    for key, op in lt.terms.items():
        mat = mat + sp.kron(op, _phonon_factor(key, n_modes, phonon_dim), format="csr")
    meta = {"modes": lt.modes, "phonon_dim": phonon_dim, "n_phonon_states": n_ph,
            "r0": r0, "omega_T": omega_T, "directions": tuple(directions), "frame_energy": frame_energy}
    return NonHermitianOperator(basis, sp.csr_matrix(mat), meta)


def vacuum_block(op: NonHermitianOperator) -> np.ndarray:
    """Internal operator ⟨0_ph| op |0_ph⟩ of a Lamb-Dicke system."""
    n_ph = op.meta["n_phonon_states"]
    idx = np.arange(op.basis.dimension) * n_ph
    blk = op.matrix[idx][:, idx]
    return blk.toarray() if sp.issparse(blk) else np.asarray(blk)


def phonon_embed(op: NonHermitianOperator, internal_vector: np.ndarray) -> np.ndarray:
    """Internal state ⊗ phonon vacuum."""
    n_ph = op.meta["n_phonon_states"]
    v = np.zeros(op.dimension, dtype=complex)
    v[np.arange(op.basis.dimension) * n_ph] = internal_vector
    return v


def mean_phonon_number(op: NonHermitianOperator, states: np.ndarray) -> np.ndarray:
    """⟨ψ|N_ph|ψ⟩/⟨ψ|ψ⟩ for each row of ``states``."""
    n_modes = len(op.meta["modes"])
    d = op.meta["phonon_dim"]
    occ = np.asarray(phonon_number_operator(n_modes, d).diagonal()).real
    occ_full = np.tile(occ, op.basis.dimension)
    p = np.abs(np.atleast_2d(states)) ** 2
    norm = p.sum(axis=1)
    return (p @ occ_full) / np.where(norm > 0, norm, 1.0)


MIN_TRAP_RATIO = 10.0


def adiabatic_eliminate_motion(
    lattice: LatticeSpec,
    drive: Optional[DriveSpec],
    r0: float,
    omega_T: float,
    n_max: int = 2,
    directions: Sequence[str] = ("x", "z"),
    arrays_driven: str = "both",
    frame_energy: float = 0.0,
) -> NonHermitianOperator:
    """Internal-only effective Hamiltonian with motion in its ground state.

    H_eff = P(H⁰ + H²)P − Σ_m X_m (ω_T + P H₀ P)⁻¹ X_m, where X_m is the
    internal operator multiplying (b_m + b_m†) in the first-order terms
    (couplings and drive together). The three motion-mediated terms follow
    from expanding this product.
    """
    if omega_T / GAMMA0 < MIN_TRAP_RATIO:
        raise RegimeError(f"omega_T/Gamma0 = {omega_T} < {MIN_TRAP_RATIO}: adiabatic elimination invalid")
    basis = build_basis(lattice.n_sites, min(n_max, lattice.n_sites))
    lt = lamb_dicke_terms(lattice, drive, r0, basis, directions, arrays_driven, frame_energy=frame_energy)
    dim = basis.dimension
    h0 = assemble_hamiltonian(pinned_couplings(lattice), basis, None, frame_energy).matrix
    heff = np.zeros((dim, dim), dtype=complex)
    first = {}
    for key, op in lt.terms.items():
        if all(name == "x2" for _, name in key):
            heff += op.toarray()  # ⟨0|(b+b†)²|0⟩ = 1, ⟨0|1⟩ = 1
        elif len(key) == 1:
            first[key[0][0]] = op.toarray()
    denom = np.linalg.inv(omega_T * np.eye(dim) + h0)
    for xm in first.values():
        heff -= xm @ denom @ xm
    meta = {"r0": r0, "omega_T": omega_T, "directions": tuple(directions), "frame_energy": frame_energy}
    return NonHermitianOperator(basis, heff, meta)
