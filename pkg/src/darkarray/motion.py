"""Motional degradation studies: fast-motion averaging and the Lamb-Dicke model."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .couplings import K_E, LatticeSpec, analytic_averaged_couplings, dipole_green_derivatives, \
    motion_averaged_couplings, pinned_couplings
from .errors import ConfigError, RegimeError
from .hilbert import (
    DriveSpec,
    NonHermitianOperator,
    adiabatic_eliminate_motion,
    assemble_hamiltonian,
    assemble_lamb_dicke_system,
    build_basis,
    coefficient_matrix,
    mean_phonon_number,
    phonon_embed,
    vacuum_block,
)
from .kspace import solve_drive_geometry
from .protocols import (
    OmegaScan,
    ProtocolReport,
    dark_mode_target,
    iswap_gate,
    prepare_dark_state,
    selective_prepare,
    single_excitation_spectrum,
)
from .spectral import (
    MatrixKrylovOperator,
    dense_decompose,
    evolve_state,
    golden_section_max,
    krylov_decompose,
    maximize_over_time,
    transition_amplitude,
)

REGIMES = ("fast_motion_averaged", "lamb_dicke_perturbative")
MIN_FAST_TRAP = 10.0
MAX_ETA = 0.3


@dataclass(frozen=True)
class MotionParams:
    """Position-fluctuation parameters (lengths in λ_e, rates in Γ₀).

    Give either ``sigma`` directly or ``r0`` (with ``n_th``), in which case
    σ = r0 √(2 n_th + 1).
    """

    sigma: Optional[float] = None
    r0: Optional[float] = None
    omega_T: float = 100.0
    n_th: float = 0.0
    n_realizations: int = 100
    seed: int = 0
    regime: str = "fast_motion_averaged"
    noise_factor: float = 2.0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}")
        if self.sigma is None and self.r0 is None:
            raise ConfigError("give sigma or r0")
        for name in ("sigma", "r0"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.n_th < 0:
            raise ConfigError("n_th must be non-negative")
        if self.omega_T <= 0:
            raise ConfigError("omega_T must be positive")
        if self.n_realizations < 1:
            raise ConfigError("n_realizations must be >= 1")

    @property
    def width(self) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        return float(self.r0 * math.sqrt(2 * self.n_th + 1))

    @property
    def zero_point(self) -> float:
        if self.r0 is not None:
            return float(self.r0)
        return float(self.sigma / math.sqrt(2 * self.n_th + 1))

    @property
    def eta(self) -> float:
        return self.width * K_E

    def regime_warnings(self) -> List[str]:
        """Machine-readable guard codes for this parameter set."""
        out = []
        if self.regime == "fast_motion_averaged" and self.omega_T < MIN_FAST_TRAP:
            out.append("W_FAST_MOTION_TRAP")
        if self.eta >= MAX_ETA:
            out.append("W_LAMB_DICKE_ETA")
        if self.regime == "lamb_dicke_perturbative" and self.n_th != 0:
            out.append("W_LAMB_DICKE_THERMAL")
        return out


@dataclass
class MotionStudyResult:
    decay_vs_N: List[Dict[str, float]]
    saturation_level: float
    small_N_coefficient: float
    prep_or_gate_errors: List[ProtocolReport] = field(default_factory=list)
    phonon_population: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)


def _require_fast(params: MotionParams):
    if params.omega_T < MIN_FAST_TRAP:
        raise RegimeError(f"omega_T/Gamma0 = {params.omega_T} < {MIN_FAST_TRAP}: not in the fast-motion regime")


def fit_plateau(ns: Sequence[int], rates: Sequence[float]):
    """Least-squares Γ(N) = plateau + C/N³."""
    ns = np.asarray(ns, float)
    a = np.column_stack([np.ones_like(ns), ns ** -3])
    (p, c), *_ = np.linalg.lstsq(a, np.asarray(rates, float), rcond=None)
    return float(p), float(c)


def averaged_dark_decay_study(lattice: LatticeSpec, n_values: Sequence[int], params: MotionParams,
                              fit_from: Optional[int] = None) -> MotionStudyResult:
    """Most subradiant decay rate of the averaged Hamiltonian versus N.

    The plateau and N⁻³ coefficient are fitted on N ≥ ``fit_from`` (all N
    by default).
    """
    _require_fast(params)
    rows = []
    for n in n_values:
        lat = lattice.with_n(int(n))
        cm = motion_averaged_couplings(lat, params.width, params.n_realizations, params.seed)
        spec = single_excitation_spectrum(coefficient_matrix(cm))
        gam = float(spec.decay_rates[0])
        rows.append({"N": int(n), "gamma_qa": gam, "sigma": params.width, "eta": params.eta})
    sel = [r for r in rows if fit_from is None or r["N"] >= fit_from]
    if len(sel) >= 2:
        plateau, coef = fit_plateau([r["N"] for r in sel], [r["gamma_qa"] for r in sel])
    else:
        plateau, coef = (sel[0]["gamma_qa"] if sel else float("nan")), float("nan")
    return MotionStudyResult(rows, plateau, coef, meta={"reference_level": params.eta ** 2,
                                                         "n_realizations": params.n_realizations,
                                                         "seed": params.seed})


def averaged_protocol(protocol: str, lattice: LatticeSpec, params: MotionParams,
                      omega_scan: Optional[OmegaScan] = None, n_max: int = 2, **kw) -> ProtocolReport:
    """Run a protocol on the motion-averaged Hamiltonian (pinned drive profile)."""
    _require_fast(params)
    cm = motion_averaged_couplings(lattice, params.width, params.n_realizations, params.seed)
    if protocol == "prepare_dark":
        res = prepare_dark_state(lattice, omega_scan, n_max, couplings=cm, selection="ansatz_overlap", **kw)
        err = res.error_epsilon
    elif protocol == "selective_prepare":
        res = selective_prepare(lattice, omega_scan, n_max, couplings=cm, **kw)
        err = res.error_epsilon
    elif protocol == "iswap":
        res = iswap_gate(lattice, n_max, couplings=cm, **kw)
        err = res.error_total
    else:
        raise ConfigError(f"unknown protocol {protocol!r}")
    return ProtocolReport(protocol, float(err), res, params.regime_warnings(),
                          {"sigma": params.width, "n_realizations": params.n_realizations, "seed": params.seed})


# ---------------------------------------------------------------------------
# Lamb-Dicke model
# ---------------------------------------------------------------------------

def thermal_trace(lattice: LatticeSpec, r0: float, n_th: float = 0.0,
                  directions: Sequence[str] = ("x", "y", "z"), n_max: int = 2) -> np.ndarray:
    """⟨0_ph| H_LD |0_ph⟩ for the undriven phonon-coupled Hamiltonian."""
    if n_th != 0:
        raise ConfigError("only ground-state motion (n_th = 0) is supported")
    op = assemble_lamb_dicke_system(lattice, None, r0, 1.0, phonon_dim=2, n_max=n_max, directions=directions)
    return vacuum_block(op)


def drive_for_lamb_dicke(lattice: LatticeSpec, omega0: float, p_ratio: float = 2.0, alpha: float = 0.0):
    """Pinned-profile drive with the transverse momentum K_x of the Raman geometry.

    Returns (drive, warning codes). Without a geometric solution K_x = 0.
    """
    drive = DriveSpec.for_lattice(lattice, omega0)
    geo = solve_drive_geometry(lattice.spacing_a, alpha, p_ratio, target_Kz=drive.k_z)
    if geo is None:
        return drive, ["W_NO_DRIVE_GEOMETRY"]
    return DriveSpec(drive.rabi_omega0, drive.k_z, drive.detuning_d, geo.K_x, drive.phase_profile,
                     drive.spacing_a), []


def _quadratic_in_omega(build, dense: bool):
    """Return a function Ω ↦ A + BΩ + CΩ² from three samples."""
    h0, hp, hm = build(0.0), build(1.0), build(-1.0)
    b = 0.5 * (hp - hm)
    c = 0.5 * (hp + hm) - h0
    return lambda om: h0 + om * b + om * om * c


def _prep_scan(spectrum_at, ground, target, coupling, omega_scan: OmegaScan, n_atoms: int):
    memo = {}

    def ev(om):
        if om not in memo:
            spec = spectrum_at(om)
            f = lambda t: np.abs(transition_amplitude(spec, ground, target, t)) ** 2
            t, fv = maximize_over_time(f, 2.5 * math.pi / (2 * coupling * om))
            memo[om] = (1 - fv, t, spec)
        return memo[om]

    grid = omega_scan.grid(n_atoms)
    errs = [ev(float(o))[0] for o in grid]
    i = int(np.argmin(errs))
    best = float(grid[i])
    if omega_scan.refine and len(grid) >= 3:
        lo, hi = math.log(grid[max(i - 1, 0)]), math.log(grid[min(i + 1, len(grid) - 1)])
        xb, _ = golden_section_max(lambda x: -ev(float(math.exp(x)))[0], lo, hi, tol=2e-3)
        if ev(float(math.exp(xb)))[0] < ev(best)[0]:
            best = float(math.exp(xb))
    return best, ev(best)


def lamb_dicke_protocol(protocol: str, lattice: LatticeSpec, params: MotionParams,
                        omega_scan: Optional[OmegaScan] = None, phonon_dim: int = 2,
                        directions: Sequence[str] = ("x", "z"), p_ratio: float = 2.0,
                        n_times: int = 101, krylov_m: int = 4, weight_tol: float = 1e-3) -> ProtocolReport:
    """Full phonon-coupled versus adiabatically eliminated preparation.

    Both models start in |0⟩ ⊗ |0_ph⟩ and target the pinned dark state with
    the phonons in their ground state. Each model gets its own Ω₀
    optimization.
    """
    if params.n_th != 0:
        raise RegimeError("the Lamb-Dicke protocol assumes ground-state motion (n_th = 0)")
    if protocol not in ("prepare_dark", "selective_prepare"):
        raise ConfigError("Lamb-Dicke protocol supports prepare_dark and selective_prepare")
    r0 = params.zero_point
    warn = params.regime_warnings()
    omega_scan = omega_scan or OmegaScan()
    n = lattice.n_atoms_per_array
    c0 = coefficient_matrix(pinned_couplings(lattice))
    spec1 = single_excitation_spectrum(c0)
    if lattice.n_arrays == 1:
        tgt = dark_mode_target(spec1, None, lattice.spacing_a).state
        e_t = spec1.eigenvalues[spec1.indices(1)[0]]
        arrays = "both"
    else:
        qa = dark_mode_target(single_excitation_spectrum(c0[:n, :n]), None, lattice.spacing_a).state
        ea = np.concatenate([qa, np.zeros(n)])
        j = int(np.argmax(np.abs(ea.conj() @ spec1.right_vectors)))
        tgt = spec1.right_vectors[:, j] / np.linalg.norm(spec1.right_vectors[:, j])
        e_t = spec1.eigenvalues[j]
        arrays = "both"
    frame = float(e_t.real)
    drive1, wcodes = drive_for_lamb_dicke(lattice, 1.0, p_ratio)
    warn += wcodes
    s = np.asarray(drive1.phase_profile)
    s_full = np.tile(s, lattice.n_arrays)
    coupling = abs(np.dot(s_full, tgt))

    # effective internal model, quadratic in Ω
    def build_eff(om):
        return adiabatic_eliminate_motion(lattice, drive1.with_omega(om) if om != 0 else None, r0,
                                          params.omega_T, 2, directions, arrays, frame).matrix
    h_eff = _quadratic_in_omega(build_eff, True)
    basis = build_basis(lattice.n_sites, 2)
    g_int = basis.ground()
    t_int = np.zeros(basis.dimension, complex)
    t_int[1:1 + lattice.n_sites] = tgt

    def eff_spec(om):
        return dense_decompose(h_eff(om), labels=np.zeros(basis.dimension, int))

    om_eff, (eps_eff, t_eff, _) = _prep_scan(eff_spec, g_int, t_int, coupling, omega_scan, n)

    # full internal ⊗ phonon model, linear in Ω
    def build_full(om):
        return assemble_lamb_dicke_system(lattice, drive1.with_omega(om) if om != 0 else None, r0,
                                          params.omega_T, phonon_dim, 2, directions, arrays, frame)
    op0 = build_full(0.0)
    h0 = op0.matrix.tocsr()
    hv = (build_full(1.0).matrix - h0).tocsr()
    g_full = phonon_embed(op0, g_int)
    t_full = phonon_embed(op0, t_int)

    def full_spec(om):
        # grow the Krylov space until ground and target weights are captured
        kop = MatrixKrylovOperator((h0 + om * hv).tocsc())
        m = min(krylov_m, op0.dimension)
        while True:
            spec = krylov_decompose(kop, m=m, target=("near_energy", 0.0))
            lost = max(abs(1 - np.sum((v.conj() @ spec.right_vectors) * (spec.left_vectors.conj().T @ v)))
                       for v in (g_full, t_full))
            if lost < weight_tol or 2 * m > op0.dimension:
                spec.meta["lost_weight"] = float(lost)
                return spec
            m *= 2

    # the full model gets its own optimization, bracketed around the effective optimum
    if omega_scan.values is None:
        full_scan = OmegaScan(values=tuple(om_eff * np.logspace(-0.5, 0.5, 5)), refine=omega_scan.refine)
    else:
        full_scan = omega_scan
    om_full, (eps_full, t_full_star, spec_full) = _prep_scan(full_spec, g_full, t_full, coupling, full_scan, n)
    times = np.linspace(0.0, t_full_star, n_times)
    traj = evolve_state(spec_full, g_full, times)
    nph = mean_phonon_number(op0, traj)
    norms = np.sum(np.abs(traj) ** 2, axis=1)
    if np.any(np.diff(norms) > 1e-8):
        warn.append("W_NORM_INCREASE")
    info = {"epsilon_full": float(eps_full), "epsilon_effective": float(eps_eff),
            "omega0_full": om_full, "omega0_effective": om_eff, "t_star_full": t_full_star,
            "t_star_effective": t_eff, "r0": r0, "eta": r0 * K_E, "omega_T": params.omega_T,
            "dimension_full": op0.dimension, "lost_weight": spec_full.meta["lost_weight"], "phonon_dim": phonon_dim, "K_x": drive1.k_x,
            "relative_difference": float(abs(eps_full - eps_eff) / max(eps_full, 1e-300))}
    res = MotionStudyResult([], float("nan"), float("nan"), [], nph, {"times": times, **info})
    return ProtocolReport(protocol, float(eps_full), res, warn, info)


@dataclass
class ValidityReport:
    valid: bool
    max_first_order_ratio: float
    max_second_order_ratio: float
    nearest_neighbor_ratios: tuple
    unphysical_eigenvalues: np.ndarray
    flags: List[str]


def validity_check_lamb_dicke(lattice: LatticeSpec, params: MotionParams, threshold: float = 0.5,
                              directions: Sequence[str] = ("x", "z"), imag_tol: float = 1e-10) -> ValidityReport:
    """Expansion-parameter ratios over all pairs and spurious gain modes.

    Ratios are η k_e⁻¹|∂G|/|G| and η² k_e⁻²|∂∂G|/|G| (max-norms). The gain
    check looks for Im E > 0 in the single-excitation block of the
    motion-traced perturbative Hamiltonian.
    """
    eta = params.zero_point * K_E
    pos = lattice.positions()
    n = lattice.n_sites
    iu, ju = np.triu_indices(n, 1)
    g, grad, hess = dipole_green_derivatives(pos[iu] - pos[ju], lattice.dipole)
    ag = np.abs(g)
    r1 = eta / K_E * np.abs(grad).max(axis=-1) / ag
    r2 = eta ** 2 / K_E ** 2 * np.abs(hess).reshape(len(ag), -1).max(axis=-1) / ag
    nn = (np.abs(pos[iu] - pos[ju]).sum(axis=1) - lattice.spacing_a) < 1e-12
    nn_ratios = (float(r1[nn].max()) if np.any(nn) else 0.0, float(r2[nn].max()) if np.any(nn) else 0.0)
    flags = []
    if len(ag) and max(r1.max(), r2.max()) >= threshold:
        flags.append("W_LAMB_DICKE_RATIO")
    bad = np.zeros(0, complex)
    if eta > 0:
        heff = adiabatic_eliminate_motion(lattice, None, params.zero_point, max(params.omega_T, 10.0), 1,
                                          directions).matrix
        e = la.eigvals(heff[1:, 1:])
        bad = e[e.imag > imag_tol]
        if len(bad):
            flags.append("W_UNPHYSICAL_GAIN")
    return ValidityReport(not flags, float(r1.max()) if len(r1) else 0.0, float(r2.max()) if len(r2) else 0.0,
                          nn_ratios, bad, flags)
