"""Bi-orthogonal spectra of non-Hermitian operators.

Right vectors are normalized to unit Hermitian norm. Left vectors satisfy
l_ν^H r_μ = δ_νμ, so the spectral expansion of exp(−iHt) is

    exp(−iHt) = Σ_ν r_ν e^{−iE_ν t} l_ν^H.

For complex-symmetric H the left vectors follow from the right ones,
l_ν = conj(r_ν) / conj(r_ν^T r_ν), and no second decomposition is needed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, ConvergenceError, NumericalError
from .hilbert import NonHermitianOperator

DEFAULT_DENSE_CAP = 6000
DEFAULT_KRYLOV_M = 30
SYMMETRY_TOL = 1e-12
BIORTH_TOL = 1e-8
# phonon-dressed operators fill in badly under sparse LU; factor these densely
DENSE_LU_MAX = 4000


@dataclass
class BiorthogonalSpectrum:
    eigenvalues: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray
    manifold: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    @property
    def decay_rates(self) -> np.ndarray:
        return -2.0 * self.eigenvalues.imag

    def biorthogonality_residual(self) -> float:
        g = self.left_vectors.conj().T @ self.right_vectors
        return float(np.abs(g - np.eye(self.size)).max())

    def completeness_residual(self) -> float:
        p = self.right_vectors @ self.left_vectors.conj().T
        return float(np.abs(p - np.eye(p.shape[0])).max())

    def reconstruct(self) -> np.ndarray:
        return (self.right_vectors * self.eigenvalues) @ self.left_vectors.conj().T

    def indices(self, manifold: int) -> np.ndarray:
        return np.flatnonzero(self.manifold == manifold)

    def most_subradiant(self, manifold: int = 1) -> int:
        idx = self.indices(manifold)
        if len(idx) == 0:
            raise ConfigError(f"manifold {manifold} not present in spectrum")
        return int(idx[0])  # sorted by decay rate within each manifold


@dataclass
class KrylovSpectrum:
    dimension_m: int
    ritz_values: np.ndarray
    ritz_right: np.ndarray
    ritz_left: np.ndarray
    residual_estimates: np.ndarray
    meta: dict = field(default_factory=dict)

    # uniform access with BiorthogonalSpectrum
    @property
    def eigenvalues(self):
        return self.ritz_values

    @property
    def right_vectors(self):
        return self.ritz_right

    @property
    def left_vectors(self):
        return self.ritz_left

    @property
    def decay_rates(self):
        return -2.0 * self.ritz_values.imag

    def biorthogonality_residual(self) -> float:
        g = self.ritz_left.conj().T @ self.ritz_right
        return float(np.abs(g - np.eye(len(self.ritz_values))).max())


Spectrum = Union[BiorthogonalSpectrum, KrylovSpectrum]


def excitation_labels(op: NonHermitianOperator) -> np.ndarray:
    ne = op.basis.excitation_numbers
    if op.dimension == len(ne):
        return ne
    n_ph = op.meta.get("n_phonon_states")
    if n_ph and op.dimension == len(ne) * n_ph:
        return np.repeat(ne, n_ph)
    raise ConfigError("cannot infer excitation labels for this operator")


def _sort_key(eigs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # manifold, then decay rate, then real part
    return np.lexsort((eigs.real, -2.0 * eigs.imag, labels))


def _left_from_right(mat, right: np.ndarray, symmetric: bool) -> np.ndarray:
    if symmetric:
        norms = np.einsum("ij,ij->j", right, right)
        ok = np.all(np.abs(norms) > 1e-10)
        if ok:
            left = right.conj() / norms.conj()
            if np.abs(left.conj().T @ right - np.eye(right.shape[1])).max() < BIORTH_TOL:
                return left
    try:
        return la.inv(right).conj().T
    except la.LinAlgError as exc:
        raise NumericalError(f"right eigenvectors are singular: {exc}") from exc


def _decompose_block(m: np.ndarray, symmetric: bool):
    if m.shape[0] == 0:
        return np.zeros(0, complex), np.zeros((0, 0), complex), np.zeros((0, 0), complex)
    if symmetric is None:
        symmetric = np.abs(m - m.T).max() <= SYMMETRY_TOL * max(1.0, np.abs(m).max())
    try:
        eigs, right = la.eig(m, check_finite=True)
    except (la.LinAlgError, ValueError) as exc:
        cond = np.linalg.cond(m)
        raise NumericalError(f"eigendecomposition failed (condition number {cond:.3g}): {exc}") from exc
    right = right / np.linalg.norm(right, axis=0)
    left = _left_from_right(m, right, symmetric)
    return eigs, right, left


def dense_decompose(op: Union[NonHermitianOperator, np.ndarray], dense_cap: int = DEFAULT_DENSE_CAP,
                    labels: Optional[np.ndarray] = None) -> BiorthogonalSpectrum:
    """Full bi-orthogonal spectrum.

    Excitation-number-conserving operators are decomposed block by block.
    This is exact, faster and labels every pair with its manifold. Operators
    that mix manifolds get label −1.
    """
    if isinstance(op, NonHermitianOperator):
        mat = op.dense()
        if labels is None:
            labels = excitation_labels(op)
    else:
        mat = np.asarray(op, dtype=complex)
        if labels is None:
            labels = np.zeros(mat.shape[0], dtype=int)
    n = mat.shape[0]
    if n > dense_cap:
        raise ConfigError(f"dimension {n} exceeds dense cap {dense_cap}; use krylov_decompose")
    symmetric = np.abs(mat - mat.T).max() <= SYMMETRY_TOL * max(1.0, np.abs(mat).max()) if n else True
    labels = np.asarray(labels)
    blocks = np.unique(labels)
    cross = 0.0
    for b in blocks:
        rows = labels == b
        if np.any(~rows):
            cross = max(cross, float(np.abs(mat[np.ix_(rows, ~rows)]).max()))
    if cross < 1e-14 * max(1.0, np.abs(mat).max()) and len(blocks) > 1:
        eigs = np.zeros(n, complex)
        right = np.zeros((n, n), complex)
        left = np.zeros((n, n), complex)
        lab = np.zeros(n, dtype=int)
        col = 0
        for b in blocks:
            idx = np.flatnonzero(labels == b)
            e, r, l = _decompose_block(mat[np.ix_(idx, idx)], symmetric)
            k = len(idx)
            eigs[col:col + k] = e
            right[idx, col:col + k] = r
            left[idx, col:col + k] = l
            lab[col:col + k] = b
            col += k
    else:
        eigs, right, left = _decompose_block(mat, symmetric)
        lab = np.full(n, -1 if len(blocks) > 1 else (blocks[0] if n else 0))
    order = _sort_key(eigs, lab)
    spec = BiorthogonalSpectrum(eigs[order], right[:, order], left[:, order], lab[order],
                                {"method": "dense", "complex_symmetric": bool(symmetric)})
    res = spec.biorthogonality_residual() if n else 0.0
    spec.meta["biorthogonality_residual"] = res
    if res > BIORTH_TOL:
        raise NumericalError(f"bi-orthogonality residual {res:.3g} above {BIORTH_TOL}")
    return spec


# ---------------------------------------------------------------------------
# Krylov-Schur
# ---------------------------------------------------------------------------

class MatrixKrylovOperator:
    """Adapter exposing matvec / shifted solves for dense or sparse matrices."""

    def __init__(self, matrix):
        self.matrix = matrix
        self.shape = matrix.shape
        self.sparse = sp.issparse(matrix)
        scale = max(1.0, float(abs(matrix).max())) if matrix.shape[0] else 1.0
        self.complex_symmetric = float(abs(matrix - matrix.T).max()) <= SYMMETRY_TOL * scale
        self._solvers = {}
        self._factors = {}

    def matvec(self, x):
        return self.matrix @ x

    def transpose(self):
        top = MatrixKrylovOperator(self.matrix.T.tocsr() if self.sparse else np.ascontiguousarray(self.matrix.T))
        top._factor_of = self
        return top

    def solve_shifted(self, sigma: complex) -> Callable:
        key = complex(sigma)
        parent = getattr(self, "_factor_of", None)
        if key not in self._solvers and parent is not None and key in parent._factors:
            # reuse the factorization of the untransposed operator
            kind, lu = parent._factors[key]
            if kind == "splu":
                self._solvers[key] = lambda b, lu=lu: lu.solve(np.asarray(b), trans="T")
            else:
                self._solvers[key] = lambda b, lu=lu: la.lu_solve(lu, b, trans=1)
        if key not in self._solvers:
            n = self.shape[0]
            if self.sparse and n > DENSE_LU_MAX:
                try:
                    lu = spla.splu((self.matrix - key * sp.identity(n, format="csc")).tocsc())
                except RuntimeError as exc:
                    raise NumericalError(f"shift {key} is singular") from exc
                self._factors[key] = ("splu", lu)
                self._solvers[key] = lu.solve
            else:
                mat = self.matrix.toarray() if self.sparse else self.matrix
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", la.LinAlgWarning)
                    lu = la.lu_factor(mat - key * np.eye(n))
                if np.min(np.abs(np.diag(lu[0]))) == 0.0:
                    raise NumericalError(f"shift {key} is singular")
                self._factors[key] = ("dense", lu)
                self._solvers[key] = lambda b, lu=lu: la.lu_solve(lu, b)
        return self._solvers[key]

    def norm_estimate(self) -> float:
        if self.sparse:
            return float(spla.norm(self.matrix, 1))
        return float(np.abs(self.matrix).sum(axis=0).max()) if self.shape[0] else 1.0


def as_krylov_operator(op):
    if isinstance(op, NonHermitianOperator):
        return MatrixKrylovOperator(op.matrix)
    if isinstance(op, np.ndarray) or sp.issparse(op):
        return MatrixKrylovOperator(op)
    return op


def _parse_target(target) -> Tuple[str, complex]:
    if isinstance(target, str):
        if target == "most_subradiant":
            return target, 0.0
        if target.startswith("near_energy"):
            parts = target.split()
            return "near_energy", complex(parts[1]) if len(parts) > 1 else 0.0
    if isinstance(target, (tuple, list)) and len(target) == 2 and target[0] == "near_energy":
        return "near_energy", complex(target[1])
    if isinstance(target, (int, float, complex)):
        return "near_energy", complex(target)
    raise ConfigError(f"unknown Krylov target {target!r}")


def _cgs2(V, j, w):
    h = V[:, :j].conj().T @ w
    w = w - V[:, :j] @ h
    h2 = V[:, :j].conj().T @ w
    w = w - V[:, :j] @ h2
    return w, h + h2


def krylov_schur(apply: Callable, n: int, nev: int, score: Callable, ncv: Optional[int] = None,
                 tol: float = 1e-13, max_restarts: int = 300, v0: Optional[np.ndarray] = None,
                 seed: int = 0):
    """Krylov-Schur iteration for the ``nev`` Ritz values of largest ``score``.

    Returns (theta, vectors, residuals, info); residuals are ‖apply(x) − θx‖.
    """
    if ncv is None:
        ncv = max(2 * nev + 10, nev + 20)
    ncv = min(ncv, n)
    nev = min(nev, ncv)
    rng = np.random.default_rng(seed)
    if v0 is None:
        v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    V = np.zeros((n, ncv + 1), dtype=complex)
    H = np.zeros((ncv + 1, ncv), dtype=complex)
    V[:, 0] = v0 / np.linalg.norm(v0)
    k = 0
    n_apply = 0
    for restart in range(max_restarts + 1):
        for j in range(k, ncv):
            w = np.asarray(apply(V[:, j]), dtype=complex)
            n_apply += 1
            wnorm = np.linalg.norm(w)
            w, h = _cgs2(V, j + 1, w)
            H[:j + 1, j] = h
            beta = np.linalg.norm(w)
            if beta <= 1e-13 * max(wnorm, 1e-300):
                # invariant subspace: continue with a fresh orthogonal direction
                H[j + 1, j] = 0.0
                if j + 1 < n:
                    r = rng.standard_normal(n) + 1j * rng.standard_normal(n)
                    r, _ = _cgs2(V, j + 1, r)
                    V[:, j + 1] = r / np.linalg.norm(r)
                continue
            H[j + 1, j] = beta
            V[:, j + 1] = w / beta
        hm = H[:ncv, :ncv]
        theta_all = la.eigvals(hm)
        sc = score(theta_all)
        order = np.argsort(-sc)
        keep = nev if ncv == n else min(ncv - 1, nev + (ncv - nev) // 2)
        if keep < ncv:
            thr = 0.5 * (sc[order[keep - 1]] + sc[order[keep]])
        else:
            thr = -np.inf
        T, Z, sdim = la.schur(hm, output="complex", sort=lambda x: score(np.array([x]))[0] > thr)
        if sdim == 0:
            sdim = keep
        theta = np.diag(T)[:sdim]
        # Ritz pairs of the kept block
        ev_t, y = la.eig(T[:sdim, :sdim])
        y = y / np.linalg.norm(y, axis=0)
        bvec = H[ncv, ncv - 1] * Z[ncv - 1, :sdim]
        res = np.abs(bvec @ y)
        sel = np.argsort(-score(ev_t))[:nev]
        conv = res[sel] <= tol * np.maximum(np.abs(ev_t[sel]), 1e-300)
        if np.all(conv) or restart == max_restarts or ncv == n:
            x = V[:, :ncv] @ (Z[:, :sdim] @ y[:, sel])
            x = x / np.linalg.norm(x, axis=0)
            info = {"restarts": restart, "applications": n_apply, "ncv": ncv,
                    "converged": bool(np.all(conv) or ncv == n)}
            return ev_t[sel], x, res[sel], info
        # restart with the kept Schur block
        V[:, :sdim] = V[:, :ncv] @ Z[:, :sdim]
        V[:, sdim] = V[:, ncv]
        Hn = np.zeros_like(H)
        Hn[:sdim, :sdim] = T[:sdim, :sdim]
        Hn[sdim, :sdim] = bvec
        H = Hn
        V[:, sdim + 1:] = 0.0
        k = sdim
    raise AssertionError("unreachable")


def krylov_decompose(op, m: int = DEFAULT_KRYLOV_M, target="near_energy 0", tol: float = 1e-13,
                     max_restarts: int = 300, residual_target: float = 1e-10, seed: int = 0,
                     v0: Optional[np.ndarray] = None, refine_steps: int = 3) -> KrylovSpectrum:
    """``m`` Ritz pairs in the requested spectral region.

    ``target`` is "most_subradiant" (largest imaginary part, plain Arnoldi)
    or ("near_energy", ω) for shift-invert about ω. Residual estimates are
    backward errors ‖Hx − Ex‖ / max(1, ‖H‖₁).
    """
    if m < 2:
        raise ConfigError("Krylov subspace size m must be >= 2")
    kop = as_krylov_operator(op)
    n = kop.shape[0]
    if m > n:
        raise ConfigError(f"m = {m} exceeds operator dimension {n}")
    kind, sigma = _parse_target(target)
    if kind == "near_energy":
        try:
            solve = kop.solve_shifted(sigma)
        except NumericalError:
            # the shift sits on an eigenvalue; any nearby point works
            sigma = sigma + 1e-7 * (1 + abs(sigma)) * (1 + 1j)
            solve = kop.solve_shifted(sigma)
        apply = solve
        score = np.abs
    else:
        solve = None
        apply = kop.matvec
        score = np.imag
    theta, x, _, info = krylov_schur(apply, n, m, score, tol=tol, max_restarts=max_restarts, v0=v0, seed=seed)
    if kind == "near_energy":
        eigs = sigma + 1.0 / theta
    else:
        eigs = theta
    anorm = max(1.0, kop.norm_estimate())

    def backward(xv, ev):
        r = kop.matvec(xv) - ev * xv
        return np.linalg.norm(r) / anorm

    res = np.array([backward(x[:, i], eigs[i]) for i in range(len(eigs))])
    if solve is not None:
        # inverse-iteration polish for pairs above the residual target
        for i in np.flatnonzero(res > residual_target):
            xi = x[:, i]
            for _ in range(refine_steps):
                try:
                    xi = kop.solve_shifted(eigs[i] + 1e-10 * (1 + abs(eigs[i])))(xi)
                except Exception:
                    break
                xi = xi / np.linalg.norm(xi)
                num = np.vdot(xi, kop.matvec(xi))
                eigs[i] = num
                res[i] = backward(xi, eigs[i])
                if res[i] <= residual_target:
                    break
            x[:, i] = xi
    if not info["converged"] or np.any(res > residual_target):
        raise ConvergenceError(
            f"Krylov-Schur did not reach residual {residual_target:g} "
            f"(worst {res.max():.3g} after {info['restarts']} restarts)", best_residuals=res)
    if kop.complex_symmetric:
        left = _left_from_right(None, x, True)
        if np.abs(left.conj().T @ x - np.eye(len(eigs))).max() > BIORTH_TOL:
            left = _left_via_transpose(kop, kind, sigma, m, eigs, x, tol, max_restarts, seed)
    else:
        left = _left_via_transpose(kop, kind, sigma, m, eigs, x, tol, max_restarts, seed)
    order = _sort_key(eigs, np.zeros(len(eigs), int))
    spec = KrylovSpectrum(m, eigs[order], x[:, order], left[:, order], res[order],
                          {"method": "krylov-schur", "target": kind, "sigma": complex(sigma), **info})
    return spec


def _left_via_transpose(kop, kind, sigma, m, eigs, x, tol, max_restarts, seed):
    top = kop.transpose()
    if kind == "near_energy":
        theta, w, _, _ = krylov_schur(top.solve_shifted(sigma), top.shape[0], m, np.abs, tol=tol,
                                      max_restarts=max_restarts, seed=seed + 1)
        ev = sigma + 1.0 / theta
    else:
        ev, w, _, _ = krylov_schur(top.matvec, top.shape[0], m, np.imag, tol=tol,
                                   max_restarts=max_restarts, seed=seed + 1)
    left = np.zeros_like(x)
    used = set()
    for i, e in enumerate(eigs):
        d = np.abs(ev - e)
        for jj in np.argsort(d):
            if jj not in used:
                used.add(jj)
                break
        lv = w[:, jj].conj()
        left[:, i] = lv / np.conj(np.vdot(lv, x[:, i]))
    return left


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

def spectral_weights(spec: Spectrum, initial: np.ndarray, target: Optional[np.ndarray] = None):
    """(⟨target|ν⟩, ⟨ν̄|initial⟩) for every pair."""
    cin = spec.left_vectors.conj().T @ initial
    if target is None:
        return None, cin
    return spec.right_vectors.T @ target.conj(), cin


def transition_amplitude(spec: Spectrum, initial: np.ndarray, target: np.ndarray, t):
    """Σ_ν ⟨target|ν⟩⟨ν̄|initial⟩ e^{−iE_ν t}; ``t`` scalar or array."""
    a, b = spectral_weights(spec, initial, target)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ConfigError("time must be non-negative")
    w = a * b
    ph = np.exp(-1j * np.multiply.outer(t, spec.eigenvalues))
    return ph @ w


def evolve_state(spec: Spectrum, initial: np.ndarray, times) -> np.ndarray:
    """States ψ(t) as rows, by spectral synthesis."""
    _, b = spectral_weights(spec, initial)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise ConfigError("time must be non-negative")
    ph = np.exp(-1j * np.multiply.outer(times, spec.eigenvalues)) * b
    return ph @ spec.right_vectors.T


def maximize_over_time(f: Callable[[np.ndarray], np.ndarray], t_max: float, n_grid: int = 2001,
                       levels: int = 3, factor: int = 10) -> Tuple[float, float]:
    """Uniform grid on [0, t_max], then ``levels`` refinements around the max."""
    if not t_max > 0:
        raise ConfigError("t_max must be positive")
    t = np.linspace(0.0, t_max, n_grid)
    vals = f(t)
    i = int(np.argmax(vals))
    best_t, best_v = t[i], vals[i]
    dt = t[1] - t[0]
    for _ in range(levels):
        lo, hi = max(0.0, best_t - dt), best_t + dt
        t = np.linspace(lo, hi, 2 * factor + 1)
        vals = f(t)
        i = int(np.argmax(vals))
        if vals[i] >= best_v:
            best_t, best_v = t[i], vals[i]
        dt = (hi - lo) / (2 * factor)
    return float(best_t), float(best_v)


def golden_section_max(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-3,
                       max_iter: int = 60) -> Tuple[float, float]:
    """Maximize a unimodal scalar function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)
