"""Matrix-free driven operator on the ground + one + two excitation space.

A vector is laid out as [c0, x_1..x_N, ψ_jk (j<k, lexicographic)], which
matches ``ExcitationBasis(n_sites, 2)``. The pair amplitudes form a
symmetric zero-diagonal matrix Ψ and

    H₂Ψ = offdiag(CΨ + ΨCᵀ),   V₂₁x = Ω offdiag(s xᵀ + x sᵀ),   V₁₂Ψ = Ω Ψ s.

Shifted solves eliminate the pair block with the exact hard-core resolvent.
The free-boson resolvent G, with GΦ = R[(PΦPᵀ)/(λ_μ+λ_ν−z)]Rᵀ and C = RΛP,
is corrected by a diagonal source that keeps diag Ψ = 0. This needs one
N×N solve, so a shifted solve costs O(N³) instead of a sparse LU of
dimension N²/2.
"""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np
import scipy.linalg as la

from .errors import ConfigError, NumericalError


class PairResolvent:
    """(H₂ − z)⁻¹ on the hard-core two-excitation manifold."""

    def __init__(self, c: np.ndarray, z: complex):
        c = np.asarray(c, dtype=complex)
        n = c.shape[0]
        self.n = n
        self.z = complex(z)
        lam, r = la.eig(c)
        p = la.inv(r)
        denom = lam[:, None] + lam[None, :] - self.z
        if np.abs(denom).min() < 1e-14:
            raise NumericalError("shift coincides with a free two-excitation energy")
        self.r, self.p, self.k = r, p, 1.0 / denom
        # S_jk = Σ_μν R_jμ R_jν K_μν P_μk P_νk
        s = np.zeros((n, n), dtype=complex)
        pp = (p[:, None, :] * p[None, :, :]).reshape(n * n, n)
        for j0 in range(0, n, 64):
            rs = r[j0:j0 + 64]
            x = (rs[:, :, None] * rs[:, None, :] * self.k[None]).reshape(len(rs), n * n)
            s[j0:j0 + 64] = x @ pp
        self.s_lu = la.lu_factor(s)
        self._cond = np.linalg.cond(s) if n <= 400 else None

    def _free(self, phi: np.ndarray) -> np.ndarray:
        return self.r @ (((self.p @ phi @ self.p.T) * self.k) @ self.r.T)

    def apply(self, b: np.ndarray) -> np.ndarray:
        """Return Ψ with diag Ψ = 0 solving offdiag((C Ψ + Ψ Cᵀ) − zΨ) = B."""
        y = (self.p @ b @ self.p.T) * self.k
        dg = np.einsum("jm,mj->j", self.r @ y, self.r.T)
        cvec = -la.lu_solve(self.s_lu, dg)
        y = y + ((self.p * cvec[None, :]) @ self.p.T) * self.k
        out = self.r @ y @ self.r.T
        out[np.diag_indices(self.n)] = 0.0
        return out


class TwoManifoldOperator:
    """H + V truncated at two excitations, with fast shifted solves.

    ``c`` is the single-excitation coefficient matrix, frame and detunings
    included, as returned by ``hilbert.coefficient_matrix``. ``s`` is the
    real-gauge drive profile. Pass the same ``cache`` dict to operators
    that share ``c`` and ``s`` (e.g. an Ω scan) to reuse the Ω-independent
    work of each shift.
    """

    def __init__(self, c: np.ndarray, s: np.ndarray, omega: float, cache: Optional[Dict] = None):
        c = np.asarray(c, dtype=complex)
        s = np.asarray(s, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or s.shape != (c.shape[0],):
            raise ConfigError("c must be N×N and s of length N")
        self.c, self.s, self.omega = c, s, float(omega)
        n = c.shape[0]
        self.n = n
        self.iu = np.triu_indices(n, 1)
        self.n_pairs = len(self.iu[0])
        dim = 1 + n + self.n_pairs
        self.shape = (dim, dim)
        scale = max(1.0, np.abs(c).max())
        self.complex_symmetric = bool(np.abs(c - c.T).max() <= 1e-12 * scale)
        self.cache = {} if cache is None else cache
        self._solvers = {}

    # layout helpers
    def unpack(self, v: np.ndarray):
        n = self.n
        psi = np.zeros((n, n), dtype=complex)
        psi[self.iu] = v[1 + n:]
        psi = psi + psi.T
        return v[0], v[1:1 + n], psi

    def pack(self, c0, x, psi) -> np.ndarray:
        out = np.empty(self.shape[0], dtype=complex)
        out[0] = c0
        out[1:1 + self.n] = x
        out[1 + self.n:] = psi[self.iu]
        return out

    def matvec(self, v: np.ndarray) -> np.ndarray:
        c0, x, psi = self.unpack(np.asarray(v, dtype=complex))
        om, s, c = self.omega, self.s, self.c
        y0 = om * (s @ x)
        y1 = c @ x + om * c0 * s + om * (psi @ s)
        y2 = c @ psi + psi @ c.T + om * (np.outer(s, x) + np.outer(x, s))
        return self.pack(y0, y1, y2)

    def transpose(self) -> "TwoManifoldOperator":
        return TwoManifoldOperator(self.c.T, self.s, self.omega)

    def norm_estimate(self) -> float:
        return float(2 * np.abs(self.c).sum(axis=0).max() + 2 * self.omega * np.abs(self.s).sum())

    def dense(self) -> np.ndarray:
        """Explicit matrix (testing only)."""
        dim = self.shape[0]
        if dim > 6000:
            raise ConfigError("dense form only for small systems")
        eye = np.eye(dim, dtype=complex)
        return np.column_stack([self.matvec(eye[:, i]) for i in range(dim)])

    def _pair_data(self, sigma: complex):
        key = ("pair", complex(sigma), self.c.tobytes(), self.s.tobytes())
        if key not in self.cache:
            res = PairResolvent(self.c, sigma)
            n = self.n
            mhat = np.zeros((n, n), dtype=complex)
            for k in range(n):
                b = np.zeros((n, n))
                b[:, k] += self.s
                b[k, :] += self.s
                b[k, k] = 0.0
                mhat[:, k] = res.apply(b) @ self.s
            self.cache[key] = (res, mhat)
        return self.cache[key]

    def solve_shifted(self, sigma: complex):
        key = complex(sigma)
        if key in self._solvers:
            return self._solvers[key]
        res, mhat = self._pair_data(key)
        n, om, s = self.n, self.omega, self.s
        schur = np.zeros((n + 1, n + 1), dtype=complex)
        schur[0, 0] = -key
        schur[0, 1:] = om * s
        schur[1:, 0] = om * s
        schur[1:, 1:] = self.c - key * np.eye(n) - om ** 2 * mhat
        lu = la.lu_factor(schur)

        def solve(b):
            b0, b1, b2 = self.unpack(np.asarray(b, dtype=complex))
            g = res.apply(b2)
            rhs = np.concatenate(([b0], b1 - om * (g @ s)))
            u = la.lu_solve(lu, rhs)
            x = u[1:]
            w = np.outer(s, x) + np.outer(x, s)
            w[np.diag_indices(n)] = 0.0
            psi = g - om * res.apply(w)
            return self.pack(u[0], x, psi)

        self._solvers[key] = solve
        return solve
