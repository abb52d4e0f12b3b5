"""Minimal dense linear-algebra and integration kernel.

Everything here operates on small dense matrices (dimensions up to ~16):
symmetric matrices with definiteness predicates, eigenvalue extrema by
cyclic Jacobi rotations, a classical fixed-step RK4 integrator, and an
SVD-backed least-squares solve with numerical rank.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import InvalidInputError, NumericError

# Relative tolerance for numerical rank: singular values below
# RANK_RTOL * sigma_max count as zero.
RANK_RTOL = 1e-10


class SymMatrix:
    """Dense symmetric matrix.

    Symmetry is enforced on construction by averaging with the transpose;
    inputs further than ``asym_tol`` from symmetric are rejected.
    """

    __slots__ = ("a",)

    def __init__(self, entries, asym_tol: float = 1e-8):
        a = np.array(entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
        if not np.isfinite(a).all():
            raise NumericError("symmetric matrix has non-finite entries")
        scale = max(1.0, float(np.abs(a).max()))
        if float(np.abs(a - a.T).max()) > asym_tol * scale:
            raise InvalidInputError("matrix is not symmetric within tolerance")
        self.a = 0.5 * (a + a.T)

    @classmethod
    def _from_symmetric(cls, a: np.ndarray) -> "SymMatrix":
        # Fast path for matrices already symmetrized and finiteness-checked
        # by the caller (the Riccati stepping loop).
        out = cls.__new__(cls)
        out.a = a
        return out

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self.a.astype(dtype)
        return self.a

    def as_array(self) -> np.ndarray:
        return self.a

    def eig_extrema(self) -> tuple[float, float]:
        return sym_eig_extrema(self)

    def is_psd(self, tol: float = 1e-10) -> bool:
        lo, hi = self.eig_extrema()
        return lo >= -tol * max(1.0, abs(hi))

    def is_pd(self, tol: float = 1e-12) -> bool:
        lo, hi = self.eig_extrema()
        return lo > tol * max(1.0, abs(hi))

    def trace(self) -> float:
        return float(np.trace(self.a))

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"SymMatrix({self.a!r})"


def _jacobi_eigenvalues(a: np.ndarray, tol: float = 1e-13, max_sweeps: int = 60) -> np.ndarray:
    """All eigenvalues of a symmetric matrix by cyclic Jacobi rotations."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if n == 1:
        return a[0, :].copy()
    scale = float(np.abs(a).max())
    if scale == 0.0:
        return np.zeros(n)
    idx = np.arange(n)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                app, aqq = a[p, p], a[q, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = a[q, p] = 0.0
                others = idx[(idx != p) & (idx != q)]
                akp = a[others, p].copy()
                akq = a[others, q].copy()
                a[others, p] = a[p, others] = c * akp - s * akq
                a[others, q] = a[q, others] = s * akp + c * akq
    return np.sort(np.diag(a).copy())


def sym_eig_extrema(m) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix.

    Uses cyclic Jacobi rotations; intended for the small dimensions this
    package works with. Accepts a SymMatrix or any symmetric array.
    """
    a = np.asarray(m, dtype=float)
    if not np.isfinite(a).all():
        raise NumericError("eigenvalue extrema of a non-finite matrix")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
    a = 0.5 * (a + a.T)
    eig = _jacobi_eigenvalues(a)
    return float(eig[0]), float(eig[-1])


def rk4_step(f: Callable[[float, np.ndarray], np.ndarray], t: float, s, h: float):
    """One classical 4th-order Runge-Kutta step of ``ds/dt = f(t, s)``.

    The state may be any float array (vectors and matrices alike).
    Raises NumericError carrying ``t`` if a stage or the result is
    non-finite.
    """
    if not h > 0.0:
        raise InvalidInputError(f"step size must be positive, got {h}")
    s = np.asarray(s, dtype=float)
    k1 = np.asarray(f(t, s), dtype=float)
    k2 = np.asarray(f(t + 0.5 * h, s + 0.5 * h * k1), dtype=float)
    k3 = np.asarray(f(t + 0.5 * h, s + 0.5 * h * k2), dtype=float)
    k4 = np.asarray(f(t + h, s + h * k3), dtype=float)
    out = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.isfinite(out).all():
        for stage in (k1, k2, k3, k4):
            if not np.isfinite(stage).all():
                raise NumericError("non-finite RK4 stage derivative", t=t)
        raise NumericError("non-finite RK4 result", t=t)
    return out


def svd_rank(a: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Numerical rank at relative tolerance ``rtol * sigma_max``."""
    s = np.linalg.svd(np.atleast_2d(np.asarray(a, dtype=float)), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def solve_least_squares(a, b) -> tuple[np.ndarray, float, int]:
    """Minimum-norm least-squares solution of ``a @ x = b``.

    Returns ``(x, residual_norm, rank)`` where rank is the numerical rank
    at tolerance ``RANK_RTOL * sigma_max``. Degenerate systems yield the
    minimum-norm solution rather than an error.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if a.shape[0] != b.shape[0]:
        raise InvalidInputError(f"shape mismatch: A is {a.shape}, b has length {b.shape[0]}")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s.size and s[0] > 0.0:
        rank = int(np.sum(s > RANK_RTOL * s[0]))
    else:
        rank = 0
    coeff = np.zeros_like(s)
    if rank:
        coeff[:rank] = (u.T @ b)[:rank] / s[:rank]
    x = vt.T @ coeff
    residual_norm = float(np.linalg.norm(a @ x - b))
    return x, residual_norm, rank
