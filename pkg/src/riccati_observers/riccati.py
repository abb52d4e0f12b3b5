"""Continuous Riccati equation propagation and conditioning diagnostics.

The gain of every observer in this package is ``K = k(t) P C^T Q`` with
``k(t) >= 0.5`` and P the solution of

    dP/dt = A P + P A^T - P C^T Q C P + V,   P(0) positive definite.

P is integrated directly by fixed-step RK4 with symmetrization after each
step; a definiteness failure triggers one automatic step-halving retry
before raising. The module also provides the Lyapunov value x^T P^{-1} x,
the guaranteed exponential decay rate it satisfies, and ultimate bounds on
the extreme eigenvalues of P in terms of measurable run constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BoundUnavailableError, InvalidInputError, PdViolationError
from .ltv import LtvSystem
from .numerics import SymMatrix, rk4_step


@dataclass(frozen=True)
class GainSchedule:
    """Tuning schedules for the CRE: scalar k(t) >= 0.5 and p.s.d. Q(t), V(t)."""

    k_of: Callable[[float], float]
    Q_of: Callable[[float], object]
    V_of: Callable[[float], object]

    @staticmethod
    def constant(k: float, Q, V) -> "GainSchedule":
        q = np.atleast_2d(np.asarray(Q, dtype=float))
        v = np.atleast_2d(np.asarray(V, dtype=float))
        _check_k(k)
        return GainSchedule(lambda t: k, lambda t: q, lambda t: v)

    def k_at(self, t: float) -> float:
        return _check_k(float(self.k_of(t)))


def _check_k(k: float) -> float:
    if not k >= 0.5:
        raise InvalidInputError(f"observer gain scaling k must be >= 0.5, got {k}")
    return k


@dataclass(frozen=True)
class RiccatiState:
    """Riccati matrix P (positive definite) together with its clock."""

    P: SymMatrix
    t: float = 0.0

    @staticmethod
    def initial(n: int, scale: float = 1.0, t: float = 0.0) -> "RiccatiState":
        return RiccatiState(SymMatrix(scale * np.eye(n)), t)


@dataclass(frozen=True)
class ConditioningBounds:
    """Run constants entering the eigenvalue and trace bounds.

    k_a       supremum of the spectral norm of A(t)
    mu_q_bar  supremum of tr(C^T Q C)
    v_m, v_M  infimum / supremum of the extreme eigenvalues of V(t)
    mu        excitation floor of the weighted observability Grammian
    delta     window length associated with mu
    tr_v      supremum of tr(V(t)), used by the trace growth envelope

    In this package the fields are measured from logged run data (suprema
    over samples) rather than derived analytically.
    """

    k_a: float
    mu_q_bar: float
    v_m: float
    v_M: float
    mu: float = 0.0
    delta: float = 0.0
    tr_v: float = 0.0

    def __post_init__(self):
        if min(self.k_a, self.mu_q_bar, self.v_m, self.v_M) < 0.0:
            raise InvalidInputError("conditioning constants must be nonnegative")
        if self.v_M < self.v_m:
            raise InvalidInputError("v_M must be at least v_m")


def _pd_cholesky(p: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(p)
        return True
    except np.linalg.LinAlgError:
        return False


def _cre_derivative(sys: LtvSystem, g: GainSchedule):
    def pdot(s: float, p: np.ndarray) -> np.ndarray:
        a = np.asarray(sys.A_of(s), dtype=float)
        c = np.asarray(sys.C_of(s), dtype=float)
        q = np.asarray(g.Q_of(s), dtype=float)
        v = np.asarray(g.V_of(s), dtype=float)
        ap = a @ p
        s_mat = c.T @ (q @ c)
        return ap + ap.T - p @ s_mat @ p + v

    return pdot


def _cre_advance(pdot, rs: RiccatiState, h: float, max_halvings: int) -> RiccatiState:
    p_next = rk4_step(pdot, rs.t, rs.P.as_array(), h)
    p_next = 0.5 * (p_next + p_next.T)
    if not _pd_cholesky(p_next):
        if max_halvings > 0:
            half = _cre_advance(pdot, rs, 0.5 * h, max_halvings - 1)
            return _cre_advance(pdot, half, 0.5 * h, max_halvings - 1)
        raise PdViolationError("Riccati matrix lost positive definiteness", t=rs.t + h)
    return RiccatiState(SymMatrix._from_symmetric(p_next), rs.t + h)


def cre_step(sys: LtvSystem, g: GainSchedule, rs: RiccatiState, h: float, max_halvings: int = 8) -> RiccatiState:
    """One RK4 step of the CRE followed by symmetrization.

    The result must remain positive definite. A definiteness failure
    signals the step outrunning the stability bound of the quadratic term
    (common right after initialization with a large P); the step is then
    retried as recursive half steps, up to ``max_halvings`` subdivision
    levels, before a PdViolationError is raised.
    """
    if not h > 0.0:
        raise InvalidInputError(f"step size must be positive, got {h}")
    return _cre_advance(_cre_derivative(sys, g), rs, h, max_halvings)


def cre_step_frozen(a: np.ndarray, s_mat: np.ndarray, v: np.ndarray, rs: RiccatiState, h: float,
                    max_halvings: int = 8) -> RiccatiState:
    """cre_step specialized to coefficients held constant over the step.

    ``s_mat`` is the precomputed weighting C^T Q C. Shares the
    symmetrization, definiteness guard and step-halving behaviour of
    cre_step; used by the observers, whose coefficients are frozen at the
    measurement instant anyway.
    """
    if not h > 0.0:
        raise InvalidInputError(f"step size must be positive, got {h}")

    def pdot(t, p):
        ap = a @ p
        return ap + ap.T - p @ s_mat @ p + v

    return _cre_advance(pdot, rs, h, max_halvings)


def gain(sys: LtvSystem, g: GainSchedule, rs: RiccatiState) -> np.ndarray:
    """Observer gain K = k(t) P C^T(t) Q(t)."""
    c = np.asarray(sys.C_of(rs.t), dtype=float)
    q = np.asarray(g.Q_of(rs.t), dtype=float)
    return g.k_at(rs.t) * (rs.P.as_array() @ c.T @ q)


def lyapunov_value(rs: RiccatiState, x_tilde) -> float:
    """Error energy x^T P^{-1} x via a Cholesky solve (no explicit inverse)."""
    x = np.asarray(x_tilde, dtype=float).ravel()
    if not x.any():
        return 0.0
    try:
        chol = np.linalg.cholesky(rs.P.as_array())
    except np.linalg.LinAlgError:
        raise PdViolationError("Lyapunov value requested for a non-p.d. matrix", t=rs.t)
    z = np.linalg.solve(chol, x)
    return float(z @ z)


def rate_lower_bound(b: ConditioningBounds, p_m: float, p_M: float) -> float:
    """Guaranteed exponential decay rate (p_m^2 / p_M) v_m of the Lyapunov value."""
    if not p_m > 0.0 or p_M < p_m:
        raise InvalidInputError("need 0 < p_m <= p_M")
    return (p_m * p_m / p_M) * b.v_m


def ultimate_lambda_min_bound(b: ConditioningBounds, n: int) -> float:
    """Ultimate lower bound on the smallest eigenvalue of P(t).

    Returns v_m / (n k_a) * (1 + sqrt(1 + mu_q_bar v_m / (n k_a^2)))^{-1}.
    Degenerates to 0 when v_m = 0; with k_a = 0 the formula is singular and
    a BoundUnavailableError asks the caller to fall back to the Lyapunov
    value directly.
    """
    if n < 1:
        raise InvalidInputError("state dimension must be positive")
    if b.v_m == 0.0:
        return 0.0
    if b.k_a <= 0.0:
        raise BoundUnavailableError(
            "smallest-eigenvalue bound is singular for k_a = 0; use the Lyapunov value directly"
        )
    root = np.sqrt(1.0 + b.mu_q_bar * b.v_m / (n * b.k_a * b.k_a))
    return (b.v_m / (n * b.k_a)) / (1.0 + root)


def ultimate_lambda_max_bound(b: ConditioningBounds) -> float:
    """Ultimate upper bound on the largest eigenvalue of P(t).

    Requires a positive excitation floor mu over windows of length delta.
    """
    if b.mu <= 0.0:
        raise BoundUnavailableError("largest-eigenvalue bound requires a positive excitation floor mu")
    if b.delta <= 0.0:
        raise InvalidInputError("window length delta must be positive")
    ratio = b.mu_q_bar / b.mu
    return 1.0 / (b.mu * b.delta) + (ratio * ratio / 3.0) * np.exp(6.0 * b.k_a * b.delta) * b.delta * b.v_M


def trace_growth_envelope(b: ConditioningBounds, tr0: float, t: float, which: str = "P") -> float:
    """Exponential envelope that tr(P) or tr(P^{-1}) cannot outgrow.

    For P the drive constant is sup tr(V); for P^{-1} it is sup tr(C^T Q C).
    The k_a -> 0 limit (tr0 + drive * t) is handled as an explicit branch.
    """
    if which not in ("P", "P_inverse"):
        raise InvalidInputError(f"which must be 'P' or 'P_inverse', got {which!r}")
    if not tr0 > 0.0:
        raise InvalidInputError("initial trace must be positive")
    if t < 0.0:
        raise InvalidInputError("time must be nonnegative")
    drive = b.tr_v if which == "P" else b.mu_q_bar
    if b.k_a < 1e-12:
        return tr0 + drive * t
    ratio = drive / (2.0 * b.k_a)
    return (tr0 + ratio) * np.exp(2.0 * b.k_a * t) - ratio
