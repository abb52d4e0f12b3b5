"""Linear time-varying systems and observability/excitation diagnostics.

An LTV system ``dx/dt = A(t) x + u_lift(t)``, ``y = C(t) x`` is represented
by time-indexed closures. On top of it this module provides transition
matrices, the windowed observability Grammian and its weighted variants,
instantaneous-observability ranks, persistent-excitation metrics for the
conditions under which the observers of this package converge, and the
linear solvability test that detects degenerate source geometries for
bias-corrupted range measurements.

All windowed integrals use trapezoidal quadrature with the window
discretized into an integer number of steps; these quantities feed
threshold tests, not gains, so modest quadrature accuracy suffices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InsufficientSamplesError, InvalidInputError, NumericError
from .numerics import SymMatrix, rk4_step, solve_least_squares, svd_rank, sym_eig_extrema

# Persistent-excitation report kinds, one per convergence condition:
#   direction_persistent : windowed integral of summed direction projectors
#   range_u              : windowed integral of u u^T  (single range source)
#   range_udot           : windowed integral of du/dt du/dt^T (biased velocity)
#   multi_range_u        : geometry term + windowed u u^T
#   multi_range_udot     : geometry term + windowed du/dt du/dt^T
#   biased_range_C1      : strict variant of multi_range_u (range bias case)
#   biased_range_C2      : peak |d/dt ranges| over the window (range bias case)
PE_KINDS = (
    "direction_persistent",
    "range_u",
    "range_udot",
    "multi_range_u",
    "multi_range_udot",
    "biased_range_C1",
    "biased_range_C2",
)


@dataclass(frozen=True)
class LtvSystem:
    """Time-indexed system matrices. ``u_lift`` is the B(t)u input term."""

    n_state: int
    n_out: int
    A_of: Callable[[float], np.ndarray]
    C_of: Callable[[float], np.ndarray]
    u_lift: Callable[[float], np.ndarray] = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.n_state < 1 or self.n_out < 1:
            raise InvalidInputError("system dimensions must be positive")
        if self.u_lift is None:
            n = self.n_state
            object.__setattr__(self, "u_lift", lambda t: np.zeros(n))

    def check_dims(self, t: float) -> None:
        """Validate matrix shapes at time t (used when sampling during runs)."""
        a = np.asarray(self.A_of(t))
        c = np.asarray(self.C_of(t))
        u = np.asarray(self.u_lift(t))
        if a.shape != (self.n_state, self.n_state):
            raise InvalidInputError(f"A({t}) has shape {a.shape}, expected {(self.n_state, self.n_state)}")
        if c.shape != (self.n_out, self.n_state):
            raise InvalidInputError(f"C({t}) has shape {c.shape}, expected {(self.n_out, self.n_state)}")
        if u.shape != (self.n_state,):
            raise InvalidInputError(f"u_lift({t}) has shape {u.shape}, expected {(self.n_state,)}")


@dataclass(frozen=True)
class PeWindow:
    """Sliding window of length ``delta`` with quadrature step ``dt``."""

    delta: float
    dt: float

    def __post_init__(self):
        if not (self.delta > 0.0 and self.dt > 0.0):
            raise InvalidInputError("window length and quadrature step must be positive")
        if self.delta < self.dt:
            raise InvalidInputError("window length must be at least the quadrature step")

    @property
    def n_steps(self) -> int:
        return max(1, round(self.delta / self.dt))

    @property
    def step(self) -> float:
        return self.delta / self.n_steps


@dataclass(frozen=True)
class SourceGeometry:
    """Known source points z_1..z_l and output weights alpha (sum = 1)."""

    points: np.ndarray
    alpha: np.ndarray | None = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise InvalidInputError("source points must be an (l, n) array with n in {2, 3}")
        object.__setattr__(self, "points", pts)
        l = pts.shape[0]
        if self.alpha is None:
            alpha = np.full(l, 1.0 / l)
        else:
            alpha = np.asarray(self.alpha, dtype=float).ravel()
            if alpha.shape[0] != l:
                raise InvalidInputError(f"alpha has {alpha.shape[0]} entries for {l} source points")
            if abs(alpha.sum() - 1.0) > 1e-12:
                raise InvalidInputError(f"alpha must sum to 1, got {alpha.sum():.17g}")
        object.__setattr__(self, "alpha", alpha)

    @property
    def l(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def d_matrix(self) -> np.ndarray:
        """Weighting matrix xi alpha^T - I (rank l-1)."""
        return np.outer(np.ones(self.l), self.alpha) - np.eye(self.l)

    def dz(self) -> np.ndarray:
        """(l, n) matrix with rows (sum_i alpha_i z_i - z_j)^T."""
        return self.d_matrix() @ self.points

    def excitation_matrix(self) -> np.ndarray:
        """Geometry term of the multi-range excitation conditions (n, n)."""
        dz = self.dz()
        return dz.T @ dz

    def weighted_center(self) -> np.ndarray:
        return self.alpha @ self.points


@dataclass(frozen=True)
class PeReport:
    """Outcome of one persistent-excitation condition on one window."""

    kind: str
    value: float
    threshold: float
    satisfied: bool
    t: float = 0.0


def transition_matrix(sys: LtvSystem, t0: float, t1: float, dt: float = 1e-3) -> np.ndarray:
    """State-transition matrix Phi(t1, t0), integrated column-wise by RK4."""
    if t1 < t0:
        raise InvalidInputError("transition matrix requested with t1 < t0")
    n = sys.n_state
    phi = np.eye(n)
    if t1 == t0:
        return phi
    steps = max(1, int(np.ceil((t1 - t0) / dt)))
    h = (t1 - t0) / steps
    f = lambda s, m: np.asarray(sys.A_of(s)) @ m
    t = t0
    for _ in range(steps):
        phi = rk4_step(f, t, phi, h)
        t += h
    if not np.isfinite(phi).all():
        raise NumericError("transition matrix blew up", t=t1)
    return phi


def _window_gramian(sys: LtvSystem, t: float, w: PeWindow, integrand, forward: bool) -> SymMatrix:
    """Trapezoidal window integral of ``integrand(s, Phi)`` normalized by delta.

    ``forward=True`` propagates Phi(s, t); ``forward=False`` propagates
    Phi(t, s) (which satisfies d/ds Phi = -Phi A(s)).
    """
    n = w.n_steps
    h = w.step
    phi = np.eye(sys.n_state)
    if forward:
        f = lambda s, m: np.asarray(sys.A_of(s)) @ m
    else:
        f = lambda s, m: -m @ np.asarray(sys.A_of(s))
    acc = 0.5 * integrand(t, phi)
    s = t
    for k in range(1, n + 1):
        phi = rk4_step(f, s, phi, h)
        s = t + k * h
        g = integrand(s, phi)
        acc = acc + (0.5 * g if k == n else g)
    return SymMatrix(acc * (h / w.delta), asym_tol=1e-6)


def observability_gramian(sys: LtvSystem, t: float, w: PeWindow) -> SymMatrix:
    """Windowed Grammian (1/delta) int Phi^T C^T C Phi ds over [t, t+delta]."""

    def integrand(s, phi):
        m = np.asarray(sys.C_of(s)) @ phi
        return m.T @ m

    return _window_gramian(sys, t, w, integrand, forward=True)


def riccati_gramian_wq(sys: LtvSystem, Q_of: Callable[[float], object], t: float, w: PeWindow) -> SymMatrix:
    """Q-weighted observability Grammian governing Riccati conditioning."""

    def integrand(s, phi):
        m = np.asarray(sys.C_of(s)) @ phi
        return m.T @ np.asarray(Q_of(s)) @ m

    return _window_gramian(sys, t, w, integrand, forward=True)


def controllability_gramian_wv(sys: LtvSystem, V_of: Callable[[float], object], t: float, w: PeWindow) -> SymMatrix:
    """Windowed Grammian (1/delta) int Phi(t,s) V(s) Phi(t,s)^T ds."""

    def integrand(s, phi):
        return phi @ np.asarray(V_of(s)) @ phi.T

    return _window_gramian(sys, t, w, integrand, forward=False)


def instantaneous_observability_rank(sys: LtvSystem, t: float, depth: int = 1, fd_step: float = 1e-5) -> int:
    """Numerical rank of the stacked observation-space matrix at time t.

    Builds N_0 = C, N_{k+1} = N_k A + dN_k/dt up to ``depth``, with time
    derivatives by central finite differences at ``fd_step``, and returns
    the numerical rank of the stack.
    """
    if depth < 0:
        raise InvalidInputError("depth must be nonnegative")

    def n_k(k: int, s: float) -> np.ndarray:
        if k == 0:
            return np.asarray(sys.C_of(s), dtype=float)
        ndot = (n_k(k - 1, s + fd_step) - n_k(k - 1, s - fd_step)) / (2.0 * fd_step)
        return n_k(k - 1, s) @ np.asarray(sys.A_of(s)) + ndot

    rows = np.vstack([n_k(k, t) for k in range(depth + 1)])
    return svd_rank(rows)


def _trapezoid_matrix(values: Sequence[np.ndarray], h: float) -> np.ndarray:
    acc = 0.5 * (values[0] + values[-1])
    for v in values[1:-1]:
        acc = acc + v
    return acc * h


def pe_metric(M_of: Callable[[float], np.ndarray], t: float, w: PeWindow) -> float:
    """Smallest eigenvalue of the windowed average of M^T M."""
    h = w.step
    vals = []
    for k in range(w.n_steps + 1):
        m = np.atleast_2d(np.asarray(M_of(t + k * h), dtype=float))
        if not np.isfinite(m).all():
            raise NumericError("non-finite excitation matrix sample", t=t + k * h)
        vals.append(m.T @ m)
    avg = _trapezoid_matrix(vals, h) / w.delta
    lo, _ = sym_eig_extrema(avg)
    return lo


def projector(y: np.ndarray) -> np.ndarray:
    """Orthogonal projector I - y y^T onto the complement of unit vector y."""
    y = np.asarray(y, dtype=float)
    return np.eye(y.shape[0]) - np.outer(y, y)


def _fd_derivative(f: Callable[[float], np.ndarray], dt: float) -> Callable[[float], np.ndarray]:
    return lambda s: (np.asarray(f(s + dt), dtype=float) - np.asarray(f(s - dt), dtype=float)) / (2.0 * dt)


def pe_condition_report(
    kind: str,
    t: float,
    window: PeWindow,
    *,
    threshold: float = 1e-6,
    u_of: Callable[[float], np.ndarray] | None = None,
    udot_of: Callable[[float], np.ndarray] | None = None,
    directions_of: Callable[[float], np.ndarray] | None = None,
    ranges_of: Callable[[float], np.ndarray] | None = None,
    geometry: SourceGeometry | None = None,
) -> PeReport:
    """Evaluate one named persistent-excitation condition over [t, t+delta].

    For the integral conditions the returned value is the smallest
    eigenvalue of the windowed matrix; for ``biased_range_C2`` it is the
    peak norm of the range-rate vector over the window samples. When a
    derivative input is required but not supplied analytically it is
    formed by central differences at the quadrature step.
    """
    if kind not in PE_KINDS:
        raise InvalidInputError(f"unknown excitation condition {kind!r}")
    h = window.step

    def require(name, val):
        if val is None:
            raise InvalidInputError(f"condition {kind!r} requires {name}")
        return val

    if kind == "direction_persistent":
        dirs = require("directions_of", directions_of)

        def proj_sum(s):
            ys = np.atleast_2d(np.asarray(dirs(s), dtype=float))
            acc = np.zeros((ys.shape[1], ys.shape[1]))
            for y in ys:
                acc += projector(y)
            return acc

        vals = [proj_sum(t + k * h) for k in range(window.n_steps + 1)]
        avg = _trapezoid_matrix(vals, h) / window.delta
        value, _ = sym_eig_extrema(avg)
        return PeReport(kind, value, threshold, value > threshold, t)

    if kind == "biased_range_C2":
        rng = require("ranges_of", ranges_of)
        rdot = _fd_derivative(rng, h)
        peaks = [float(np.linalg.norm(rdot(t + k * h))) for k in range(window.n_steps + 1)]
        value = max(peaks)
        return PeReport(kind, value, threshold, value > threshold, t)

    if kind in ("range_u", "multi_range_u", "biased_range_C1"):
        sig = require("u_of", u_of)
    else:  # range_udot, multi_range_udot
        sig = udot_of if udot_of is not None else _fd_derivative(require("u_of", u_of), h)

    vals = [np.outer(v, v) for v in (np.asarray(sig(t + k * h), dtype=float) for k in range(window.n_steps + 1))]
    avg = _trapezoid_matrix(vals, h) / window.delta
    if kind in ("multi_range_u", "multi_range_udot", "biased_range_C1"):
        avg = avg + require("geometry", geometry).excitation_matrix()
    value, _ = sym_eig_extrema(avg)
    return PeReport(kind, value, threshold, value > threshold, t)


@dataclass(frozen=True)
class StaticSolvability:
    """Result of the degenerate-geometry test for bias-corrupted ranges.

    ``has_solution_w = True`` means a vector w satisfies the distance
    constraints, i.e. the static observability condition FAILS.
    """

    has_solution_w: bool
    residual: float
    w: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]


def static_range_solvability(geometry: SourceGeometry, body, rtol: float = 1e-8) -> StaticSolvability:
    """Check whether the static range-bias constraint system is solvable.

    Solves the (l-1) x n linear system ``(z_i - z_1)^T w = d_i - d_1`` in
    the least-squares sense; a near-zero residual (relative to the largest
    distance) means the geometry is degenerate for a motionless body.
    """
    body = np.asarray(body, dtype=float).ravel()
    if geometry.l < 2:
        raise InvalidInputError("at least two source points are required")
    if body.shape[0] != geometry.n:
        raise InvalidInputError("body dimension does not match source geometry")
    diffs = body[None, :] - geometry.points
    dists = np.linalg.norm(diffs, axis=1)
    if np.any(dists < 1e-9):
        raise InvalidInputError("body position coincides with a source point")
    a = geometry.points[1:] - geometry.points[0]
    b = dists[1:] - dists[0]
    w, residual, _ = solve_least_squares(a, b)
    scale = float(dists.max())
    return StaticSolvability(residual < rtol * scale, residual, w)
