"""Position/bias observer variants built on the Riccati gain machinery.

Each variant lifts a nonlinear localization problem into an exactly linear
time-varying system whose coefficients depend on the current measurement,
then runs the Riccati observer on it. State layouts (n = space dimension,
l = number of source points, x = position, a = velocity bias, b = common
range bias):

    kind                  state                              dim     outputs
    dir_unbiased          x                                  n       l*n
    dir_biased_single     [x, a]                             2n      n
    dir_biased_multi      [x, a]                             2n      l*n
    range_unbiased        [x, 0.5|x|^2]                      n+1     1
    range_biased          [x, a, 0.5|x|^2, a.x, |a|^2]       2n+3    1
    range_multi_unbiased  [x, y0]                            n+1     l+1
    range_multi_biased    [x, a, y0, a.x, |a|^2]             2n+3    l+1
    range_meas_bias       [x, y0 - b(alpha.ybar), b]         n+2     l+1
    range_alternate       [x, 0.5|x|^2], no Riccati matrix   n+1     1

with y0 the weighted output sum(alpha_i * (0.5 ybar_i^2 - 0.5|z_i|^2)).

Direction residuals are built in source-relative form, projecting
(x_hat - z_i) onto the complement of the measured direction, so a single
source at the origin is just the l = 1 specialization.

Within one step the measurement (and hence A, C, the input lift and the
correction term) is frozen; estimate and Riccati matrix advance by RK4
over [t, t+h] simultaneously.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .ltv import LtvSystem, SourceGeometry, projector
from .numerics import rk4_step, svd_rank
from .riccati import GainSchedule, RiccatiState, cre_step

VARIANT_KINDS = (
    "dir_unbiased",
    "dir_biased_single",
    "dir_biased_multi",
    "range_unbiased",
    "range_biased",
    "range_multi_unbiased",
    "range_multi_biased",
    "range_meas_bias",
    "range_alternate",
)

_DIR_KINDS = ("dir_unbiased", "dir_biased_single", "dir_biased_multi")
_BIASED_KINDS = ("dir_biased_single", "dir_biased_multi", "range_biased", "range_multi_biased")
_MULTI_RANGE_KINDS = ("range_multi_unbiased", "range_multi_biased", "range_meas_bias")

# Distance below which a direction to a source is undefined and the
# channel is dropped for the step.
DEGENERATE_RANGE = 1e-9


def _origin_geometry(n: int) -> SourceGeometry:
    return SourceGeometry(np.zeros((1, n)))


@dataclass(frozen=True)
class ObserverVariant:
    """Observer family member: kind, space dimension and source geometry.

    ``use_measured_velocity=False`` makes the observer ignore the measured
    velocity (input held at zero); with a body moving at constant unknown
    velocity the bias estimate then converges to that velocity.
    """

    kind: str
    n: int = 3
    geometry: SourceGeometry | None = None
    use_measured_velocity: bool = True

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise InvalidConfigError(f"unknown observer kind {self.kind!r}")
        if self.n < 2:
            raise InvalidConfigError("space dimension must be at least 2")
        geo = self.geometry
        if geo is None:
            geo = _origin_geometry(self.n)
            object.__setattr__(self, "geometry", geo)
        if geo.n != self.n:
            raise InvalidConfigError(f"geometry dimension {geo.n} does not match space dimension {self.n}")
        if self.kind == "dir_biased_single" and geo.l != 1:
            raise InvalidConfigError("dir_biased_single takes exactly one source point")
        if self.kind in ("range_unbiased", "range_biased", "range_alternate"):
            if geo.l != 1 or np.any(geo.points != 0.0):
                raise InvalidConfigError(
                    f"{self.kind} measures the range to the origin; use a multi-range kind for offset sources"
                )
        if self.kind == "range_meas_bias" and geo.l < 2:
            raise InvalidConfigError("range_meas_bias needs at least two source points")

    @property
    def l(self) -> int:
        return self.geometry.l

    @property
    def n_state(self) -> int:
        n = self.n
        return {
            "dir_unbiased": n,
            "dir_biased_single": 2 * n,
            "dir_biased_multi": 2 * n,
            "range_unbiased": n + 1,
            "range_biased": 2 * n + 3,
            "range_multi_unbiased": n + 1,
            "range_multi_biased": 2 * n + 3,
            "range_meas_bias": n + 2,
            "range_alternate": n + 1,
        }[self.kind]

    @property
    def n_out(self) -> int:
        if self.kind in _DIR_KINDS:
            return self.l * self.n
        if self.kind in _MULTI_RANGE_KINDS:
            return self.l + 1
        return 1

    @property
    def has_velocity_bias_state(self) -> bool:
        return self.kind in _BIASED_KINDS

    @property
    def needs_directions(self) -> bool:
        return self.kind in _DIR_KINDS

    @property
    def needs_ranges(self) -> bool:
        return not self.needs_directions


@dataclass(frozen=True)
class Measurement:
    """One synchronized measurement sample.

    ``velocity`` is the measured body velocity (bias-corrupted in the
    biased scenarios). ``directions`` holds unit vectors from each source
    to the body; ``ranges`` the measured distances (possibly offset by a
    common bias). ``dropped`` flags direction channels that were unusable
    because the body coincided with the source.
    """

    t: float
    velocity: np.ndarray
    directions: np.ndarray | None = None
    ranges: np.ndarray | None = None
    dropped: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.velocity, dtype=float).ravel()
        object.__setattr__(self, "velocity", v)
        if not np.isfinite(v).all():
            raise InvalidInputError("measured velocity is not finite")
        if self.directions is not None:
            d = np.atleast_2d(np.asarray(self.directions, dtype=float))
            object.__setattr__(self, "directions", d)
            # |norm - 1| <= 1e-9 checked on the squared norm (factor 2).
            nrm2_err = np.abs((d * d).sum(axis=1) - 1.0)
            if self.dropped is not None:
                nrm2_err = nrm2_err[~np.asarray(self.dropped, dtype=bool)]
            if nrm2_err.size and nrm2_err.max() > 2e-9:
                raise InvalidInputError("direction measurements must be unit vectors")
        if self.ranges is not None:
            r = np.asarray(self.ranges, dtype=float).ravel()
            object.__setattr__(self, "ranges", r)
            if r.size and r.min() < 0.0:
                raise InvalidInputError("range measurements must be nonnegative")
        if self.dropped is not None:
            object.__setattr__(self, "dropped", np.asarray(self.dropped, dtype=bool))


@dataclass(frozen=True)
class FrozenModel:
    """System matrices and measured output held over one step."""

    A: np.ndarray
    C: np.ndarray
    u_bar: np.ndarray
    y: np.ndarray


class ObserverModel:
    """Builds the measurement-frozen LTV matrices of one observer variant."""

    def __init__(self, variant: ObserverVariant):
        if variant.kind == "range_alternate":
            raise InvalidInputError("range_alternate is not a Riccati observer; use alternate_range_step")
        self.variant = variant
        geo = variant.geometry
        n, l = variant.n, geo.l
        self._z = geo.points
        self._alpha = geo.alpha
        self._dmat = geo.d_matrix()
        self._dz = geo.dz()
        self._z_center = geo.weighted_center()
        self._half_z2 = 0.5 * np.sum(self._z**2, axis=1)
        # Constant blocks reused across steps.
        if variant.kind in _DIR_KINDS:
            ns = variant.n_state
            self._a_const = np.zeros((ns, ns))
            if variant.has_velocity_bias_state:
                self._a_const[:n, n : 2 * n] = np.eye(n)

    def _velocity(self, m: Measurement) -> np.ndarray:
        u = m.velocity
        if u.shape[0] != self.variant.n:
            raise InvalidInputError("measured velocity dimension mismatch")
        if not self.variant.use_measured_velocity:
            return np.zeros_like(u)
        return u

    def frozen(self, m: Measurement) -> FrozenModel:
        kind = self.variant.kind
        n, l = self.variant.n, self.variant.l
        ns, no = self.variant.n_state, self.variant.n_out
        u = self._velocity(m)

        if kind in _DIR_KINDS:
            if m.directions is None:
                raise InvalidInputError(f"{kind} requires direction measurements")
            if m.directions.shape != (l, n):
                raise InvalidInputError(f"expected {l} direction measurements of dimension {n}")
            c = np.zeros((no, ns))
            y = np.zeros(no)
            for i in range(l):
                if m.dropped is not None and m.dropped[i]:
                    continue  # zero rows: channel contributes nothing this step
                pi = projector(m.directions[i])
                c[i * n : (i + 1) * n, :n] = pi
                y[i * n : (i + 1) * n] = pi @ self._z[i]
            a = self._a_const
            u_bar = np.zeros(ns)
            u_bar[:n] = u
            return FrozenModel(a, c, u_bar, y)

        if m.ranges is None:
            raise InvalidInputError(f"{kind} requires range measurements")
        if m.ranges.shape[0] != l:
            raise InvalidInputError(f"expected {l} range measurements")
        ybar = m.ranges
        half_sq = 0.5 * ybar**2

        if kind in ("range_unbiased", "range_biased"):
            a = np.zeros((ns, ns))
            c = np.zeros((1, ns))
            u_bar = np.zeros(ns)
            u_bar[:n] = u
            y = np.array([half_sq[0]])
            if kind == "range_unbiased":
                a[n, :n] = u
                c[0, n] = 1.0
            else:
                a[:n, n : 2 * n] = np.eye(n)
                a[2 * n, :n] = u
                a[2 * n, 2 * n + 1] = 1.0
                a[2 * n + 1, n : 2 * n] = u
                a[2 * n + 1, 2 * n + 2] = 1.0
                c[0, 2 * n] = 1.0
            return FrozenModel(a, c, u_bar, y)

        # Weighted multi-range output vector shared by the remaining kinds.
        y0 = float(self._alpha @ (half_sq - self._half_z2))
        y = np.concatenate(([y0], half_sq - y0 - self._half_z2))

        if kind == "range_multi_unbiased":
            a = np.zeros((ns, ns))
            a[n, :n] = u
            c = np.zeros((no, ns))
            c[0, n] = 1.0
            c[1:, :n] = self._dz
            u_bar = np.concatenate((u, [-self._z_center @ u]))
            return FrozenModel(a, c, u_bar, y)

        if kind == "range_multi_biased":
            a = np.zeros((ns, ns))
            a[:n, n : 2 * n] = np.eye(n)
            a[2 * n, :n] = u
            a[2 * n, n : 2 * n] = -self._z_center
            a[2 * n, 2 * n + 1] = 1.0
            a[2 * n + 1, n : 2 * n] = u
            a[2 * n + 1, 2 * n + 2] = 1.0
            c = np.zeros((no, ns))
            c[0, 2 * n] = 1.0
            c[1:, :n] = self._dz
            u_bar = np.zeros(ns)
            u_bar[:n] = u
            u_bar[2 * n] = -self._z_center @ u
            return FrozenModel(a, c, u_bar, y)

        # range_meas_bias: C couples the bias state through the measured ranges.
        a = np.zeros((ns, ns))
        a[n, :n] = u
        c = np.zeros((no, ns))
        c[0, n] = 1.0
        c[0, n + 1] = float(self._alpha @ ybar)
        c[1:, :n] = self._dz
        c[1:, n + 1] = -(self._dmat @ ybar)
        u_bar = np.concatenate((u, [-self._z_center @ u], [0.0]))
        return FrozenModel(a, c, u_bar, y)


def build(variant: ObserverVariant) -> ObserverModel:
    """Factory for the measurement-parameterized LTV model of a variant."""
    return ObserverModel(variant)


def as_ltv(variant: ObserverVariant, measurement_of: Callable[[float], Measurement]) -> LtvSystem:
    """Adapter exposing an observer model driven by a measurement stream
    as a plain time-indexed system (for Grammian/excitation analysis)."""
    model = build(variant)
    return LtvSystem(
        n_state=variant.n_state,
        n_out=variant.n_out,
        A_of=lambda t: model.frozen(measurement_of(t)).A,
        C_of=lambda t: model.frozen(measurement_of(t)).C,
        u_lift=lambda t: model.frozen(measurement_of(t)).u_bar,
    )


@dataclass(frozen=True)
class ObserverState:
    """Estimate vector, Riccati matrix and variant tag; a plain value."""

    X_hat: np.ndarray
    riccati: RiccatiState
    variant: ObserverVariant

    @property
    def t(self) -> float:
        return self.riccati.t

    def position(self) -> np.ndarray:
        return self.X_hat[: self.variant.n]

    def velocity_bias(self) -> np.ndarray | None:
        if not self.variant.has_velocity_bias_state:
            return None
        return self.X_hat[self.variant.n : 2 * self.variant.n]

    def range_bias(self) -> float | None:
        if self.variant.kind != "range_meas_bias":
            return None
        return float(self.X_hat[-1])


def lift_state(variant: ObserverVariant, x, a=None, b: float = 0.0) -> np.ndarray:
    """Augmented state vector corresponding to position x, velocity bias a
    and range bias b (used both to initialize estimates and to form the
    exact augmented truth when computing estimation errors)."""
    x = np.asarray(x, dtype=float).ravel()
    n = variant.n
    if x.shape[0] != n:
        raise InvalidInputError(f"position must have dimension {n}")
    a = np.zeros(n) if a is None else np.asarray(a, dtype=float).ravel()
    kind = variant.kind
    half_x2 = 0.5 * float(x @ x)
    if kind == "dir_unbiased":
        return x.copy()
    if kind in ("dir_biased_single", "dir_biased_multi"):
        return np.concatenate((x, a))
    if kind in ("range_unbiased", "range_alternate"):
        return np.concatenate((x, [half_x2]))
    if kind == "range_biased":
        return np.concatenate((x, a, [half_x2, float(a @ x), float(a @ a)]))
    y0 = half_x2 - float(variant.geometry.weighted_center() @ x)
    if kind == "range_multi_unbiased":
        return np.concatenate((x, [y0]))
    if kind == "range_multi_biased":
        return np.concatenate((x, a, [y0, float(a @ x), float(a @ a)]))
    # range_meas_bias
    return np.concatenate((x, [y0 - 0.5 * b * b], [b]))


def initial_state(
    variant: ObserverVariant,
    xhat0,
    ahat0=None,
    bhat0: float = 0.0,
    p0_scale: float = 100.0,
    t0: float = 0.0,
) -> ObserverState:
    """Initial estimate with P(0) = p0_scale * I and augmented entries
    consistent with the initial position/bias guesses."""
    if not p0_scale > 0.0:
        raise InvalidInputError("p0_scale must be positive")
    x0 = lift_state(variant, xhat0, ahat0, bhat0)
    return ObserverState(x0, RiccatiState.initial(variant.n_state, p0_scale, t0), variant)


def observer_step(
    os: ObserverState,
    g: GainSchedule,
    m: Measurement,
    h: float,
    model: ObserverModel | None = None,
) -> ObserverState:
    """Advance estimate and Riccati matrix from t to t+h.

    The measurement must be stamped at the observer's clock. Coefficients
    and the correction term K (y - C x_hat) are frozen at the step start;
    both the estimate and P then advance by RK4 over [t, t+h].
    """
    t = os.riccati.t
    if abs(m.t - t) > 1e-9 * max(1.0, abs(t)):
        raise InvalidInputError(f"measurement at t={m.t} does not match observer clock t={t}")
    if model is None:
        model = build(os.variant)
    fz = model.frozen(m)
    q = np.asarray(g.Q_of(t), dtype=float)
    qc = q @ fz.C
    gain = g.k_at(t) * (os.riccati.P.as_array() @ qc.T)
    drive = fz.u_bar + gain @ (fz.y - fz.C @ os.X_hat)
    a = fz.A
    x_next = rk4_step(lambda s, x: a @ x + drive, t, os.X_hat, h)
    rs_next = cre_step_frozen(a, fz.C.T @ qc, np.asarray(g.V_of(t), dtype=float), os.riccati, h)
    return ObserverState(x_next, rs_next, os.variant)


def error_dynamics_step(
    x_tilde: np.ndarray,
    fz: FrozenModel,
    g: GainSchedule,
    rs: RiccatiState,
    h: float,
) -> np.ndarray:
    """Advance the estimation error under d/dt e = (A - K C) e.

    Uses the same per-step conventions as observer_step (coefficients and
    correction frozen at the step start) so that a joint truth/observer
    simulation and this direct integration agree to round-off.
    """
    q = np.asarray(g.Q_of(rs.t), dtype=float)
    gain = g.k_at(rs.t) * (rs.P.as_array() @ (fz.C.T @ q))
    drive = -gain @ (fz.C @ x_tilde)
    return rk4_step(lambda s, e: fz.A @ e + drive, rs.t, np.asarray(x_tilde, dtype=float), h)


def alternate_range_step(
    state: tuple[np.ndarray, float],
    k1: float,
    k2_of: Callable[[float], float],
    m: Measurement,
    h: float,
) -> tuple[np.ndarray, float]:
    """One step of the non-Riccati single-range observer.

    dx_hat/dt = u + k1 (y - y_hat) u,  dy_hat/dt = u^T x_hat + k2(t) (y - y_hat)
    with y = 0.5 * range^2 and 0 <= k2(t) bounded. The position correction
    acts along u, which makes the energy |x_tilde|^2 / k1 + y_tilde^2
    non-increasing (its derivative is -2 k2 y_tilde^2); convergence under
    persistently exciting u is asymptotic, with no certified exponential
    rate.
    """
    if not k1 > 0.0:
        raise InvalidInputError("k1 must be positive")
    if m.ranges is None:
        raise InvalidInputError("range_alternate requires a range measurement")
    x_hat = np.asarray(state[0], dtype=float).ravel()
    u = m.velocity
    y = 0.5 * float(m.ranges[0]) ** 2

    def f(s, packed):
        k2 = float(k2_of(s))
        if k2 < 0.0:
            raise InvalidInputError("k2(t) must be nonnegative")
        xh, yh = packed[:-1], packed[-1]
        r = y - yh
        return np.concatenate((u + k1 * r * u, [u @ xh + k2 * r]))

    packed = rk4_step(f, m.t, np.concatenate((x_hat, [float(state[1])])), h)
    return packed[:-1], float(packed[-1])


def alternate_energy(state: tuple[np.ndarray, float], x_true, y_true: float, k1: float) -> float:
    """Decreasing energy |x_tilde|^2 / k1 + y_tilde^2 of the alternate observer."""
    x_tilde = np.asarray(x_true, dtype=float).ravel() - np.asarray(state[0], dtype=float).ravel()
    y_tilde = y_true - float(state[1])
    return float(x_tilde @ x_tilde) / k1 + y_tilde * y_tilde


def estimate_velocity_mode(
    kind: str,
    geometry: SourceGeometry,
    xhat0,
    vhat0=None,
    p0_scale: float = 100.0,
    n: int = 3,
    t0: float = 0.0,
) -> ObserverState:
    """Observer configured to estimate a constant body velocity.

    The measured velocity input is ignored (held at zero), so the bias
    state tracks the total body velocity. Only the bias-augmented
    multi-source kinds support this; the source geometry must carry enough
    rank for observability without input excitation.
    """
    if kind not in ("dir_biased_multi", "range_multi_biased"):
        raise InvalidConfigError(f"velocity estimation requires a bias-augmented multi-source kind, got {kind!r}")
    if kind == "dir_biased_multi" and geometry.l < 2:
        raise InvalidConfigError("velocity estimation from directions needs at least two source points")
    if kind == "range_multi_biased" and svd_rank(geometry.dz()) < n:
        raise InvalidConfigError(
            "velocity estimation from ranges needs source points spanning the space "
            "(four non-coplanar points in 3D, three non-aligned in 2D)"
        )
    variant = ObserverVariant(kind, n=n, geometry=geometry, use_measured_velocity=False)
    return initial_state(variant, xhat0, vhat0, p0_scale=p0_scale, t0=t0)


def direction_excitation(directions, q_blocks=None) -> np.ndarray:
    """Sum of projector sandwiches Pi_i Q_ii Pi_i over the measured directions.

    Positive semidefinite always; positive definite as soon as two
    directions are non-collinear and every Q_ii is positive definite.
    """
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    n = dirs.shape[1]
    acc = np.zeros((n, n))
    for i, y in enumerate(dirs):
        pi = projector(y)
        q = np.eye(n) if q_blocks is None else np.asarray(q_blocks[i], dtype=float)
        acc += pi @ q @ pi
    return acc
