"""Time-varying vector fields on manifolds: integration and flow analysis.

The integrator is a geometric fourth-order Runge-Kutta scheme: stage
derivatives are evaluated at points reached by the exponential map, parallel
transported back to the tangent space at the step's base point, combined with
the classical RK4 weights, and the step is taken with one exponential map
followed by constraint projection.  Flow pushforwards are computed by
geodesic-variation finite differences, and Lipschitz constants are estimated
in the parallel-transport sense (transported field differences over distance)
alongside the covariant-derivative form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .manifolds import (
    CutLocusError,
    Manifold,
    ManifoldMismatchError,
    ManifoldPoint,
    TangentVector,
)

DEFAULT_STEP = 1e-3
LIPSCHITZ_SAFETY = 1.05   # inflation factor applied before envelope use
CUT_FLAG_MARGIN = 1e-3    # envelope rows this close to the cut locus are flagged


class IntegrationError(RuntimeError):
    """Field evaluation failed or produced non-finite values."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t={t})")
        self.t = t


@dataclass(frozen=True, eq=False)
class TimeVaryingField:
    """Evaluatable vector field f(t, x), optionally with an input channel.

    ``rhs(t, coords) -> components`` is the raw kernel used by the
    integrator; outputs are projected onto the tangent space at every call.
    ``input_rhs(t, coords, u)`` realizes f(t, x, u) for disturbance studies.
    Handles must be pure with respect to observable state so they can be
    called concurrently.
    """

    manifold: Manifold
    rhs: Callable[[float, np.ndarray], np.ndarray]
    input_rhs: Callable[[float, np.ndarray, np.ndarray], np.ndarray] | None = None
    equilibrium: np.ndarray | None = None

    def __post_init__(self):
        if self.equilibrium is not None:
            eq = self.manifold.project(np.array(self.equilibrium, dtype=float))
            eq.setflags(write=False)
            object.__setattr__(self, "equilibrium", eq)

    def eval_raw(self, t: float, coords: np.ndarray) -> np.ndarray:
        return self.manifold.project_tangent(coords, np.asarray(self.rhs(t, coords), dtype=float))

    def __call__(self, t: float, x: ManifoldPoint) -> TangentVector:
        if x.manifold != self.manifold:
            raise ManifoldMismatchError(
                f"field on {self.manifold.name} evaluated at a {x.manifold.name} point")
        return TangentVector(x, self.eval_raw(t, x.coords))

    @property
    def equilibrium_point(self) -> ManifoldPoint | None:
        if self.equilibrium is None:
            return None
        return ManifoldPoint(self.manifold, self.equilibrium)

    def equilibrium_residual(self, t_samples: Sequence[float] = (0.0, 1.0, 5.0, 10.0)) -> float:
        """Max field norm at the declared equilibrium over sampled times."""
        if self.equilibrium is None:
            raise ValueError("field declares no equilibrium")
        m = self.manifold
        return max(m.norm(self.equilibrium, self.eval_raw(t, self.equilibrium))
                   for t in t_samples)

    def with_input_signal(self, signal: Callable[[float], np.ndarray]) -> "TimeVaryingField":
        """Close the input channel with a signal u(t), yielding f(t, x, u(t))."""
        if self.input_rhs is None:
            raise ValueError("field has no input channel")
        input_rhs = self.input_rhs

        def closed(t: float, coords: np.ndarray) -> np.ndarray:
            return input_rhs(t, coords, np.asarray(signal(t), dtype=float))

        return TimeVaryingField(self.manifold, closed, equilibrium=None)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled flow: strictly increasing times with on-manifold points."""

    manifold: Manifold
    times: np.ndarray
    points: np.ndarray  # shape (n,) + ambient_shape
    step: float

    def __post_init__(self):
        self.times.setflags(write=False)
        self.points.setflags(write=False)

    def __len__(self):
        return len(self.times)

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t1(self) -> float:
        return float(self.times[-1])

    def point(self, i: int) -> ManifoldPoint:
        return ManifoldPoint(self.manifold, self.points[i])

    @property
    def final_point(self) -> ManifoldPoint:
        return self.point(len(self.times) - 1)

    def distances_to(self, x: ManifoldPoint) -> np.ndarray:
        m = self.manifold
        return np.array([m.dist(p, x.coords) for p in self.points])

    def max_step_length(self) -> float:
        m = self.manifold
        return max((m.dist(self.points[i], self.points[i + 1])
                    for i in range(len(self.times) - 1)), default=0.0)

    def to_json(self) -> dict:
        """Serialize as {kind, step, times, points} with points row-major."""
        return {
            "kind": self.manifold.name,
            "step": self.step,
            "times": self.times.tolist(),
            "points": [p.ravel().tolist() for p in self.points],
        }

    def csv_rows(self) -> tuple[list[str], list[list[float]]]:
        """Header and rows for the CSV layout (t, then embedding coords)."""
        n_coords = int(np.prod(self.manifold.ambient_shape))
        header = ["t"] + [f"c{i}" for i in range(n_coords)]
        rows = [[float(t)] + [float(c) for c in np.ravel(p)]
                for t, p in zip(self.times, self.points)]
        return header, rows


def _rk4_step(field: TimeVaryingField, t: float, x: np.ndarray, dt: float) -> np.ndarray:
    m = field.manifold
    k1 = field.eval_raw(t, x)
    x2 = m.exp(x, (0.5 * dt) * k1)
    k2 = m.transport(x2, x, field.eval_raw(t + 0.5 * dt, x2))
    x3 = m.exp(x, (0.5 * dt) * k2)
    k3 = m.transport(x3, x, field.eval_raw(t + 0.5 * dt, x3))
    x4 = m.exp(x, dt * k3)
    k4 = m.transport(x4, x, field.eval_raw(t + dt, x4))
    v = (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return m.project(m.exp(x, v))


def _advance(field: TimeVaryingField, t0: float, x0: np.ndarray,
             t1: float, step: float) -> np.ndarray:
    """Integrate from (t0, x0) to t1, shortening the last step to land exactly."""
    x = x0
    t = t0
    n_full = int((t1 - t0) / step)
    for i in range(n_full):
        x = _rk4_step(field, t, x, step)
        t = t0 + (i + 1) * step
        if not np.all(np.isfinite(x)):
            raise IntegrationError("non-finite state during integration", t)
    if t < t1 - 1e-15 * max(1.0, abs(t1)):
        x = _rk4_step(field, t, x, t1 - t)
        if not np.all(np.isfinite(x)):
            raise IntegrationError("non-finite state during integration", t1)
    return x


def flow(field: TimeVaryingField, t0: float, x0: ManifoldPoint,
         t1: float, step: float = DEFAULT_STEP) -> Trajectory:
    """Numerical flow of the field from (t0, x0) to t1, sampled per step."""
    if x0.manifold != field.manifold:
        raise ManifoldMismatchError("initial condition manifold does not match the field")
    if t1 < t0:
        raise ValueError(f"t1 must be >= t0, got [{t0}, {t1}]")
    if step <= 0:
        raise ValueError("step must be positive")
    m = field.manifold
    times = [t0]
    pts = [m.project(x0.coords.copy())]
    t = t0
    x = pts[0]
    while t < t1 - 1e-15 * max(1.0, abs(t1)):
        dt = min(step, t1 - t)
        x = _rk4_step(field, t, x, dt)
        t = min(t + dt, t1)
        if not np.all(np.isfinite(x)):
            raise IntegrationError("non-finite state during integration", t)
        times.append(t)
        pts.append(x)
    return Trajectory(m, np.asarray(times), np.stack(pts), step)


def flow_samples(field: TimeVaryingField, t0: float, x0: np.ndarray,
                 times: Sequence[float], step: float = DEFAULT_STEP) -> list[np.ndarray]:
    """Flow states at the requested times (sorted, all >= t0).

    Each gap is split into equal substeps no longer than ``step`` so the
    sample times are hit exactly.
    """
    x = np.asarray(x0, dtype=float)
    out = []
    t = t0
    for target in times:
        if target < t - 1e-12:
            raise ValueError("sample times must be nondecreasing and >= t0")
        gap = target - t
        if gap > 1e-15 * max(1.0, abs(target)):
            n_sub = max(1, math.ceil(gap / step - 1e-12))
            dt = gap / n_sub
            for i in range(n_sub):
                x = _rk4_step(field, t + i * dt, x, dt)
            if not np.all(np.isfinite(x)):
                raise IntegrationError("non-finite state during integration", target)
            t = target
        out.append(x)
    return out


def semigroup_residual(field: TimeVaryingField, t0: float, x0: ManifoldPoint,
                       t_mid: float, t1: float, step: float = DEFAULT_STEP) -> float:
    """Distance between the direct flow to t1 and the flow restarted at t_mid."""
    if not t0 <= t_mid <= t1:
        raise ValueError(f"need t0 <= t_mid <= t1, got {(t0, t_mid, t1)}")
    m = field.manifold
    x_start = m.project(x0.coords.copy())
    direct = _advance(field, t0, x_start, t1, step)
    mid = _advance(field, t0, x_start, t_mid, step)
    via = _advance(field, t_mid, mid, t1, step)
    return m.dist(direct, via)


def pushforward(field: TimeVaryingField, t: float, x: ManifoldPoint, v: TangentVector,
                tau: float, step: float = DEFAULT_STEP, eps: float = 1e-5) -> TangentVector:
    """Flow pushforward of v under x -> phi(tau; t, x).

    Computed by the geodesic-variation central difference: the base point is
    perturbed by exp_x(+/- eps_hat v), both perturbations are flowed to tau,
    and the transported difference of logarithms at the flowed base point is
    divided by 2 eps_hat.  The perturbation arc length is ``eps``.  If the
    difference stencil hits the cut locus, eps is reduced and the stencil
    retried before giving up.
    """
    if tau < t:
        raise ValueError("tau must be >= t")
    if x.manifold != field.manifold:
        raise ManifoldMismatchError("point manifold does not match the field")
    if v.base.manifold != x.manifold or not np.array_equal(v.base.coords, x.coords):
        raise ManifoldMismatchError("tangent vector is not based at the given point")
    m = field.manifold
    if tau == t:
        return v
    y0 = _advance(field, t, m.project(x.coords.copy()), tau, step)
    y0_point = ManifoldPoint(m, y0)
    nv = m.norm(x.coords, v.components)
    if nv == 0.0:
        return TangentVector(y0_point, np.zeros(m.ambient_shape))
    eps_hat = eps / nv
    last_error: CutLocusError | None = None
    for _ in range(3):
        try:
            y_plus = _advance(field, t, m.exp(x.coords, eps_hat * v.components), tau, step)
            y_minus = _advance(field, t, m.exp(x.coords, -eps_hat * v.components), tau, step)
            w = (m.log(y0, y_plus) - m.log(y0, y_minus)) / (2.0 * eps_hat)
            return TangentVector(y0_point, m.project_tangent(y0, w))
        except CutLocusError as err:
            last_error = err
            eps_hat *= 0.1
    raise CutLocusError(f"pushforward stencil kept hitting the cut locus: {last_error}",
                        x.coords, y0)


@dataclass(frozen=True, eq=False)
class Region:
    """Geodesic ball used for sampling-based estimation."""

    center: ManifoldPoint
    radius: float

    def sample(self, rng: np.random.Generator, on_boundary: bool = False) -> np.ndarray:
        m = self.center.manifold
        r = self.radius if on_boundary else self.radius * math.sqrt(rng.uniform(0.0, 1.0))
        v = m.random_tangent(rng, self.center.coords, norm=max(r, 1e-12))
        return m.exp(self.center.coords, v)


@dataclass(frozen=True, eq=False)
class LipschitzEstimate:
    """Sampled Lipschitz constants for a field on a region.

    ``transport_constant`` is the max of |P_p^q f(p) - f(q)| / d(p, q) over
    sampled pairs; ``covariant_constant`` is the max of |grad_v f| over
    sampled unit directions, by transport-corrected central differences.
    """

    transport_constant: float
    covariant_constant: float
    region: Region
    n_samples: int

    @property
    def combined(self) -> float:
        return max(self.transport_constant, self.covariant_constant)

    def inflated(self, safety: float = LIPSCHITZ_SAFETY) -> float:
        """Estimate with the safety factor applied, as used in envelope checks."""
        return self.combined * safety


def lipschitz_estimate(field: TimeVaryingField, region: Region,
                       t_samples: Sequence[float], n_pairs: int, seed: int,
                       fd_step: float = 1e-5) -> LipschitzEstimate:
    """Estimate the field's Lipschitz constant on a geodesic ball.

    Deterministic given the seed.  Half of the covariant-derivative sample
    points sit on the region boundary, where the covariant norm of the
    built-in attractors peaks.  Degenerate pairs (distance below 1e-10) are
    skipped.
    """
    m = field.manifold
    if region.center.manifold != m:
        raise ManifoldMismatchError("region manifold does not match the field")
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if not region.radius > 0:
        raise ValueError("region radius must be positive")
    if region.radius >= m.cut_locus_radius:
        raise ValueError("region radius must stay below the cut-locus radius")
    rng = np.random.default_rng(seed)
    t_list = list(t_samples) or [0.0]

    transport_max = 0.0
    usable_pairs = 0
    for _ in range(n_pairs):
        p = region.sample(rng)
        q = region.sample(rng)
        d = m.dist(p, q)
        if d < 1e-10:
            continue
        usable_pairs += 1
        for t in t_list:
            diff = m.transport(p, q, field.eval_raw(t, p)) - field.eval_raw(t, q)
            transport_max = max(transport_max, m.norm(q, diff) / d)
    if usable_pairs == 0:
        raise ValueError("all sampled pairs were degenerate; enlarge the region")

    covariant_max = 0.0
    for i in range(n_pairs):
        x = region.sample(rng, on_boundary=(i % 2 == 0))
        v = m.random_tangent(rng, x, norm=1.0)
        x_plus = m.exp(x, fd_step * v)
        x_minus = m.exp(x, -fd_step * v)
        for t in t_list:
            dv = (m.transport(x_plus, x, field.eval_raw(t, x_plus))
                  - m.transport(x_minus, x, field.eval_raw(t, x_minus))) / (2.0 * fd_step)
            covariant_max = max(covariant_max, m.norm(x, dv))

    return LipschitzEstimate(transport_max, covariant_max, region, n_pairs)


@dataclass(frozen=True)
class ContractionRow:
    tau: float
    measured: float
    lower: float
    upper: float
    passed: bool
    flagged: bool  # pair came within the cut-locus margin; bound not certified


@dataclass(frozen=True)
class ContractionReport:
    """Two-sided exponential envelope check on one pair of initial states."""

    rows: tuple[ContractionRow, ...]
    worst_lower_margin: float
    worst_upper_margin: float
    passed: bool

    @property
    def flagged(self) -> bool:
        return any(r.flagged for r in self.rows)


def contraction_envelope_check(field: TimeVaryingField, L: float,
                               x1: ManifoldPoint, x2: ManifoldPoint, t: float,
                               tau_grid: Sequence[float], step: float = DEFAULT_STEP,
                               slack: float = 1e-6) -> ContractionReport:
    """Verify d0 e^{-L dt} <= d(phi, phi) <= d0 e^{L dt} along the flow.

    The multiplicative slack absorbs integrator error.  Rows whose pair drifts
    within the cut-locus margin are flagged rather than failed, since the
    two-sided bound presumes a smoothly varying minimizing geodesic.
    """
    m = field.manifold
    taus = sorted(float(tau) for tau in tau_grid)
    if taus and taus[0] < t:
        raise ValueError("tau grid must start at or after t")
    d0 = m.dist(x1.coords, x2.coords)
    pts1 = flow_samples(field, t, x1.coords, taus, step)
    pts2 = flow_samples(field, t, x2.coords, taus, step)
    rows = []
    worst_lower = math.inf
    worst_upper = math.inf
    for tau, a, b in zip(taus, pts1, pts2):
        d = m.dist(a, b)
        lower = d0 * math.exp(-L * (tau - t))
        upper = d0 * math.exp(L * (tau - t))
        flagged = math.isfinite(m.cut_locus_radius) and d >= m.cut_locus_radius - CUT_FLAG_MARGIN
        ok_lower = d * (1.0 + slack) >= lower
        ok_upper = d <= upper * (1.0 + slack)
        if lower > 0:
            worst_lower = min(worst_lower, d * (1.0 + slack) / lower - 1.0)
            worst_upper = min(worst_upper, upper * (1.0 + slack) / d - 1.0 if d > 0 else math.inf)
        rows.append(ContractionRow(tau, d, lower, upper, ok_lower and ok_upper, flagged))
    if not math.isfinite(worst_lower):
        worst_lower = 0.0
    if not math.isfinite(worst_upper):
        worst_upper = 0.0
    passed = all(r.passed for r in rows if not r.flagged)
    return ContractionReport(tuple(rows), worst_lower, worst_upper, passed)


def timed_lie_derivative(V: Callable[[float, ManifoldPoint], float],
                         field: TimeVaryingField, t: float, x: ManifoldPoint,
                         h: float = 1e-3, step: float | None = None,
                         t_floor: float | None = None) -> float:
    """Derivative of V(s, phi(s; t, x)) at s = t along the augmented flow.

    Central difference along the flow: the forward point integrates the field
    over [t, t+h]; the backward point integrates in reverse time.  When a
    ``t_floor`` is given and t - h would cross it, a forward-only one-sided
    difference is used instead.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if x.manifold != field.manifold:
        raise ManifoldMismatchError("point manifold does not match the field")
    m = field.manifold
    sub = step if step is not None else h / 4.0
    x0 = m.project(x.coords.copy())
    x_plus = ManifoldPoint(m, _advance(field, t, x0, t + h, sub))
    v_plus = V(t + h, x_plus)
    if t_floor is not None and t - h < t_floor:
        return (v_plus - V(t, ManifoldPoint(m, x0))) / h

    def reversed_rhs(s: float, coords: np.ndarray) -> np.ndarray:
        return -field.eval_raw(2.0 * t - s, coords)

    reverse = TimeVaryingField(m, reversed_rhs)
    x_minus = ManifoldPoint(m, _advance(reverse, t, x0, t + h, sub))
    v_minus = V(t - h, x_minus)
    return (v_plus - v_minus) / (2.0 * h)
