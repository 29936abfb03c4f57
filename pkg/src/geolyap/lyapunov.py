"""Converse Lyapunov constructions.

Two constructions are provided.  For exponentially stable systems, the
finite-horizon flow integral

    V(t, x) = integral over [t, t+delta] of d(phi(tau; t, x), x*)^p dtau

evaluated by composite Simpson quadrature along one numerically integrated
trajectory; p = 1 gives the exact theoretical constants, p = 2 (the default)
keeps the integrand differentiable at the equilibrium.  For asymptotically
stable systems, the integrand distance is first reshaped by a class-K
function G built from a sampled decay envelope, making the truncated
infinite-horizon integral finite with a certified tail bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .envelopes import KLEnvelope, StabilityEnvelope
from .flows import DEFAULT_STEP, TimeVaryingField, flow_samples, timed_lie_derivative
from .manifolds import ManifoldMismatchError, ManifoldPoint, TangentVector

DEFAULT_QUADRATURE_NODES = 65
DEFAULT_POWER = 2.0


class InvalidDeltaError(ValueError):
    """The chosen horizon leaves no decay margin (K' <= 0)."""


class HorizonError(ValueError):
    """The truncation horizon cannot certify the requested tail bound."""


def _exp_ratio(a: float, delta: float) -> float:
    """(e^{a delta} - 1) / a, with the limit value delta as a -> 0."""
    if abs(a * delta) < 1e-12:
        return delta * (1.0 + 0.5 * a * delta)
    return math.expm1(a * delta) / a


@dataclass(frozen=True)
class DeltaChoice:
    """Horizon choice with its decay margin K' = 1 - K e^{-lambda delta}."""

    K: float
    rate: float
    delta: float
    K_prime: float


def choose_delta(K: float, rate: float, target: float) -> DeltaChoice:
    """Pick the horizon so the decay margin K' equals ``target`` in (0, 1)."""
    if not 0.0 < target < 1.0:
        raise InvalidDeltaError(f"target margin must lie in (0, 1), got {target}")
    if K < 1.0:
        raise InvalidDeltaError(f"envelope gain K must be >= 1, got {K}")
    if rate <= 0.0:
        raise InvalidDeltaError(f"decay rate must be positive, got {rate}")
    delta = math.log(K / (1.0 - target)) / rate
    return DeltaChoice(K, rate, delta, target)


@dataclass(frozen=True)
class TheoreticalBounds:
    """Certificate constants implied by (L, K, lambda, delta, p).

    c1, c2 sandwich V between c1 d^p and c2 d^p; c3 is the decay rate of V
    along the flow; c4 bounds the differential (|dV| <= c4 d^{p-1}).
    ``c2_alt`` is the alternative normalization of c2 with the field
    Lipschitz constant in the denominator, reported alongside the integral
    value for comparison.
    """

    c1: float
    c2: float
    c3: float
    c4: float
    K_prime: float
    c2_alt: float
    L: float
    K: float
    rate: float
    delta: float
    p: float

    def as_dict(self) -> dict:
        return {
            "c1": self.c1, "c2": self.c2, "c3": self.c3, "c4": self.c4,
            "K": self.K, "lambda": self.rate, "L": self.L,
            "K_prime": self.K_prime, "c2_alt": self.c2_alt,
        }


def theoretical_bounds(L: float, K: float, rate: float, delta: float,
                       p: float = 1.0) -> TheoreticalBounds:
    """Certificate constants from the envelope data and the horizon.

    For p = 1: c1 = (1-e^{-L delta})/L, c2 = K(1-e^{-lambda delta})/lambda,
    K' = 1 - K e^{-lambda delta}, c3 = K'/c2, c4 = (e^{L delta}-1)/L.
    For p != 1 the same integrals of the p-th powers give
    c1 = (1-e^{-pL delta})/(pL), c2 = K^p (1-e^{-p lambda delta})/(p lambda),
    K'_p = 1 - K^p e^{-p lambda delta}, and
    c4 = p K^{p-1} (e^{(L-(p-1)lambda) delta}-1)/(L-(p-1)lambda).
    """
    if L <= 0 or rate <= 0 or delta <= 0:
        raise ValueError("L, rate, and delta must be positive")
    if K < 1.0:
        raise ValueError(f"envelope gain K must be >= 1, got {K}")
    if p < 1.0:
        raise ValueError(f"power p must be >= 1, got {p}")
    K_prime = 1.0 - K ** p * math.exp(-p * rate * delta)
    if K_prime <= 0.0:
        raise InvalidDeltaError(
            f"K'={K_prime:.6g} <= 0: horizon delta={delta:.6g} is too short for K={K:.6g}")
    c1 = _exp_ratio(-p * L, delta)
    c2 = K ** p * _exp_ratio(-p * rate, delta)
    c2_alt = K ** p * (-math.expm1(-p * rate * delta)) / (p * L)
    c3 = K_prime / c2
    c4 = p * K ** (p - 1.0) * _exp_ratio(L - (p - 1.0) * rate, delta)
    return TheoreticalBounds(c1, c2, c3, c4, K_prime, c2_alt, L, K, rate, delta, p)


def _simpson_weights(n_nodes: int, horizon: float) -> np.ndarray:
    if n_nodes < 3 or n_nodes % 2 == 0:
        raise ValueError("composite Simpson needs an odd node count >= 3")
    w = np.ones(n_nodes)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (horizon / (n_nodes - 1) / 3.0)


@dataclass(frozen=True, eq=False)
class LyapunovFunction:
    """Flow-integral Lyapunov function; evaluation is pure and reentrant.

    ``mode`` is "exponential" (integrand d^p over horizon delta) or "massera"
    (integrand G(d) over the truncation horizon, with ``tail_bound`` the
    certified truncation error).
    """

    field: TimeVaryingField
    x_star: ManifoldPoint
    horizon: float
    p: float
    n_nodes: int = DEFAULT_QUADRATURE_NODES
    step: float = DEFAULT_STEP
    mode: str = "exponential"
    reshaping: Callable[[float], float] | None = None
    tail_bound: float = 0.0

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.mode not in ("exponential", "massera"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "massera" and self.reshaping is None:
            raise ValueError("massera mode requires a reshaping function")

    def _evaluate_raw(self, t: float, coords: np.ndarray) -> float:
        m = self.field.manifold
        taus = t + np.linspace(0.0, self.horizon, self.n_nodes)
        pts = flow_samples(self.field, t, coords, taus, self.step)
        dists = [m.dist(p, self.x_star.coords) for p in pts]
        if self.mode == "massera":
            vals = np.array([self.reshaping(d) for d in dists])
        else:
            vals = np.asarray(dists) ** self.p
        return float(np.dot(_simpson_weights(self.n_nodes, self.horizon), vals))

    def evaluate(self, t: float, x: ManifoldPoint) -> float:
        if x.manifold != self.field.manifold:
            raise ManifoldMismatchError("point manifold does not match the certificate")
        return self._evaluate_raw(t, x.coords)

    __call__ = evaluate

    def lie_derivative(self, t: float, x: ManifoldPoint, h: float = 1e-3,
                       t_floor: float | None = None) -> float:
        return timed_lie_derivative(self.evaluate, self.field, t, x,
                                    h=h, step=self.step, t_floor=t_floor)

    def directional_derivative(self, t: float, x: ManifoldPoint, v: TangentVector,
                               eps: float = 1e-4) -> float:
        """dV(t, .)(v) by a central geodesic difference of arc length eps."""
        m = self.field.manifold
        nv = m.norm(x.coords, v.components)
        if nv == 0.0:
            return 0.0
        eps_hat = eps / nv
        plus = self._evaluate_raw(t, m.exp(x.coords, eps_hat * v.components))
        minus = self._evaluate_raw(t, m.exp(x.coords, -eps_hat * v.components))
        return (plus - minus) / (2.0 * eps_hat)


def construct_exp_V(field: TimeVaryingField, x_star: ManifoldPoint, delta: float,
                    p: float = DEFAULT_POWER, n_nodes: int = DEFAULT_QUADRATURE_NODES,
                    step: float = DEFAULT_STEP) -> LyapunovFunction:
    """Finite-horizon flow-integral certificate for exponential stability."""
    if p < 1.0:
        raise ValueError(f"power p must be >= 1, got {p}")
    if x_star.manifold != field.manifold:
        raise ManifoldMismatchError("equilibrium manifold does not match the field")
    return LyapunovFunction(field, x_star, delta, p, n_nodes, step, "exponential")


def evaluate_V(vf: LyapunovFunction, t: float, x: ManifoldPoint) -> float:
    """Evaluate a constructed certificate; quadrature error O(step^4 + n_nodes^-4)."""
    return vf.evaluate(t, x)


# -- class-K reshaping for asymptotic (non-exponential) decay ------------------

@dataclass(frozen=True, eq=False)
class MasseraFunction:
    """Constructive class-K reshaping G with integrable composition G(g(t)).

    Built so that G'(g(t_k)) = e^{-t_k} / max(h(t_k), 1) at the envelope
    knots; G' is then strictly increasing in its argument with G'(0) = 0,
    and G is its antiderivative (so G(0) = 0, G convex).  ``k1`` and ``k2``
    bound the integrals of G(u) and G'(u) h for any sampled u <= g.
    """

    s_knots: np.ndarray          # ascending, s_knots[0] == 0
    gprime_knots: np.ndarray
    envelope_times: np.ndarray
    envelope_values: np.ndarray
    h_values: np.ndarray
    k1: float
    k2: float
    grid_spacing: float

    def __post_init__(self):
        interp = PchipInterpolator(self.s_knots, self.gprime_knots)
        object.__setattr__(self, "_gprime", interp)
        object.__setattr__(self, "_g_integral", interp.antiderivative())

    def derivative(self, s: float) -> float:
        """G'(s); constant extension beyond the represented range."""
        if s <= 0.0:
            return 0.0
        if s >= self.s_knots[-1]:
            return float(self.gprime_knots[-1])
        return float(self._gprime(s))

    def value(self, s: float) -> float:
        """G(s) = integral of G' from 0; linear extension beyond the range."""
        if s <= 0.0:
            return 0.0
        s_max = float(self.s_knots[-1])
        if s >= s_max:
            return float(self._g_integral(s_max)) + float(self.gprime_knots[-1]) * (s - s_max)
        return float(self._g_integral(s))

    __call__ = value

    def tail_bound(self, t_start: float) -> float:
        """Bound on the integral of G(g(t)) over [t_start, infinity).

        Uses G(s) <= s G'(s) (convexity with G(0) = 0) and the construction
        envelope G'(g(t)) <= e^{-(t - spacing)}; beyond the fitted horizon the
        e^{-t} design envelope is assumed to keep holding, which closes the
        integral as a geometric tail.
        """
        t_end = float(self.envelope_times[-1])
        if t_start > t_end:
            raise HorizonError(
                f"tail start {t_start} lies beyond the fitted envelope horizon {t_end}")
        mask = self.envelope_times >= t_start - 1e-12
        ts = self.envelope_times[mask]
        gs = self.envelope_values[mask]
        grid_part = float(np.trapezoid([self.value(g) for g in gs], ts)) if len(ts) > 1 else 0.0
        beyond = float(gs[-1]) * math.exp(self.grid_spacing) * math.exp(-t_end)
        return grid_part + beyond

    def integrals_for(self, u_values: Sequence[float]) -> tuple[float, float]:
        """Grid integrals of G(u) and G'(u) h for samples on the fit grid."""
        u = np.asarray(u_values, dtype=float)
        if len(u) != len(self.envelope_times):
            raise ValueError("u samples must align with the envelope time grid")
        i1 = float(np.trapezoid([self.value(s) for s in u], self.envelope_times))
        i2 = float(np.trapezoid([self.derivative(s) * hv for s, hv in zip(u, self.h_values)],
                                self.envelope_times))
        return i1, i2


def massera_G(t_grid: Sequence[float], g_values: Sequence[float],
              h: Callable[[float], float] | None = None) -> MasseraFunction:
    """Build the reshaping function for a strictly decreasing envelope.

    ``g_values`` must be positive and strictly decreasing over ``t_grid``;
    ``h`` is a positive nondecreasing weight (defaults to 1).  The returned
    object reports k1 and k2 such that for any sampled u <= g the grid
    integrals of G(u) and G'(u) h stay below them.
    """
    ts = np.asarray(t_grid, dtype=float)
    gs = np.asarray(g_values, dtype=float)
    if len(ts) != len(gs) or len(ts) < 3:
        raise ValueError("need at least three aligned envelope samples")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("time grid must be strictly increasing")
    if np.any(gs <= 0):
        raise ValueError("envelope values must be positive")
    if np.any(np.diff(gs) >= 0):
        raise ValueError("envelope must be strictly decreasing")
    h_fn = h if h is not None else (lambda t: 1.0)
    h_vals = np.array([float(h_fn(t)) for t in ts])
    if np.any(h_vals <= 0) or np.any(np.diff(h_vals) < -1e-12):
        raise ValueError("weight h must be positive and nondecreasing")

    gprime_at_knots = np.exp(-ts) / np.maximum(h_vals, 1.0)
    # s ascending: reverse the (decreasing) envelope and pin G'(0) = 0.
    s_knots = np.concatenate(([0.0], gs[::-1]))
    gprime_knots = np.concatenate(([0.0], gprime_at_knots[::-1]))
    if np.any(np.diff(gprime_knots) <= 0):
        raise ValueError("constructed derivative is not strictly increasing; "
                         "check the envelope grid")
    spacing = float(np.max(np.diff(ts)))
    partial = MasseraFunction(s_knots, gprime_knots, ts, gs, h_vals,
                              k1=0.0, k2=0.0, grid_spacing=spacing)
    grid_k1 = float(np.trapezoid([partial.value(g) for g in gs], ts))
    grid_k2 = float(np.trapezoid(gprime_at_knots * h_vals, ts))
    t_end = float(ts[-1])
    tail_k1 = float(gs[-1]) * math.exp(spacing) * math.exp(-t_end)
    tail_k2 = math.exp(spacing) * math.exp(-t_end)
    return MasseraFunction(s_knots, gprime_knots, ts, gs, h_vals,
                           k1=grid_k1 + tail_k1, k2=grid_k2 + tail_k2,
                           grid_spacing=spacing)


def construct_ugas_V(field: TimeVaryingField, x_star: ManifoldPoint,
                     beta_fit: StabilityEnvelope | KLEnvelope, t_max: float,
                     tail_tol: float = 1e-8,
                     h: Callable[[float], float] | None = None,
                     n_nodes: int = DEFAULT_QUADRATURE_NODES,
                     step: float = DEFAULT_STEP) -> LyapunovFunction:
    """Truncated infinite-horizon certificate for asymptotic stability.

    The decay profile g(s) = beta(r_max, s) of the fitted envelope drives the
    reshaping construction; the truncation horizon must leave a certified
    tail below ``tail_tol``, otherwise a :class:`HorizonError` is raised.
    """
    if x_star.manifold != field.manifold:
        raise ManifoldMismatchError("equilibrium manifold does not match the field")
    kl = beta_fit.beta if isinstance(beta_fit, StabilityEnvelope) else beta_fit
    times, g_vals = kl.decay_profile()
    reshaping = massera_G(times, g_vals, h)
    if t_max > float(times[-1]):
        raise HorizonError(
            f"truncation horizon {t_max} exceeds the fitted envelope horizon {times[-1]}")
    tail = reshaping.tail_bound(t_max)
    if tail > tail_tol:
        raise HorizonError(
            f"certified tail {tail:.3e} exceeds the tolerance {tail_tol:.3e}; "
            "extend the envelope horizon or enlarge t_max")
    return LyapunovFunction(field, x_star, t_max, 1.0, n_nodes, step,
                            "massera", reshaping.value, tail)
