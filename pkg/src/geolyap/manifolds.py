"""Closed-form Riemannian geometry kernel for a fixed family of manifolds.

Four complete manifolds are built in: Euclidean space, the unit sphere S^n,
the rotation group SO(3) with its bi-invariant metric, and the hyperbolic
plane in the hyperboloid model.  Points live in an embedding-space
representation (unit vectors, rotation matrices, Minkowski hyperboloid), so
every operation -- metric, exponential/logarithm maps, distance, parallel
transport along minimizing geodesics -- is an exact coordinate-free formula.
Constraint drift is repaired by projection after each manifold-valued
computation.

Pairs at or beyond each other's cut locus are rejected explicitly
(:class:`CutLocusError`) rather than resolved by an arbitrary choice of
geodesic.
"""

from __future__ import annotations

import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable

import numpy as np

# Kernel tolerances, double-precision scale.  Configurable in one place.
POINT_TOL = 1e-12        # sphere / hyperboloid constraint residual after projection
SO3_POINT_TOL = 1e-10    # orthogonality + determinant residual for rotations
TANGENT_TOL = 1e-10      # tangency residual for tangent vectors
CUT_MARGIN = 1e-6        # reject pairs within this angle of the cut locus
_TINY = 1e-15


class GeometryError(ValueError):
    """Base class for geometry usage and domain errors."""


class ManifoldMismatchError(GeometryError):
    """Operands live on different manifolds or in different tangent spaces."""


class CutLocusError(GeometryError):
    """The requested pair sits at or beyond each other's cut locus."""

    def __init__(self, message: str, x=None, y=None):
        super().__init__(message)
        self.pair = (x, y)


@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    """A point on a manifold, stored in the embedding representation."""

    manifold: "Manifold"
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.array(self.coords, dtype=float))
        self.coords.setflags(write=False)

    @property
    def kind(self) -> str:
        return self.manifold.name

    def to_json(self) -> dict:
        """Serialize as {kind, coords} with matrices flattened row-major."""
        return {"kind": self.manifold.name, "coords": self.coords.ravel().tolist()}

    def __repr__(self):
        return f"ManifoldPoint({self.manifold.name}, {self.coords.ravel().tolist()})"


@dataclass(frozen=True, eq=False)
class TangentVector:
    """A tangent vector: base point plus embedding-space components."""

    base: ManifoldPoint
    components: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "components", np.array(self.components, dtype=float))
        self.components.setflags(write=False)

    @property
    def manifold(self) -> "Manifold":
        return self.base.manifold

    @property
    def norm(self) -> float:
        m = self.base.manifold
        return m.norm(self.base.coords, self.components)

    def to_json(self) -> dict:
        """Serialize as {kind, coords, base}; coords are the components."""
        return {
            "kind": self.manifold.name,
            "coords": self.components.ravel().tolist(),
            "base": self.base.coords.ravel().tolist(),
        }

    def __repr__(self):
        return f"TangentVector({self.manifold.name}, |v|={self.norm:.6g})"


class Manifold(ABC):
    """Closed-form geometry kernel for one manifold.

    The abstract methods form the raw ndarray layer used by integrators and
    estimators; the ``point``/``tangent`` constructors wrap validated arrays
    into :class:`ManifoldPoint` / :class:`TangentVector`.  All operations are
    pure and instances are stateless, so values are safe to share across
    threads.
    """

    name: str
    dim: int
    ambient_shape: tuple
    cut_locus_radius: float

    # -- raw ndarray kernel -------------------------------------------------

    @abstractmethod
    def project(self, coords: np.ndarray) -> np.ndarray:
        """Repair constraint drift: map an ambient array onto the manifold."""

    @abstractmethod
    def project_tangent(self, coords: np.ndarray, ambient: np.ndarray) -> np.ndarray:
        """Project an ambient array onto the tangent space at ``coords``."""

    @abstractmethod
    def constraint_violation(self, coords: np.ndarray) -> float:
        """Residual of the manifold constraint at ``coords`` (0 when exact)."""

    @abstractmethod
    def inner(self, coords: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
        """Riemannian inner product of tangents ``u``, ``v`` at ``coords``."""

    @abstractmethod
    def exp(self, coords: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Geodesic endpoint at parameter 1 from ``coords`` with velocity ``v``."""

    @abstractmethod
    def log(self, coords: np.ndarray, other: np.ndarray) -> np.ndarray:
        """Initial velocity of the minimizing geodesic ``coords`` -> ``other``."""

    @abstractmethod
    def dist(self, coords: np.ndarray, other: np.ndarray) -> float:
        """Riemannian (geodesic) distance."""

    @abstractmethod
    def transport(self, coords: np.ndarray, other: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Parallel transport of ``v`` along the minimizing geodesic."""

    @abstractmethod
    def random_point(self, rng: np.random.Generator) -> np.ndarray: ...

    def tangent_violation(self, coords: np.ndarray, comps: np.ndarray) -> float:
        diff = comps - self.project_tangent(coords, comps)
        return float(np.sqrt(np.sum(diff * diff)))

    def norm(self, coords: np.ndarray, v: np.ndarray) -> float:
        return math.sqrt(max(self.inner(coords, v, v), 0.0))

    def random_tangent(self, rng: np.random.Generator, coords: np.ndarray,
                       norm: float = 1.0) -> np.ndarray:
        """Random tangent of the requested norm, uniform in direction."""
        for _ in range(16):
            v = self.project_tangent(coords, rng.standard_normal(self.ambient_shape))
            n = self.norm(coords, v)
            if n > 1e-12:
                return v * (norm / n)
        raise GeometryError("could not sample a nondegenerate tangent direction")

    def tangent_basis(self, coords: np.ndarray) -> list[np.ndarray]:
        """Orthonormal tangent basis at ``coords`` (Gram-Schmidt of projected
        ambient axes; deterministic)."""
        basis: list[np.ndarray] = []
        flat_dim = int(np.prod(self.ambient_shape))
        for i in range(flat_dim):
            if len(basis) == self.dim:
                break
            e = np.zeros(flat_dim)
            e[i] = 1.0
            v = self.project_tangent(coords, e.reshape(self.ambient_shape))
            for b in basis:
                v = v - self.inner(coords, v, b) * b
            n = self.norm(coords, v)
            if n > 1e-8:
                basis.append(v / n)
        if len(basis) != self.dim:
            raise GeometryError(f"degenerate tangent basis at {coords!r}")
        return basis

    # -- wrapper layer ------------------------------------------------------

    def point(self, coords) -> ManifoldPoint:
        """Validate, project, and wrap ambient coordinates as a point."""
        arr = np.array(coords, dtype=float)
        if arr.size == int(np.prod(self.ambient_shape)):
            arr = arr.reshape(self.ambient_shape)
        else:
            raise GeometryError(
                f"{self.name} expects {self.ambient_shape} coordinates, got shape {arr.shape}")
        return ManifoldPoint(self, self.project(arr))

    def tangent(self, base: ManifoldPoint, components) -> TangentVector:
        if base.manifold != self:
            raise ManifoldMismatchError(f"base point lives on {base.manifold.name}, not {self.name}")
        arr = np.array(components, dtype=float).reshape(self.ambient_shape)
        return TangentVector(base, self.project_tangent(base.coords, arr))

    def __eq__(self, other):
        return type(self) is type(other) and self.dim == other.dim

    def __hash__(self):
        return hash((type(self).__name__, self.dim))

    def __repr__(self):
        return self.name


class Euclidean(Manifold):
    """Flat R^n with the standard inner product."""

    def __init__(self, n: int):
        if n < 1:
            raise GeometryError("dimension must be positive")
        self.dim = n
        self.name = f"euclidean{n}"
        self.ambient_shape = (n,)
        self.cut_locus_radius = math.inf

    def project(self, coords):
        return np.asarray(coords, dtype=float).copy()

    def project_tangent(self, coords, ambient):
        return np.asarray(ambient, dtype=float).copy()

    def constraint_violation(self, coords):
        return 0.0

    def inner(self, coords, u, v):
        return float(np.dot(u, v))

    def exp(self, coords, v):
        return coords + v

    def log(self, coords, other):
        return other - coords

    def dist(self, coords, other):
        return float(np.linalg.norm(other - coords))

    def transport(self, coords, other, v):
        return v.copy()

    def random_point(self, rng):
        return rng.standard_normal(self.dim)


class Sphere(Manifold):
    """Unit sphere S^n embedded in R^{n+1} with the induced metric."""

    def __init__(self, n: int):
        if n < 1:
            raise GeometryError("dimension must be positive")
        self.dim = n
        self.name = f"sphere{n}"
        self.ambient_shape = (n + 1,)
        self.cut_locus_radius = math.pi

    def project(self, coords):
        nrm = np.linalg.norm(coords)
        if nrm < _TINY:
            raise GeometryError("cannot project the origin onto the sphere")
        return coords / nrm

    def project_tangent(self, coords, ambient):
        return ambient - np.dot(coords, ambient) * coords

    def constraint_violation(self, coords):
        return abs(float(np.linalg.norm(coords)) - 1.0)

    def inner(self, coords, u, v):
        return float(np.dot(u, v))

    def exp(self, coords, v):
        theta = np.linalg.norm(v)
        if theta < _TINY:
            return self.project(coords + v)
        return self.project(math.cos(theta) * coords + (math.sin(theta) / theta) * v)

    def _log_parts(self, coords, other):
        c = float(np.dot(coords, other))
        w = other - c * coords
        s = float(np.linalg.norm(w))
        theta = math.atan2(s, c)
        return w, s, theta

    def log(self, coords, other):
        w, s, theta = self._log_parts(coords, other)
        if theta > math.pi - CUT_MARGIN:
            raise CutLocusError("antipodal pair: logarithm map is not unique", coords, other)
        if s < _TINY:
            return self.project_tangent(coords, w)
        return self.project_tangent(coords, (theta / s) * w)

    def dist(self, coords, other):
        if np.array_equal(coords, other):
            return 0.0
        _, s, theta = self._log_parts(coords, other)
        return theta

    def transport(self, coords, other, v):
        c = float(np.dot(coords, other))
        _, _, theta = self._log_parts(coords, other)
        if theta > math.pi - CUT_MARGIN:
            raise CutLocusError("antipodal pair: transport geodesic is not unique", coords, other)
        factor = float(np.dot(other, v)) / (1.0 + c)
        return self.project_tangent(other, v - factor * (coords + other))

    def random_point(self, rng):
        return self.project(rng.standard_normal(self.dim + 1))


def _hat(w: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def _vee(W: np.ndarray) -> np.ndarray:
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def _rodrigues(w: np.ndarray) -> np.ndarray:
    """Rotation matrix exp(hat(w)) by the Rodrigues formula."""
    theta2 = float(np.dot(w, w))
    theta = math.sqrt(theta2)
    K = _hat(w)
    if theta < 1e-8:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta2
    return np.eye(3) + a * K + b * (K @ K)


def _rotation_angle(Q: np.ndarray) -> float:
    s = 0.5 * float(np.linalg.norm(_vee(Q - Q.T)))
    c = 0.5 * (float(np.trace(Q)) - 1.0)
    return math.atan2(s, c)


def _rotation_vector(Q: np.ndarray) -> np.ndarray:
    """Rotation vector of Q with angle in [0, pi); raises near pi."""
    theta = _rotation_angle(Q)
    v = 0.5 * _vee(Q - Q.T)  # = sin(theta) * axis
    if theta < 1e-7:
        return v * (1.0 + theta * theta / 6.0)
    if theta < 2.9:
        return v * (theta / math.sin(theta))
    # Near pi: recover the axis from the symmetric part, orient by the skew part.
    c = math.cos(theta)
    nn = np.clip((np.diag(Q) - c) / (1.0 - c), 0.0, None)
    n = np.sqrt(nn)
    k = int(np.argmax(n))
    S = 0.5 * (Q + Q.T)
    for i in range(3):
        if i != k and n[k] > 0:
            n[i] = S[i, k] / ((1.0 - c) * n[k])
    n = n / np.linalg.norm(n)
    if np.dot(v, n) < 0.0:
        n = -n
    return theta * n


class SpecialOrthogonal3(Manifold):
    """Rotation matrices with the bi-invariant metric <U,V> = tr(Ou^T Ov)/2.

    The scaling makes geodesic distance equal to the rotation angle.  Tangent
    vectors at R are stored as R @ Omega with Omega skew-symmetric.
    """

    def __init__(self):
        self.dim = 3
        self.name = "so3"
        self.ambient_shape = (3, 3)
        self.cut_locus_radius = math.pi

    def project(self, coords):
        # Cheap Newton polish for near-rotations, full polar projection otherwise.
        G = coords.T @ coords
        if np.linalg.norm(G - np.eye(3)) < 1e-8 and np.linalg.det(coords) > 0:
            R = coords @ (1.5 * np.eye(3) - 0.5 * G)
            return R @ (1.5 * np.eye(3) - 0.5 * (R.T @ R))
        U, _, Vt = np.linalg.svd(coords)
        D = np.diag([1.0, 1.0, float(np.sign(np.linalg.det(U @ Vt)))])
        return U @ D @ Vt

    def project_tangent(self, coords, ambient):
        A = coords.T @ ambient
        return coords @ (0.5 * (A - A.T))

    def constraint_violation(self, coords):
        ortho = float(np.linalg.norm(coords.T @ coords - np.eye(3)))
        return ortho + abs(float(np.linalg.det(coords)) - 1.0)

    def _alg(self, coords, v) -> np.ndarray:
        A = coords.T @ v
        return _vee(0.5 * (A - A.T))

    def inner(self, coords, u, v):
        return float(np.dot(self._alg(coords, u), self._alg(coords, v)))

    def exp(self, coords, v):
        return self.project(coords @ _rodrigues(self._alg(coords, v)))

    def log(self, coords, other):
        Q = coords.T @ other
        if _rotation_angle(Q) > math.pi - CUT_MARGIN:
            raise CutLocusError("rotation angle at pi: logarithm map is not unique",
                                coords, other)
        return coords @ _hat(_rotation_vector(Q))

    def dist(self, coords, other):
        if np.array_equal(coords, other):
            return 0.0
        return _rotation_angle(coords.T @ other)

    def transport(self, coords, other, v):
        Q = coords.T @ other
        if _rotation_angle(Q) > math.pi - CUT_MARGIN:
            raise CutLocusError("rotation angle at pi: transport geodesic is not unique",
                                coords, other)
        w = _rotation_vector(Q)
        H = _rodrigues(0.5 * w)
        V = _hat(self._alg(coords, v))
        return self.project_tangent(other, coords @ H @ V @ H)

    def random_point(self, rng):
        U, _, Vt = np.linalg.svd(rng.standard_normal((3, 3)))
        D = np.diag([1.0, 1.0, float(np.sign(np.linalg.det(U @ Vt)))])
        return U @ D @ Vt


class Hyperbolic2(Manifold):
    """Hyperbolic plane, hyperboloid model in Minkowski R^{2,1}.

    Points satisfy <x,x>_M = -1 with x0 > 0, where
    <x,y>_M = -x0*y0 + x1*y1 + x2*y2.
    """

    def __init__(self):
        self.dim = 2
        self.name = "hyperbolic2"
        self.ambient_shape = (3,)
        self.cut_locus_radius = math.inf

    @staticmethod
    def _mdot(a: np.ndarray, b: np.ndarray) -> float:
        return float(a[1] * b[1] + a[2] * b[2] - a[0] * b[0])

    def project(self, coords):
        s = -self._mdot(coords, coords)
        if s <= _TINY:
            raise GeometryError("coordinates are not timelike; cannot project")
        x = coords / math.sqrt(s)
        return x if x[0] > 0 else -x

    def project_tangent(self, coords, ambient):
        return ambient + self._mdot(coords, ambient) * coords

    def constraint_violation(self, coords):
        return abs(self._mdot(coords, coords) + 1.0)

    def inner(self, coords, u, v):
        return self._mdot(u, v)

    def exp(self, coords, v):
        theta = math.sqrt(max(self._mdot(v, v), 0.0))
        if theta < _TINY:
            return self.project(coords + v)
        return self.project(math.cosh(theta) * coords + (math.sinh(theta) / theta) * v)

    def log(self, coords, other):
        c = -self._mdot(coords, other)
        w = other - c * coords
        s = math.sqrt(max(self._mdot(w, w), 0.0))  # = sinh(distance)
        if s < _TINY:
            return self.project_tangent(coords, w)
        theta = math.asinh(s)
        return self.project_tangent(coords, (theta / s) * w)

    def dist(self, coords, other):
        if np.array_equal(coords, other):
            return 0.0
        c = -self._mdot(coords, other)
        w = other - c * coords
        return math.asinh(math.sqrt(max(self._mdot(w, w), 0.0)))

    def transport(self, coords, other, v):
        denom = 1.0 - self._mdot(coords, other)
        factor = self._mdot(other, v) / denom
        return self.project_tangent(other, v + factor * (coords + other))

    def random_point(self, rng):
        origin = np.array([1.0, 0.0, 0.0])
        v = self.project_tangent(origin, rng.standard_normal(3))
        n = self.norm(origin, v)
        if n < 1e-12:
            return origin
        return self.exp(origin, v * (rng.uniform(0.0, 2.0) / n))


_NAME_PATTERNS: list[tuple[re.Pattern, Callable[[re.Match], Manifold]]] = [
    (re.compile(r"^euclidean(\d+)$"), lambda m: Euclidean(int(m.group(1)))),
    (re.compile(r"^sphere(\d+)$"), lambda m: Sphere(int(m.group(1)))),
    (re.compile(r"^so3$"), lambda m: SpecialOrthogonal3()),
    (re.compile(r"^hyperbolic2$"), lambda m: Hyperbolic2()),
]


def manifold_from_name(name: str) -> Manifold:
    """Build a manifold from its registry name, e.g. 'sphere2' or 'euclidean3'."""
    for pattern, builder in _NAME_PATTERNS:
        m = pattern.match(name.strip().lower())
        if m:
            return builder(m)
    raise GeometryError(f"unknown manifold name: {name!r}")


# -- module-level operations on wrapped values --------------------------------

def _require_same_manifold(*points: ManifoldPoint) -> Manifold:
    m = points[0].manifold
    for p in points[1:]:
        if p.manifold != m:
            raise ManifoldMismatchError(
                f"points live on different manifolds: {m.name} vs {p.manifold.name}")
    return m


def _require_base(x: ManifoldPoint, v: TangentVector):
    if v.base.manifold != x.manifold or not np.array_equal(v.base.coords, x.coords):
        raise ManifoldMismatchError("tangent vector is not based at the given point")


def inner(x: ManifoldPoint, u: TangentVector, v: TangentVector) -> float:
    """Riemannian inner product of two tangents based at x."""
    _require_base(x, u)
    _require_base(x, v)
    return x.manifold.inner(x.coords, u.components, v.components)


def norm(v: TangentVector) -> float:
    return v.norm


def zero_tangent(x: ManifoldPoint) -> TangentVector:
    return TangentVector(x, np.zeros(x.manifold.ambient_shape))


def exp_map(x: ManifoldPoint, v: TangentVector) -> ManifoldPoint:
    """Geodesic endpoint exp_x(v).  Globally defined on the built-ins."""
    _require_base(x, v)
    return ManifoldPoint(x.manifold, x.manifold.exp(x.coords, v.components))


def log_map(x: ManifoldPoint, y: ManifoldPoint) -> TangentVector:
    """Initial velocity of the minimizing geodesic from x to y."""
    m = _require_same_manifold(x, y)
    return TangentVector(x, m.log(x.coords, y.coords))


def distance(x: ManifoldPoint, y: ManifoldPoint) -> float:
    m = _require_same_manifold(x, y)
    return m.dist(x.coords, y.coords)


def parallel_transport(x: ManifoldPoint, y: ManifoldPoint, v: TangentVector) -> TangentVector:
    """Transport v from T_x to T_y along the minimizing geodesic."""
    m = _require_same_manifold(x, y)
    _require_base(x, v)
    return TangentVector(y, m.transport(x.coords, y.coords, v.components))


def geodesic_point(x: ManifoldPoint, y: ManifoldPoint, s: float) -> ManifoldPoint:
    """Point at fraction s in [0, 1] along the minimizing geodesic x -> y."""
    if not 0.0 <= s <= 1.0:
        raise GeometryError(f"geodesic parameter must lie in [0, 1], got {s}")
    m = _require_same_manifold(x, y)
    if s == 0.0:
        return x
    if s == 1.0:
        return y
    return ManifoldPoint(m, m.exp(x.coords, s * m.log(x.coords, y.coords)))


@dataclass(frozen=True, eq=False)
class GeodesicSegment:
    """The geodesic s -> exp_start(s * velocity) for s in [0, 1].

    Covariant acceleration vanishes identically along the segment; the
    residual check below verifies this by finite differences against
    parallel transport.
    """

    start: ManifoldPoint
    initial_velocity: TangentVector

    def __post_init__(self):
        _require_base(self.start, self.initial_velocity)

    @property
    def length(self) -> float:
        return self.initial_velocity.norm

    def point(self, s: float) -> ManifoldPoint:
        m = self.start.manifold
        return ManifoldPoint(m, m.exp(self.start.coords,
                                      s * self.initial_velocity.components))

    def covariant_acceleration_residual(self, n_steps: int = 16) -> float:
        """Max norm of the transport-corrected velocity difference per step."""
        m = self.start.manifold
        h = 1.0 / n_steps
        worst = 0.0
        for i in range(n_steps):
            a = self.point(i * h).coords
            b = self.point((i + 1) * h).coords
            va = m.log(a, b) / h                      # velocity at a (exact on a geodesic)
            vb = m.log(b, self.point(min((i + 2) * h, 1.0)).coords)
            if i + 2 <= n_steps:
                vb = vb / h
            else:
                continue
            residual = m.transport(b, a, vb) - va
            worst = max(worst, m.norm(a, residual))
        return worst


# -- first variation of arc length --------------------------------------------

@dataclass(frozen=True)
class FirstVariationTerms:
    """Finite-difference length derivative vs. geodesic boundary term."""

    length_derivative: float
    boundary_term: float

    @property
    def residual(self) -> float:
        return abs(self.length_derivative - self.boundary_term)


def _curve_length(m: Manifold, curve: Callable[[float], ManifoldPoint],
                  s_grid: np.ndarray) -> float:
    pts = [np.asarray(curve(float(s)).coords) for s in s_grid]
    return sum(m.dist(pts[i], pts[i + 1]) for i in range(len(pts) - 1))


def first_variation_terms(x: ManifoldPoint, y: ManifoldPoint,
                          variation: Callable[[float, float], ManifoldPoint],
                          h: float, n_segments: int = 256) -> FirstVariationTerms:
    """Compare dl/dt of a curve family against the geodesic boundary term.

    ``variation(t, s)`` must be a smooth family of curves over s in
    [0, d(x, y)] whose t = 0 member is the unit-speed minimizing geodesic
    from x to y.  The length derivative at t = 0 is formed by central
    differences of discretized arc lengths; the boundary term is
    <dF/ds, dF/dt> evaluated at the endpoints.  Both carry O(h^2) error,
    so the residual contracts quadratically as h is halved.
    """
    m = _require_same_manifold(x, y)
    s_hat = m.dist(x.coords, y.coords)
    if s_hat < 1e-9:
        raise GeometryError("degenerate geodesic: endpoints coincide")
    if h <= 0:
        raise GeometryError("variation step h must be positive")
    a0 = variation(0.0, 0.0).coords
    b0 = variation(0.0, s_hat).coords
    if m.dist(a0, x.coords) > 1e-8 * max(1.0, s_hat) or m.dist(b0, y.coords) > 1e-8 * max(1.0, s_hat):
        raise GeometryError("variation(0, .) does not join x to y")

    s_grid = np.linspace(0.0, s_hat, n_segments + 1)
    ell_plus = _curve_length(m, lambda s: variation(h, s), s_grid)
    ell_minus = _curve_length(m, lambda s: variation(-h, s), s_grid)
    length_derivative = (ell_plus - ell_minus) / (2.0 * h)

    def dt_field(s: float) -> np.ndarray:
        p0 = variation(0.0, s).coords
        vp = m.log(p0, variation(h, s).coords)
        vm = m.log(p0, variation(-h, s).coords)
        return (vp - vm) / (2.0 * h)

    eps_s = s_hat * 1e-4
    u_a = m.log(a0, variation(0.0, eps_s).coords)
    u_a = u_a / m.norm(a0, u_a)
    u_b = -m.log(b0, variation(0.0, s_hat - eps_s).coords)
    u_b = u_b / m.norm(b0, u_b)
    boundary = m.inner(b0, u_b, dt_field(s_hat)) - m.inner(a0, u_a, dt_field(0.0))
    return FirstVariationTerms(length_derivative, boundary)


def first_variation_residual(x: ManifoldPoint, y: ManifoldPoint,
                             variation: Callable[[float, float], ManifoldPoint],
                             h: float, n_segments: int = 256) -> float:
    """Residual between the arc-length derivative and the boundary term."""
    return first_variation_terms(x, y, variation, h, n_segments).residual


def endpoint_variation(x: ManifoldPoint, y: ManifoldPoint,
                       w: TangentVector) -> Callable[[float, float], ManifoldPoint]:
    """Family of geodesics from x to the moving endpoint exp_y(t w)."""
    _require_base(y, w)
    m = _require_same_manifold(x, y)
    s_hat = m.dist(x.coords, y.coords)

    def family(t: float, s: float) -> ManifoldPoint:
        y_t = m.exp(y.coords, t * w.components)
        return ManifoldPoint(m, m.exp(x.coords, (s / s_hat) * m.log(x.coords, y_t)))

    return family


def interior_variation(x: ManifoldPoint, y: ManifoldPoint,
                       n: TangentVector) -> Callable[[float, float], ManifoldPoint]:
    """Endpoint-fixed variation bending the geodesic along transported n."""
    _require_base(x, n)
    m = _require_same_manifold(x, y)
    s_hat = m.dist(x.coords, y.coords)

    def family(t: float, s: float) -> ManifoldPoint:
        g = m.exp(x.coords, (s / s_hat) * m.log(x.coords, y.coords))
        field = m.transport(x.coords, g, n.components)
        bump = math.sin(math.pi * s / s_hat)
        return ManifoldPoint(m, m.exp(g, (t * bump) * field))

    return family


# -- serialization -------------------------------------------------------------

def point_from_json(data: dict) -> ManifoldPoint:
    m = manifold_from_name(data["kind"])
    return m.point(np.asarray(data["coords"], dtype=float))


def tangent_from_json(data: dict) -> TangentVector:
    m = manifold_from_name(data["kind"])
    base = m.point(np.asarray(data["base"], dtype=float))
    return m.tangent(base, np.asarray(data["coords"], dtype=float))
