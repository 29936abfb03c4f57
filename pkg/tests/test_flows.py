import math

import numpy as np
import pytest

from geolyap.flows import (
    IntegrationError,
    Region,
    TimeVaryingField,
    contraction_envelope_check,
    flow,
    flow_samples,
    lipschitz_estimate,
    pushforward,
    semigroup_residual,
    timed_lie_derivative,
)
from geolyap.manifolds import (
    Euclidean,
    ManifoldPoint,
    Sphere,
    SpecialOrthogonal3,
    Hyperbolic2,
    TangentVector,
)
from geolyap.systems import make_system

EUCLID = Euclidean(2)
SPHERE = Sphere(2)
NORTH = np.array([0.0, 0.0, 1.0])


@pytest.fixture(scope="module")
def euclid_linear():
    return make_system("geodesic_attractor", EUCLID, [0.0, 0.0], gain=1.0)


@pytest.fixture(scope="module")
def sphere_attractor():
    return make_system("geodesic_attractor", SPHERE, [0.0, 0.0, 1.0], gain=1.0)


def _sphere_start(d0=1.0):
    return ManifoldPoint(SPHERE, SPHERE.exp(NORTH, np.array([d0, 0.0, 0.0])))


# -- integration ---------------------------------------------------------------


def test_zero_field_gives_constant_trajectory():
    field = TimeVaryingField(SPHERE, lambda t, x: np.zeros(3))
    x0 = _sphere_start()
    traj = flow(field, 0.0, x0, 2.0, step=1e-2)
    for p in traj.points:
        assert SPHERE.dist(p, x0.coords) < 1e-14


def test_euclidean_linear_decay(euclid_linear):
    traj = flow(euclid_linear.field, 0.0, EUCLID.point([1.0, 0.0]), 1.0, step=1e-3)
    np.testing.assert_allclose(traj.points[-1], [math.exp(-1.0), 0.0], atol=1e-8)


def test_sphere_attractor_distance_decay(sphere_attractor):
    traj = flow(sphere_attractor.field, 0.0, _sphere_start(1.0), 1.0, step=1e-3)
    d1 = SPHERE.dist(traj.points[-1], NORTH)
    assert abs(d1 - math.exp(-1.0)) < 1e-6


def test_flow_hits_final_time_exactly(sphere_attractor):
    traj = flow(sphere_attractor.field, 0.0, _sphere_start(), 0.5037, step=1e-2)
    assert traj.times[-1] == 0.5037
    assert np.all(np.diff(traj.times) > 0)


def test_trajectory_step_reachability(sphere_attractor):
    traj = flow(sphere_attractor.field, 0.0, _sphere_start(1.0), 2.0, step=1e-2)
    max_speed = 1.0  # |f| = distance <= 1 on this run
    assert traj.max_step_length() <= 1.01 * traj.step * max_speed
    for p in traj.points:
        assert SPHERE.constraint_violation(p) < 1e-12


def test_equilibrium_invariance(sphere_attractor):
    x_star = sphere_attractor.equilibrium
    traj = flow(sphere_attractor.field, 0.0, x_star, 10.0, step=1e-2)
    assert max(SPHERE.dist(p, x_star.coords) for p in traj.points) < 1e-9
    assert sphere_attractor.field.equilibrium_residual() < 1e-10


def test_integrator_fourth_order(sphere_attractor):
    x0 = _sphere_start(1.0)

    def endpoint_error(step):
        traj = flow(sphere_attractor.field, 0.0, x0, 1.0, step=step)
        return abs(SPHERE.dist(traj.points[-1], NORTH) - math.exp(-1.0))

    factor = endpoint_error(0.05) / endpoint_error(0.025)
    assert 8.0 <= factor <= 32.0


def test_flow_argument_validation(sphere_attractor):
    with pytest.raises(ValueError):
        flow(sphere_attractor.field, 1.0, _sphere_start(), 0.0)
    with pytest.raises(ValueError):
        flow(sphere_attractor.field, 0.0, _sphere_start(), 1.0, step=-0.1)


def test_nonfinite_field_raises_with_timestamp():
    def bad_rhs(t, x):
        return np.full(2, np.inf) if t > 0.5 else -x

    field = TimeVaryingField(EUCLID, bad_rhs)
    with pytest.raises(IntegrationError) as err:
        flow(field, 0.0, EUCLID.point([1.0, 0.0]), 2.0, step=1e-2)
    assert err.value.t > 0.5


def test_field_output_projected_to_tangent_space(sphere_attractor):
    x = _sphere_start(0.7)
    v = sphere_attractor.field(0.0, x)
    assert abs(float(np.dot(x.coords, v.components))) < 1e-12


# -- semigroup property -----------------------------------------------------------


def test_semigroup_trivial_splits_are_exact(sphere_attractor):
    x0 = _sphere_start()
    assert semigroup_residual(sphere_attractor.field, 0.0, x0, 0.0, 1.0, 1e-2) == 0.0
    assert semigroup_residual(sphere_attractor.field, 0.0, x0, 1.0, 1.0, 1e-2) == 0.0


def test_semigroup_euclidean_closed_form(euclid_linear):
    x0 = EUCLID.point([1.0, 0.4])
    res = semigroup_residual(euclid_linear.field, 0.0, x0, 0.5, 1.0, 1e-2)
    assert res < 1e-9


def test_semigroup_off_grid_splits(sphere_attractor):
    rng = np.random.default_rng(3)
    x0 = _sphere_start(0.8)
    for _ in range(100):
        t_mid = rng.uniform(0.0, 1.0)
        res = semigroup_residual(sphere_attractor.field, 0.0, x0, t_mid, 1.0, 1e-2)
        assert res < 1e-7


def test_semigroup_ordering_validated(sphere_attractor):
    with pytest.raises(ValueError):
        semigroup_residual(sphere_attractor.field, 0.0, _sphere_start(), 2.0, 1.0)


# -- pushforward -------------------------------------------------------------------


def test_pushforward_zero_vector(sphere_attractor):
    x = _sphere_start(0.5)
    v = TangentVector(x, np.zeros(3))
    out = pushforward(sphere_attractor.field, 0.0, x, v, 1.0, step=1e-2)
    assert out.norm == 0.0


def test_pushforward_identity_when_tau_equals_t(sphere_attractor):
    x = _sphere_start(0.5)
    v = TangentVector(x, SPHERE.random_tangent(np.random.default_rng(0), x.coords))
    assert pushforward(sphere_attractor.field, 0.0, x, v, 0.0) is v


def test_pushforward_euclidean_linear_oracle(euclid_linear):
    x = EUCLID.point([0.6, -0.2])
    v = EUCLID.tangent(x, [0.3, 0.4])
    out = pushforward(euclid_linear.field, 0.0, x, v, 1.0, step=1e-3)
    np.testing.assert_allclose(out.components, math.exp(-1.0) * v.components, atol=1e-5)


def test_pushforward_growth_bound(sphere_attractor):
    rng = np.random.default_rng(5)
    region = Region(sphere_attractor.equilibrium, 1.0)
    L = lipschitz_estimate(sphere_attractor.field, region, [0.0], 100, seed=5).inflated()
    for _ in range(30):
        x = ManifoldPoint(SPHERE, region.sample(rng))
        v = TangentVector(x, SPHERE.random_tangent(rng, x.coords))
        tau = rng.uniform(0.1, 1.5)
        out = pushforward(sphere_attractor.field, 0.0, x, v, tau, step=1e-2)
        assert out.norm <= math.exp(L * tau) * v.norm * (1.0 + 1e-3)


# -- Lipschitz estimation -------------------------------------------------------------


def test_lipschitz_zero_field():
    field = TimeVaryingField(SPHERE, lambda t, x: np.zeros(3))
    est = lipschitz_estimate(field, Region(ManifoldPoint(SPHERE, NORTH), 1.0),
                             [0.0], 50, seed=1)
    assert est.transport_constant == 0.0
    assert est.covariant_constant == 0.0


def test_lipschitz_euclidean_linear(euclid_linear):
    est = lipschitz_estimate(euclid_linear.field,
                             Region(EUCLID.point([0.0, 0.0]), 1.0), [0.0], 100, seed=2)
    assert est.transport_constant == pytest.approx(1.0, rel=0.02)
    assert est.covariant_constant == pytest.approx(1.0, rel=0.02)


def test_lipschitz_sphere_attractor(sphere_attractor):
    est = lipschitz_estimate(sphere_attractor.field,
                             Region(sphere_attractor.equilibrium, 1.0),
                             [0.0], 200, seed=3)
    assert est.combined == pytest.approx(1.0, rel=0.05)


def test_lipschitz_transport_below_covariant():
    # A convex region: the covariant bound dominates the transport bound.
    for system, manifold, eq in [
        ("geodesic_attractor", SPHERE, [0.0, 0.0, 1.0]),
        ("geodesic_attractor", Hyperbolic2(), [1.0, 0.0, 0.0]),
    ]:
        spec = make_system(system, manifold, eq, gain=1.0)
        est = lipschitz_estimate(spec.field, Region(spec.equilibrium, 1.0),
                                 [0.0], 300, seed=4)
        assert est.transport_constant <= est.covariant_constant * 1.05


def test_lipschitz_deterministic_and_validated(sphere_attractor):
    region = Region(sphere_attractor.equilibrium, 1.0)
    a = lipschitz_estimate(sphere_attractor.field, region, [0.0], 50, seed=9)
    b = lipschitz_estimate(sphere_attractor.field, region, [0.0], 50, seed=9)
    assert a.transport_constant == b.transport_constant
    assert a.covariant_constant == b.covariant_constant
    with pytest.raises(ValueError):
        lipschitz_estimate(sphere_attractor.field, region, [0.0], 0, seed=1)
    with pytest.raises(ValueError):
        lipschitz_estimate(sphere_attractor.field,
                           Region(sphere_attractor.equilibrium, 4.0), [0.0], 10, seed=1)


# -- contraction envelope ---------------------------------------------------------------


def test_contraction_identical_points_pass(sphere_attractor):
    x = _sphere_start(0.5)
    report = contraction_envelope_check(sphere_attractor.field, 1.0, x, x, 0.0,
                                        [0.0, 1.0, 2.0], step=1e-2)
    assert report.passed
    assert all(r.measured == 0.0 for r in report.rows)


def test_contraction_euclidean_sits_on_lower_envelope(euclid_linear):
    x1 = EUCLID.point([1.0, 0.0])
    x2 = EUCLID.point([-0.3, 0.4])
    taus = np.linspace(0.0, 3.0, 7)
    report = contraction_envelope_check(euclid_linear.field, 1.0, x1, x2, 0.0,
                                        taus, step=1e-2)
    assert report.passed
    d0 = EUCLID.dist(x1.coords, x2.coords)
    for row in report.rows:
        assert abs(row.measured / (d0 * math.exp(-row.tau)) - 1.0) < 1e-8


def test_contraction_sphere_pairs(sphere_attractor):
    rng = np.random.default_rng(11)
    region = Region(sphere_attractor.equilibrium, 1.0)
    L = lipschitz_estimate(sphere_attractor.field, region, [0.0], 100, seed=11).inflated()
    taus = np.linspace(0.0, 3.0, 5)
    for _ in range(20):
        x1 = ManifoldPoint(SPHERE, region.sample(rng))
        x2 = ManifoldPoint(SPHERE, region.sample(rng))
        report = contraction_envelope_check(sphere_attractor.field, L, x1, x2, 0.0,
                                            taus, step=1e-2)
        assert report.passed and not report.flagged


# -- timed lie derivative -----------------------------------------------------------------


def test_lie_derivative_constant_function(sphere_attractor):
    lie = timed_lie_derivative(lambda t, x: 4.2, sphere_attractor.field, 0.0,
                               _sphere_start(0.5))
    assert lie == pytest.approx(0.0, abs=1e-12)


def test_lie_derivative_time_only(sphere_attractor):
    lie = timed_lie_derivative(lambda t, x: t, sphere_attractor.field, 0.3,
                               _sphere_start(0.5))
    assert lie == pytest.approx(1.0, abs=1e-10)


def test_lie_derivative_quadratic_euclidean(euclid_linear):
    V = lambda t, x: float(np.dot(x.coords, x.coords))
    lie = timed_lie_derivative(V, euclid_linear.field, 0.0, EUCLID.point([1.0, 0.0]),
                               h=5e-4)
    assert lie == pytest.approx(-2.0, abs=1e-6)


def test_lie_derivative_one_sided_at_floor(euclid_linear):
    V = lambda t, x: float(np.dot(x.coords, x.coords))
    lie = timed_lie_derivative(V, euclid_linear.field, 0.0, EUCLID.point([1.0, 0.0]),
                               h=1e-4, t_floor=0.0)
    assert lie == pytest.approx(-2.0, abs=1e-3)


def test_distance_rate_matches_transported_field_difference(sphere_attractor):
    # d/dtau d(phi(tau,x1), phi(tau,x2)) at tau=t equals
    # <gamma'(0), P_{x2->x1} f(x2) - f(x1)> on the unit-speed geodesic.
    rng = np.random.default_rng(21)
    field = sphere_attractor.field
    for _ in range(20):
        x1 = SPHERE.exp(NORTH, SPHERE.random_tangent(rng, NORTH, norm=rng.uniform(0.2, 1.0)))
        x2 = SPHERE.exp(NORTH, SPHERE.random_tangent(rng, NORTH, norm=rng.uniform(0.2, 1.0)))
        if SPHERE.dist(x1, x2) < 0.05:
            continue
        h = 1e-4
        a_plus, = flow_samples(field, 0.0, x1, [h], step=h / 4)
        b_plus, = flow_samples(field, 0.0, x2, [h], step=h / 4)
        rev = TimeVaryingField(SPHERE, lambda t, c: -field.eval_raw(-t, c))
        a_minus, = flow_samples(rev, 0.0, x1, [h], step=h / 4)
        b_minus, = flow_samples(rev, 0.0, x2, [h], step=h / 4)
        fd_rate = (SPHERE.dist(a_plus, b_plus) - SPHERE.dist(a_minus, b_minus)) / (2 * h)
        gamma0 = SPHERE.log(x1, x2)
        gamma0 /= SPHERE.norm(x1, gamma0)
        diff = SPHERE.transport(x2, x1, field.eval_raw(0.0, x2)) - field.eval_raw(0.0, x1)
        assert fd_rate == pytest.approx(SPHERE.inner(x1, gamma0, diff), abs=1e-5)


# -- field wrappers -------------------------------------------------------------------------


def test_field_kind_check(sphere_attractor):
    with pytest.raises(Exception):
        sphere_attractor.field(0.0, EUCLID.point([0.0, 0.0]))


def test_with_input_signal_requires_channel(sphere_attractor):
    with pytest.raises(ValueError):
        sphere_attractor.field.with_input_signal(lambda t: np.zeros(2))


def test_trajectory_serialization_and_determinism(sphere_attractor):
    x0 = _sphere_start(0.9)
    a = flow(sphere_attractor.field, 0.0, x0, 1.0, step=1e-2)
    b = flow(sphere_attractor.field, 0.0, x0, 1.0, step=1e-2)
    assert np.array_equal(a.points, b.points)  # bit-identical reruns
    data = a.to_json()
    assert data["kind"] == "sphere2"
    assert len(data["times"]) == len(data["points"])
    header, rows = a.csv_rows()
    assert header == ["t", "c0", "c1", "c2"]
    assert rows[0][0] == 0.0 and len(rows) == len(a)


def test_so3_attractor_flow_decay():
    so3 = SpecialOrthogonal3()
    spec = make_system("geodesic_attractor", so3, np.eye(3), gain=1.0)
    rng = np.random.default_rng(8)
    v0 = so3.random_tangent(rng, np.eye(3), norm=1.0)
    x0 = ManifoldPoint(so3, so3.exp(np.eye(3), v0))
    traj = flow(spec.field, 0.0, x0, 1.0, step=1e-2)
    d1 = so3.dist(traj.points[-1], np.eye(3))
    assert d1 == pytest.approx(math.exp(-1.0), abs=1e-6)
