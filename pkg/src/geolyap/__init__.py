"""geolyap: converse Lyapunov constructions on Riemannian manifolds.

A numerical library and CLI that builds flow-integral Lyapunov certificates
for exponentially and asymptotically stable systems on a family of analytic
manifolds (Euclidean space, spheres, SO(3), the hyperbolic plane), and
verifies every inequality the certificates carry with independent numerical
checks.
"""

from .certify import (
    Certificate,
    CertificationReport,
    CheckRow,
    GridSpec,
    ISSReport,
    classify_stability,
    direct_lyapunov_check,
    fit_exponential_envelope,
    input_lipschitz_estimate,
    iss_certify,
    make_certificate,
    run_geometry_suite,
    verify_converse_certificate,
)
from .envelopes import KLEnvelope, PowerLaw, StabilityEnvelope
from .flows import (
    LipschitzEstimate,
    Region,
    TimeVaryingField,
    Trajectory,
    contraction_envelope_check,
    flow,
    flow_samples,
    lipschitz_estimate,
    pushforward,
    semigroup_residual,
    timed_lie_derivative,
)
from .lyapunov import (
    DeltaChoice,
    LyapunovFunction,
    MasseraFunction,
    TheoreticalBounds,
    choose_delta,
    construct_exp_V,
    construct_ugas_V,
    evaluate_V,
    massera_G,
    theoretical_bounds,
)
from .manifolds import (
    CutLocusError,
    Euclidean,
    GeodesicSegment,
    GeometryError,
    Hyperbolic2,
    Manifold,
    ManifoldMismatchError,
    ManifoldPoint,
    Sphere,
    SpecialOrthogonal3,
    TangentVector,
    distance,
    exp_map,
    first_variation_residual,
    first_variation_terms,
    geodesic_point,
    inner,
    log_map,
    manifold_from_name,
    parallel_transport,
)
from .systems import SystemSpec, attach_disturbance, available_systems, make_system

__version__ = "0.1.0"
