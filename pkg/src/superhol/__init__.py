"""Parallel transport, super Wilson loops and holonomy algebras over Grassmann algebras."""
from .algebra import (
    GrassmannElement,
    SuperMatrix,
    gr_body_soul,
    gr_eta_derivative,
    gr_mul,
    sm_exp,
    sm_inverse,
    sm_supercommutator,
    sm_supertrace,
    sm_trace,
)
from .errors import SuperholError
from .galaev import (
    GalaevGenerator,
    compare_spans,
    extract_generator,
    galaev_generators_direct,
    galaev_point,
    transport_derivative_limit,
)
from .geometry import (
    AuxConnectionSpec,
    ChartSpec,
    ConnectionSpec,
    VectorField,
    cov_deriv_curvature,
    curvature_contract,
    curvature_frame,
    differential_matrix,
)
from .holonomy import (
    HolonomyBasis,
    SamplingConfig,
    ambrose_singer_generator,
    base_change,
    lie_closure,
    rect_second_derivative,
    sample_holonomy_algebra,
    verify_parallel_invariance,
)
from .superexpr import (
    SuperFunction,
    VarContext,
    parse_frame_combination,
    parse_superfunction,
    sf_inverse,
    sf_partial,
    sf_power,
    sf_print,
    sf_pullback,
)
from .transport import (
    SPath,
    SPoint,
    TransportOperator,
    TransportOptions,
    body_transport,
    build_polygon,
    build_straight_line,
    build_velocity_path,
    gauge_transform,
    parallel_transport,
    path_ordered_series,
    transport_concat,
    transport_inverse,
    wilson_supertrace,
    wilson_trace,
)

__version__ = "0.1.0"
