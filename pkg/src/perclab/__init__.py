"""perclab: a laboratory for coupled bond percolation on finite patches
of transitive graphs.

The package builds deterministic patches of a dozen graph families,
couples Bernoulli bond percolation across densities through shared
uniform edge labels, and layers estimators on top: cluster statistics,
pivotal-point and two-ghost probes, threshold location, ghost-field
bit encodings, lazy random walks with ironing and tube constructions,
and the bookkeeping for multi-scale sprinkling schedules.
"""

from .percolation import (
    ClusterForest,
    Configuration,
    EdgeLabels,
    clusters,
    configuration,
    connected,
    delta,
    piv_event,
    piv_two_param,
    sample_labels,
    sprinkle,
    two_ghost_event,
    wired_connected,
)
from .graphs import (
    BoxPatch,
    GraphFamily,
    GraphPatch,
    TubeSpec,
    build_box,
    build_patch,
    boundary_ratio_scale,
    crossing_hits_exposed,
    distances_from,
    edge_boundary_size,
    exposed_sphere,
    geodesic,
    growth,
    growth_profile,
    low_growth_scales,
    tube,
)

from .estimators import (
    CerfReport,
    McEstimate,
    PcEstimate,
    burnin_b,
    burnin_total,
    cerf_check,
    est_corridor,
    est_pc,
    est_piv,
    est_sphere_connection,
    est_two_ghost,
    est_two_point,
    path_counting_bound,
    to_record,
    two_ghost_slope,
    wilson_interval,
)

from .ghosts import (
    BitsEncoding,
    GhostField,
    PivotalInfluence,
    bits_encoding,
    est_ghost_connection,
    est_pivotal_influence,
    gluing_event_prob,
    gluing_radius,
    sample_ghost,
    snowball_chain,
    two_ghost_coupled_check,
)
from .multiscale import (
    HammingReport,
    PeelTrace,
    Schedule,
    Verdict,
    connection_threshold,
    eval_corridor,
    eval_full_space,
    hamming_bound_check,
    make_schedule,
    orange_peel_trace,
    p_infinity,
    two_point_zone,
    well_separated_set,
)
from .walks import (
    BoundReport,
    IronedPath,
    TruncationError,
    TubeFamily,
    WalkDistribution,
    build_annular_tubes,
    build_radial_tubes,
    cool_inequality_check,
    coupled_pair,
    entropy,
    heat_kernel_exact,
    iron,
    kernel_decay_constant,
    lazy_walk,
    polylog_parameters,
    verify_plentiful,
    vc_check,
)

__version__ = "0.1.0"
